#pragma once

#include "attr/model.hpp"
#include "attr/postprocess.hpp"

#include <cmath>

namespace attr {

inline std::vector<ScoredPolygon> scale_detections(std::vector<ScoredPolygon> dets, double fx,
                                                   double fy) {
  for (auto& d : dets)
    for (auto& p : d.poly.pts) {
      p.x() *= fx;
      p.y() *= fy;
    }
  return dets;
}

// Greedy polygon NMS: keep the higher-confidence of any pair overlapping
// beyond iou_thresh.
inline std::vector<ScoredPolygon> polygon_nms(std::vector<ScoredPolygon> dets, double iou_thresh,
                                              int raster_res = 256) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const ScoredPolygon& a, const ScoredPolygon& b) { return a.score > b.score; });
  std::vector<ScoredPolygon> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (polygon_iou(d.poly, k.poly, raster_res) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// Full-image inference: optional shorter-side resize, forward pass, mask
// thresholding, and mapping back to the input image's pixel frame.
inline std::vector<ScoredPolygon> detect_image(const Detector<float>& model, const Image& image,
                                               const PostprocessOptions& opt,
                                               int short_side = 0) {
  const int h = image_h(image), w = image_w(image);
  Image input = image;
  double fx = 1.0, fy = 1.0;
  if (short_side > 0 && std::min(h, w) != short_side) {
    const double s = static_cast<double>(short_side) / std::min(h, w);
    const int nh = std::max(32, static_cast<int>(std::lround(h * s)));
    const int nw = std::max(32, static_cast<int>(std::lround(w * s)));
    input = image_resize(image, nh, nw);
    fx = static_cast<double>(w) / nw;
    fy = static_cast<double>(h) / nh;
  }
  ForwardOut<float> fwd = model.forward(input);
  const auto& snap = fwd.snapshots.back();
  const int n = snap.mask_logits.dim(0);
  const int hw = snap.mask_logits.dim(1);
  std::vector<std::vector<float>> logits(static_cast<size_t>(n));
  std::vector<double> probs(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    const float* row = snap.mask_logits.data() + static_cast<std::int64_t>(t) * hw;
    logits[static_cast<size_t>(t)].assign(row, row + hw);
    const double x = static_cast<double>(snap.cls_logits.at(t));
    probs[static_cast<size_t>(t)] =
        x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  auto dets = extract_detections(logits, probs, fwd.geom, opt);
  return scale_detections(std::move(dets), fx, fy);
}

}  // namespace attr
