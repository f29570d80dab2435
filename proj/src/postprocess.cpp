#include "attr/postprocess.hpp"

#include <algorithm>
#include <cmath>

namespace attr {

double score_instance(const float* mask_logits, std::int64_t hw, double p) {
  double acc = 0;
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < hw; ++i) {
    const double x = static_cast<double>(mask_logits[i]);
    const double prob = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    if (prob > 0.5) {
      acc += prob;
      ++n;
    }
  }
  if (n == 0) return 0.0;
  return p * (acc / static_cast<double>(n));
}

std::vector<ScoredPolygon> extract_detections(const std::vector<std::vector<float>>& mask_logits,
                                              const std::vector<double>& class_probs,
                                              const PyramidGeom& geom,
                                              const PostprocessOptions& opt) {
  std::vector<ScoredPolygon> out;
  const int eh = geom.e_h, ew = geom.e_w;
  // content extent on the E grid (cells whose center maps inside the image)
  const auto& lastl = geom.levels[static_cast<size_t>(geom.last)];
  const int content_w = std::min(
      ew, static_cast<int>(std::ceil(static_cast<double>(lastl.resized_w) / kTextEmbedStride)));
  const int content_h = std::min(
      eh, static_cast<int>(std::ceil(static_cast<double>(lastl.resized_h) / kTextEmbedStride)));

  for (size_t t = 0; t < mask_logits.size(); ++t) {
    const auto& logits = mask_logits[t];
    const double conf = score_instance(logits.data(), static_cast<std::int64_t>(logits.size()),
                                       class_probs[t]);
    if (conf < opt.conf_thresh) continue;

    BinaryGrid grid(ew, eh);
    for (int y = 0; y < content_h; ++y)
      for (int x = 0; x < content_w; ++x)
        grid.at(x, y) = logits[static_cast<size_t>(y) * ew + x] > 0.0f ? 1 : 0;

    std::vector<Polygon> contours = trace_contours(grid);
    if (contours.empty()) continue;
    if (opt.keep_largest_component && contours.size() > 1) {
      auto it = std::max_element(contours.begin(), contours.end(),
                                 [](const Polygon& a, const Polygon& b) {
                                   return polygon_area(a) < polygon_area(b);
                                 });
      contours = {*it};
    }
    for (auto& c : contours) {
      std::vector<Vec2> pts;
      pts.reserve(c.pts.size());
      for (const auto& v : c.pts) {
        Vec2 b = geom.e_to_base(v);
        b.x() = std::clamp(b.x(), 0.0, static_cast<double>(geom.base_w));
        b.y() = std::clamp(b.y(), 0.0, static_cast<double>(geom.base_h));
        pts.push_back(b);
      }
      try {
        out.push_back({Polygon(pts), conf});
      } catch (const GeometryError&) {
        // collapsed after clamping; skip
      }
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredPolygon& a, const ScoredPolygon& b) { return a.score > b.score; });
  return out;
}

}  // namespace attr
