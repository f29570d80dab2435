#include "attr/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace attr {

EvalReport evaluate(const std::vector<ImageEval>& images, double iou_thresh, int raster_res) {
  EvalReport rep;
  for (const auto& img : images) {
    ImageCounts ic;
    ic.id = img.id;
    ic.n_det = static_cast<int>(img.dets.size());
    ic.n_gt = static_cast<int>(img.gts.size());

    std::vector<size_t> order(img.dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return img.dets[a].score > img.dets[b].score;
    });

    std::vector<char> used(img.gts.size(), 0);
    for (size_t oi : order) {
      const Polygon& det = img.dets[oi].poly;
      int best_gt = -1;
      double best_iou = 0;
      for (size_t j = 0; j < img.gts.size(); ++j) {
        if (used[j]) continue;
        const double iou = polygon_iou(det, img.gts[j], raster_res);
        if (iou > best_iou) {
          best_iou = iou;
          best_gt = static_cast<int>(j);
        }
      }
      if (best_gt < 0 || best_iou < iou_thresh) continue;
      used[static_cast<size_t>(best_gt)] = 1;
      ++ic.tp;
      const auto frac = intersection_fractions(det, img.gts[static_cast<size_t>(best_gt)], raster_res);
      // frac = (inter/|det|, inter/|gt|)
      ic.tiou_recall_sum += best_iou * frac.second;
      ic.tiou_precision_sum += best_iou * frac.first;
    }

    rep.tp += ic.tp;
    rep.n_det += ic.n_det;
    rep.n_gt += ic.n_gt;
    rep.per_image.push_back(std::move(ic));
  }

  double tiou_r_sum = 0, tiou_p_sum = 0;
  for (const auto& ic : rep.per_image) {
    tiou_r_sum += ic.tiou_recall_sum;
    tiou_p_sum += ic.tiou_precision_sum;
  }

  rep.precision = rep.n_det > 0 ? static_cast<double>(rep.tp) / rep.n_det : 0.0;
  rep.recall = rep.n_gt > 0 ? static_cast<double>(rep.tp) / rep.n_gt : 0.0;
  rep.f_measure = (rep.precision + rep.recall) > 0
                      ? 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
                      : 0.0;
  rep.tiou_recall = rep.n_gt > 0 ? tiou_r_sum / rep.n_gt : 0.0;
  rep.tiou_precision = rep.n_det > 0 ? tiou_p_sum / rep.n_det : 0.0;
  rep.tiou_f = (rep.tiou_precision + rep.tiou_recall) > 0
                   ? 2 * rep.tiou_precision * rep.tiou_recall /
                         (rep.tiou_precision + rep.tiou_recall)
                   : 0.0;
  return rep;
}

std::string EvalReport::to_key_values() const {
  std::ostringstream os;
  char buf[64];
  auto put = [&](const char* k, double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    os << k << " = " << buf << "\n";
  };
  put("precision", precision);
  put("recall", recall);
  put("f_measure", f_measure);
  put("tiou_precision", tiou_precision);
  put("tiou_recall", tiou_recall);
  put("tiou_f", tiou_f);
  os << "true_positives = " << tp << "\n";
  os << "detections = " << n_det << "\n";
  os << "ground_truths = " << n_gt << "\n";
  for (const auto& ic : per_image)
    os << "image." << ic.id << " = tp:" << ic.tp << " det:" << ic.n_det << " gt:" << ic.n_gt
       << "\n";
  return os.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[160];
  os << "          |      P      R      F\n";
  std::snprintf(buf, sizeof(buf), "standard  | %6.4f %6.4f %6.4f\n", precision, recall, f_measure);
  os << buf;
  std::snprintf(buf, sizeof(buf), "tiou      | %6.4f %6.4f %6.4f\n", tiou_precision, tiou_recall,
                tiou_f);
  os << buf;
  os << "tp=" << tp << " det=" << n_det << " gt=" << n_gt << "\n";
  return os.str();
}

}  // namespace attr
