#pragma once

#include "attr/dataset_io.hpp"

#include <string>
#include <vector>

namespace attr {

struct ImageEval {
  std::string id;
  std::vector<ScoredPolygon> dets;
  std::vector<Polygon> gts;
};

struct ImageCounts {
  std::string id;
  int tp = 0, n_det = 0, n_gt = 0;
  double tiou_recall_sum = 0, tiou_precision_sum = 0;
};

struct EvalReport {
  double precision = 0, recall = 0, f_measure = 0;
  double tiou_precision = 0, tiou_recall = 0, tiou_f = 0;
  int tp = 0, n_det = 0, n_gt = 0;
  std::vector<ImageCounts> per_image;

  std::string to_key_values() const;
  std::string to_table() const;
};

// Standard protocol: detections in descending confidence greedily claim the
// unused gt with the highest IoU >= iou_thresh. The TIoU variant weighs each
// matched pair by gt coverage (recall side) and detection compactness
// (precision side) on the same matching.
EvalReport evaluate(const std::vector<ImageEval>& images, double iou_thresh = 0.5,
                    int raster_res = 512);

}  // namespace attr
