#pragma once

#include "attr/dataset_io.hpp"
#include "attr/encoder.hpp"

#include <vector>

namespace attr {

// confidence = class probability * mean of foreground mask probabilities
// (cells with sigmoid > 0.5); 0 when the foreground is empty.
double score_instance(const float* mask_logits, std::int64_t hw, double p);

struct PostprocessOptions {
  double conf_thresh = 0.5;
  bool keep_largest_component = false;
};

// Thresholds each query's mask at 0.5 on the text-embedding grid, traces the
// components to polygons, and maps them back to base-image coordinates
// (un-padding included). One query with several components yields several
// detections sharing the query's confidence.
std::vector<ScoredPolygon> extract_detections(const std::vector<std::vector<float>>& mask_logits,
                                              const std::vector<double>& class_probs,
                                              const PyramidGeom& geom,
                                              const PostprocessOptions& opt);

}  // namespace attr
