#pragma once

#include "attr/geometry.hpp"
#include "attr/image.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace attr {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

// Binary PPM (P6, maxval 255). Values are quantized with round(v*255).
void write_image_ppm(const std::string& path, const Image& im);
Image read_image_ppm(const std::string& path);

// One instance per line: "x1,y1,x2,y2,...,xn,yn" (integers, at least 3
// points). Detection files append ",score" with a fractional score.
struct ScoredPolygon {
  Polygon poly;
  double score = 1.0;
};

void write_annotations(const std::string& path, const std::vector<Polygon>& polys);
std::vector<Polygon> read_annotations(const std::string& path);

void write_detections(const std::string& path, const std::vector<ScoredPolygon>& dets);
std::vector<ScoredPolygon> read_detections(const std::string& path);

// Dataset directory layout: images/{id}.ppm, gts/{id}.txt, manifest.txt.
struct DatasetDir {
  std::string root;
  std::vector<std::string> ids;
};

void write_manifest(const std::string& root, const std::vector<std::string>& ids);
DatasetDir open_dataset(const std::string& root);

std::string image_path(const DatasetDir& d, const std::string& id);
std::string gt_path(const DatasetDir& d, const std::string& id);

}  // namespace attr
