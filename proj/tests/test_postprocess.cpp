#include "attr/postprocess.hpp"

#include <doctest.h>

#include <cmath>

using namespace attr;

namespace {

PyramidGeom simple_geom(int h = 64, int w = 64) {
  Image im = Image::zeros({3, h, w});
  return make_geom(build_pyramid(im, {0.5, 1, 2}, 16), 16);
}

float logit_of(double p) { return static_cast<float>(std::log(p / (1 - p))); }

}  // namespace

TEST_CASE("score_instance follows the confidence rule") {
  // p=1, all logits huge: confidence 1
  std::vector<float> const huge(16, 1e9f);
  CHECK(score_instance(huge.data(), 16, 1.0) == doctest::Approx(1.0));

  // p=0.8 with foreground probs {0.6, 1.0} and background below 0.5
  std::vector<float> mixed{logit_of(0.6), 1e9f, -5.0f, -7.0f};
  CHECK(score_instance(mixed.data(), 4, 0.8) == doctest::Approx(0.64).epsilon(1e-4));

  // nothing above 0.5: confidence 0
  std::vector<float> const cold(16, 0.0f);  // sigmoid(0) = 0.5, not > 0.5
  CHECK(score_instance(cold.data(), 16, 0.9) == 0.0);

  // monotone in p for a fixed mask
  CHECK(score_instance(mixed.data(), 4, 0.9) > score_instance(mixed.data(), 4, 0.3));
}

TEST_CASE("zero-logit model yields no detections") {
  PyramidGeom geom = simple_geom();
  std::vector<std::vector<float>> logits(3, std::vector<float>(
      static_cast<size_t>(geom.e_h * geom.e_w), 0.0f));
  PostprocessOptions opt;
  CHECK(extract_detections(logits, {0.9, 0.9, 0.9}, geom, opt).empty());
}

TEST_CASE("one clean rectangular mask maps back to the image frame") {
  PyramidGeom geom = simple_geom();
  const int eh = geom.e_h, ew = geom.e_w;  // 32x32 for a 64x64 image
  std::vector<std::vector<float>> logits(1, std::vector<float>(
      static_cast<size_t>(eh * ew), -9.0f));
  // rect covering image coords [8,40] x [16,48] -> E cells [4,20) x [8,24)
  for (int y = 8; y < 24; ++y)
    for (int x = 4; x < 20; ++x) logits[0][static_cast<size_t>(y) * ew + x] = 9.0f;

  PostprocessOptions opt;
  auto dets = extract_detections(logits, {0.95}, geom, opt);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].score == doctest::Approx(0.95 * (1.0 / (1.0 + std::exp(-9.0)))).epsilon(1e-3));

  Polygon expect({{8, 16}, {40, 16}, {40, 48}, {8, 48}});
  CHECK(polygon_iou(dets[0].poly, expect, 512) >= 0.95);
  for (const auto& v : dets[0].poly.pts) {
    CHECK(v.x() >= 0);
    CHECK(v.x() <= 64);
    CHECK(v.y() >= 0);
    CHECK(v.y() <= 64);
  }
}

TEST_CASE("two components from one query share its confidence") {
  PyramidGeom geom = simple_geom();
  const int eh = geom.e_h, ew = geom.e_w;
  std::vector<std::vector<float>> logits(1, std::vector<float>(
      static_cast<size_t>(eh * ew), -9.0f));
  for (int y = 4; y < 12; ++y) {
    for (int x = 4; x < 12; ++x) logits[0][static_cast<size_t>(y) * ew + x] = 9.0f;
    for (int x = 20; x < 28; ++x) logits[0][static_cast<size_t>(y) * ew + x] = 9.0f;
  }
  PostprocessOptions opt;
  auto dets = extract_detections(logits, {0.9}, geom, opt);
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].score == doctest::Approx(dets[1].score));

  opt.keep_largest_component = true;
  CHECK(extract_detections(logits, {0.9}, geom, opt).size() == 1);
}

TEST_CASE("detections below the confidence threshold are dropped and order is sorted") {
  PyramidGeom geom = simple_geom();
  const int eh = geom.e_h, ew = geom.e_w;
  auto blob = [&](float lo) {
    std::vector<float> l(static_cast<size_t>(eh * ew), -9.0f);
    for (int y = 6; y < 16; ++y)
      for (int x = 6; x < 16; ++x) l[static_cast<size_t>(y) * ew + x] = lo;
    return l;
  };
  std::vector<std::vector<float>> logits{blob(9.0f), blob(9.0f), blob(9.0f)};
  PostprocessOptions opt;
  opt.conf_thresh = 0.5;
  auto dets = extract_detections(logits, {0.9, 0.2, 0.7}, geom, opt);
  REQUIRE(dets.size() == 2);  // p=0.2 is dropped
  CHECK(dets[0].score >= dets[1].score);
}
