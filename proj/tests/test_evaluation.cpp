#include "attr/evaluation.hpp"
#include "attr/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace attr;

namespace {

Polygon rect(double x0, double y0, double x1, double y1) {
  return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
}

ScoredPolygon det(const Polygon& p, double s) { return {p, s}; }

}  // namespace

TEST_CASE("perfect detections score 1 everywhere") {
  ImageEval img;
  img.id = "a";
  img.gts = {rect(0, 0, 10, 10), rect(20, 20, 40, 28)};
  for (const auto& g : img.gts) img.dets.push_back(det(g, 0.9));
  EvalReport rep = evaluate({img});
  CHECK(rep.precision == doctest::Approx(1.0));
  CHECK(rep.recall == doctest::Approx(1.0));
  CHECK(rep.f_measure == doctest::Approx(1.0));
  CHECK(rep.tiou_precision == doctest::Approx(1.0).epsilon(0.01));
  CHECK(rep.tiou_recall == doctest::Approx(1.0).epsilon(0.01));
  CHECK(rep.tiou_f == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("no detections: precision defined as 0") {
  ImageEval img;
  img.id = "a";
  img.gts = {rect(0, 0, 10, 10)};
  EvalReport rep = evaluate({img});
  CHECK(rep.precision == 0.0);
  CHECK(rep.recall == 0.0);
  CHECK(rep.f_measure == 0.0);
}

TEST_CASE("partial recall protocol arithmetic") {
  ImageEval img;
  img.id = "a";
  img.gts = {rect(0, 0, 10, 10), rect(30, 30, 40, 40)};
  img.dets = {det(rect(0, 0, 10, 8), 0.9)};  // IoU 0.8 with gt 0
  EvalReport rep = evaluate({img});
  CHECK(rep.precision == doctest::Approx(1.0));
  CHECK(rep.recall == doctest::Approx(0.5));
  CHECK(rep.f_measure == doctest::Approx(2.0 / 3));
}

TEST_CASE("tiou terms for a contained half-area detection") {
  ImageEval img;
  img.id = "a";
  img.gts = {rect(0, 0, 10, 10)};
  img.dets = {det(rect(0, 0, 10, 5), 0.9)};  // half of the gt, fully inside
  EvalReport rep = evaluate({img}, /*iou_thresh=*/0.4);
  REQUIRE(rep.tp == 1);
  // IoU = 0.5, coverage = 0.5 -> recall term 0.25; inside fraction 1 -> precision term 0.5
  CHECK(rep.tiou_recall == doctest::Approx(0.25).epsilon(0.02));
  CHECK(rep.tiou_precision == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("tiou never exceeds the standard metric") {
  Rng rng(90);
  for (int trial = 0; trial < 30; ++trial) {
    ImageEval img;
    img.id = "t";
    const int ng = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < ng; ++i) {
      const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
      img.gts.push_back(rect(x, y, x + rng.uniform(8, 25), y + rng.uniform(8, 25)));
    }
    const int nd = static_cast<int>(rng.below(5));
    for (int i = 0; i < nd; ++i) {
      const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
      img.dets.push_back(det(rect(x, y, x + rng.uniform(8, 25), y + rng.uniform(8, 25)),
                             rng.uniform(0.1, 1.0)));
    }
    EvalReport rep = evaluate({img});
    CHECK(rep.tiou_precision <= rep.precision + 1e-9);
    CHECK(rep.tiou_recall <= rep.recall + 1e-9);
    CHECK(rep.tiou_f <= rep.f_measure + 1e-9);
  }
}

TEST_CASE("metrics invariant to detection order given distinct confidences") {
  ImageEval img;
  img.id = "a";
  img.gts = {rect(0, 0, 10, 10), rect(20, 0, 30, 10)};
  img.dets = {det(rect(0, 0, 10, 10), 0.9), det(rect(20, 0, 30, 10), 0.8),
              det(rect(1, 1, 9, 9), 0.7)};
  EvalReport a = evaluate({img});
  std::reverse(img.dets.begin(), img.dets.end());
  EvalReport b = evaluate({img});
  CHECK(a.precision == doctest::Approx(b.precision));
  CHECK(a.recall == doctest::Approx(b.recall));
  CHECK(a.tiou_f == doctest::Approx(b.tiou_f));
}

TEST_CASE("a spurious zero-overlap detection lowers precision, keeps recall") {
  ImageEval img;
  img.id = "a";
  img.gts = {rect(0, 0, 10, 10)};
  img.dets = {det(rect(0, 0, 10, 10), 0.9)};
  EvalReport before = evaluate({img});
  img.dets.push_back(det(rect(50, 50, 60, 60), 0.8));
  EvalReport after = evaluate({img});
  CHECK(after.precision < before.precision);
  CHECK(after.recall == doctest::Approx(before.recall));
}

TEST_CASE("report serialization carries both metric blocks") {
  ImageEval img;
  img.id = "x";
  img.gts = {rect(0, 0, 10, 10)};
  img.dets = {det(rect(0, 0, 10, 10), 0.99)};
  EvalReport rep = evaluate({img});
  const std::string kv = rep.to_key_values();
  CHECK(kv.find("precision = ") != std::string::npos);
  CHECK(kv.find("tiou_f = ") != std::string::npos);
  CHECK(kv.find("image.x = ") != std::string::npos);
  const std::string table = rep.to_table();
  CHECK(table.find("standard") != std::string::npos);
  CHECK(table.find("tiou") != std::string::npos);
}
