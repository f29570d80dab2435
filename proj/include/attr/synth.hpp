#pragma once

#include "attr/dataset_io.hpp"
#include "attr/geometry.hpp"
#include "attr/image.hpp"
#include "attr/rng.hpp"

#include <cstdint>
#include <vector>

namespace attr {

// Synthetic scene generation. Word-like instances are glyph runs placed on a
// straight or curved baseline; the ground truth is the surrounding ribbon
// polygon. Generation is a pure function of (seed, cfg) and uses only
// correctly-rounded float arithmetic, so emitted images are bit-identical
// across platforms.
struct SynthConfig {
  int h = 96;
  int w = 96;
  int min_instances = 1;
  int max_instances = 4;
  double curve_prob = 0.3;
  double small_text_prob = 0.3;
};

struct SceneSample {
  Image image;  // [3 x H x W], values in [0,1]
  std::vector<Polygon> instances;
  std::uint64_t seed = 0;
};

SceneSample generate_sample(std::uint64_t seed, const SynthConfig& cfg);

// Augmentation: random scale in [0.5,2], rotation in ±10 deg, horizontal flip
// with p=0.5, and a crop that keeps at least one instance fully in frame.
// Split into draw/apply so tests can force neutral parameters.
struct AugmentParams {
  double scale = 1.0;
  double rot = 0.0;  // radians
  bool hflip = false;
  double tx = 0.0;   // output-frame translation (crop offset)
  double ty = 0.0;
};

AugmentParams draw_augment_params(const SceneSample& s, Rng& rng);
SceneSample apply_augment(const SceneSample& s, const AugmentParams& p);
SceneSample augment(const SceneSample& s, std::uint64_t seed);

}  // namespace attr
