#include "test_util.hpp"

#include "attr/pyramid.hpp"

#include <doctest.h>

using namespace attr;

namespace {

Image const_image(int h, int w, float v) {
  Image im = Image::zeros({3, h, w});
  im.array() = v;
  return im;
}

}  // namespace

TEST_CASE("build_pyramid level sizes and padding") {
  Image im = const_image(64, 64, 0.5f);
  ImagePyramid pyr = build_pyramid(im, {0.5, 1, 2});
  REQUIRE(pyr.levels.size() == 3);
  CHECK(pyr.levels[0].resized_h == 32);
  CHECK(pyr.levels[1].resized_h == 64);
  CHECK(pyr.levels[2].resized_h == 128);
  CHECK(image_h(pyr.levels[0].image) == 32);
  CHECK(image_h(pyr.levels[2].image) == 128);

  ImagePyramid single = build_pyramid(im, {1.0});
  REQUIRE(single.levels.size() == 1);
  for (std::int64_t i = 0; i < im.size(); ++i)
    CHECK(single.levels[0].image.at(i) == im.at(i));

  Image odd = const_image(50, 70, 0.2f);
  ImagePyramid p = build_pyramid(odd, {0.5, 1, 2}, 16);
  for (const auto& lvl : p.levels) {
    CHECK(image_h(lvl.image) % 16 == 0);
    CHECK(image_w(lvl.image) % 16 == 0);
  }

  CHECK_THROWS_AS(build_pyramid(const_image(16, 16, 0.f), {1.0}), TensorError);
}

TEST_CASE("linear projection token arithmetic and the patch oracle") {
  ParamStore<double> ps;
  Rng rng(31);
  LinearProjection<double> lp(ps, 8, rng);

  Rng drng(32);
  Tensor<double> img = testutil::rand_tensor({3, 32, 32}, drng, 0.5, false);
  LevelFeatures<double> f = lp.project(img);
  CHECK(f.grid_h * f.grid_w == 4);        // n0 = HW/P^2
  CHECK(f.tokens.dim(0) == 4);
  CHECK(f.tokens.dim(1) == 8);

  // single patch equals linear(flatten(patch)) computed by a hand loop
  const auto& w = ps.get("proj/lp/w");
  const auto& b = ps.get("proj/lp/b");
  for (int out_c = 0; out_c < 8; ++out_c) {
    double acc = b.at(out_c);
    int d = 0;
    for (int ch = 0; ch < 3; ++ch)
      for (int py = 0; py < 16; ++py)
        for (int px = 0; px < 16; ++px) {
          // patch (1,0): rows 16.., cols 0..
          acc += img.at((static_cast<std::int64_t>(ch) * 32 + 16 + py) * 32 + px) *
                 w.at2(d++, out_c);
        }
    CHECK(f.tokens.at2(2, out_c) == doctest::Approx(acc).epsilon(1e-12));
  }

  // constant image: every token identical
  LevelFeatures<double> fc = lp.project(const_image(32, 32, 0.3f).cast<double>());
  for (int t = 1; t < 4; ++t)
    for (int c = 0; c < 8; ++c) CHECK(fc.tokens.at2(t, c) == doctest::Approx(fc.tokens.at2(0, c)));
}

TEST_CASE("conv projection grid and structural parity with phi_lp") {
  ParamStore<double> ps;
  Rng rng(33);
  ConvProjection<double> cp(ps, 8, rng);
  LinearProjection<double> lp(ps, 8, rng);

  Rng drng(34);
  Tensor<double> img = testutil::rand_tensor({3, 64, 64}, drng, 0.5, false);
  LevelFeatures<double> fc = cp.project(img);
  CHECK(fc.grid_h == 4);
  CHECK(fc.grid_w == 4);
  CHECK(fc.tokens.dim(0) == 16);

  LevelFeatures<double> fl = lp.project(img);
  CHECK(fl.tokens.dim(0) == fc.tokens.dim(0));  // same token count and dim
  CHECK(fl.tokens.dim(1) == fc.tokens.dim(1));
  CHECK(fc.early_map.defined());
  CHECK(cp.has_early_map());
  CHECK_FALSE(lp.has_early_map());
}

TEST_CASE("conv projection gradient check (<= 1e-5)") {
  ParamStore<double> ps;
  Rng rng(35);
  ConvProjection<double> cp(ps, 8, rng);
  Rng drng(36);
  Tensor<double> img = testutil::rand_tensor({3, 32, 32}, drng, 0.5, true);
  Tensor<double> w = testutil::rand_tensor({4, 8}, drng, 1.0, false);

  std::vector<Tensor<double>> inputs{img};
  for (auto& [name, t] : ps.all())
    if (name.rfind("proj/conv", 0) == 0) inputs.push_back(t);
  const double err = testutil::grad_check(
      [&]() { return sum_all(mul(cp.project(img).tokens, w)); }, inputs, 4);
  CHECK(err <= 1e-5);
}

TEST_CASE("residual projection: strides, degenerate block, and 2-vs-3 block ratio") {
  Rng rng(37);
  {
    ParamStore<double> ps;
    Rng ir(38);
    ResProjection<double> rp(ps, 8, 3, rng);
    CHECK(rp.token_stride() == 16);
    Tensor<double> img = testutil::rand_tensor({3, 32, 32}, ir, 0.5, false);
    LevelFeatures<double> f = rp.project(img);
    CHECK(f.grid_h == 2);
    CHECK(f.tokens.dim(0) == 4);
    CHECK(f.early_map.dim(1) == 16);  // stride-2 early map
  }
  {
    ParamStore<double> ps;
    ResProjection<double> rp(ps, 8, 2, rng);
    CHECK(rp.token_stride() == 8);
    Tensor<double> img = testutil::rand_tensor({3, 32, 32}, rng, 0.5, false);
    CHECK(rp.project(img).tokens.dim(0) == 16);  // 4:1 tokens vs 3 blocks
  }
  {
    // zero final conv -> block output equals its skip path
    ParamStore<double> ps;
    ResBlock<double> blk(ps, "b", 4, 6, rng);
    blk.w2.array() = 0.0;
    Tensor<double> x = testutil::rand_tensor({4, 8, 8}, rng, 0.5, false);
    Tensor<double> y = blk.forward(x);
    Tensor<double> skip = conv2d(x, blk.wskip, 2, 0);
    REQUIRE(y.shape() == skip.shape());
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == skip.at(i));
  }
}

TEST_CASE("shared weights across pyramid levels") {
  ParamStore<double> ps;
  Rng rng(39);
  LinearProjection<double> lp(ps, 8, rng);
  const std::int64_t n_params = ps.total_size();

  Image im = const_image(64, 64, 0.4f);
  ImagePyramid pyr = build_pyramid(im, {0.5, 1, 2});
  ScaleFeatures<double> sf = project_pyramid(pyr, lp);
  CHECK(ps.total_size() == n_params);  // one parameter set regardless of depth
  REQUIRE(sf.levels.size() == 3);

  // constant image: identical token values at every level
  const Tensor<double>& t0 = sf.levels[0].tokens;
  for (const auto& lvl : sf.levels)
    for (int c = 0; c < 8; ++c) CHECK(lvl.tokens.at2(0, c) == doctest::Approx(t0.at2(0, c)));

  int total = 0;
  for (const auto& lvl : sf.levels) total += lvl.grid_h * lvl.grid_w;
  CHECK(total == sf.total_tokens());
  CHECK(total == 4 + 16 + 64);
}

TEST_CASE("early map is linear in image brightness before the norm") {
  ParamStore<double> ps;
  Rng rng(40);
  ResProjection<double> rp(ps, 8, 3, rng);
  Rng drng(41);
  Tensor<double> img = testutil::rand_tensor({3, 32, 32}, drng, 0.25, false);
  img.array() += 0.5;  // keep positive
  Tensor<double> doubled = img.clone();
  doubled.array() *= 2.0;

  Tensor<double> e1 = rp.project(img).early_map;
  Tensor<double> e2 = rp.project(doubled).early_map;
  for (std::int64_t i = 0; i < e1.size(); ++i)
    CHECK(e2.at(i) == doctest::Approx(2.0 * e1.at(i)).epsilon(1e-9));
}
