#include "test_util.hpp"

#include "attr/encoder.hpp"

#include <doctest.h>

#include <cmath>

using namespace attr;

namespace {

// Plain triple-loop reference for the deformable attention kernel: same
// parameters, computed with nested loops over (head, level, point).
template <typename S>
Tensor<S> msda_reference(const Msda<S>& m, const Tensor<S>& queries,
                         const std::vector<double>& refs,
                         const std::vector<Tensor<S>>& level_tokens,
                         const std::vector<std::pair<int, int>>& grids) {
  const int nq = queries.dim(0), c = m.c, heads = m.heads, pts = m.points, nl = m.n_levels;
  const int dh = c / heads;
  auto lin = [&](const Linear<S>& l, const Tensor<S>& x) {
    Tensor<S> out = Tensor<S>::zeros({x.dim(0), l.w.dim(1)});
    for (int r = 0; r < x.dim(0); ++r)
      for (int o = 0; o < l.w.dim(1); ++o) {
        double acc = static_cast<double>(l.b.at(o));
        for (int i = 0; i < x.dim(1); ++i)
          acc += static_cast<double>(x.at2(r, i)) * static_cast<double>(l.w.at2(i, o));
        out.at2(r, o) = static_cast<S>(acc);
      }
    return out;
  };
  Tensor<S> offs = lin(m.offset, queries);
  Tensor<S> wlog = lin(m.weight, queries);
  std::vector<Tensor<S>> values;
  for (const auto& t : level_tokens) values.push_back(lin(m.value_proj, t));

  auto sample = [&](int l, int head, double x, double y, int ch_in_head) {
    const int gh = grids[static_cast<size_t>(l)].first, gw = grids[static_cast<size_t>(l)].second;
    const double gx = x * gw - 0.5, gy = y * gh - 0.5;
    const int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
    const double fx = gx - x0, fy = gy - y0;
    double acc = 0;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int xx = x0 + dx, yy = y0 + dy;
        if (xx < 0 || xx >= gw || yy < 0 || yy >= gh) continue;
        const double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
        acc += wgt *
               static_cast<double>(values[static_cast<size_t>(l)].at2(yy * gw + xx, head * dh + ch_in_head));
      }
    return acc;
  };

  Tensor<S> concat_heads = Tensor<S>::zeros({nq, c});
  for (int q = 0; q < nq; ++q) {
    for (int h = 0; h < heads; ++h) {
      // softmax over the L*K weights of this head
      std::vector<double> w(static_cast<size_t>(nl * pts));
      double mx = -1e300;
      for (int l = 0; l < nl; ++l)
        for (int k = 0; k < pts; ++k) {
          const double v = wlog.at2(q, (h * nl + l) * pts + k);
          w[static_cast<size_t>(l * pts + k)] = v;
          mx = std::max(mx, v);
        }
      double denom = 0;
      for (auto& v : w) {
        v = std::exp(v - mx);
        denom += v;
      }
      for (auto& v : w) v /= denom;

      for (int l = 0; l < nl; ++l) {
        const int gh = grids[static_cast<size_t>(l)].first, gw = grids[static_cast<size_t>(l)].second;
        for (int k = 0; k < pts; ++k) {
          const double ox = offs.at2(q, ((h * nl + l) * pts + k) * 2);
          const double oy = offs.at2(q, ((h * nl + l) * pts + k) * 2 + 1);
          const double x = refs[(static_cast<size_t>(q) * nl + l) * 2] + ox / gw;
          const double y = refs[(static_cast<size_t>(q) * nl + l) * 2 + 1] + oy / gh;
          for (int ch = 0; ch < dh; ++ch)
            concat_heads.at2(q, h * dh + ch) += static_cast<S>(
                w[static_cast<size_t>(l * pts + k)] * sample(l, h, x, y, ch));
        }
      }
    }
  }
  return lin(m.out_proj, concat_heads);
}

struct MsdaFixture {
  ParamStore<double> ps;
  Msda<double> msda;
  std::vector<Tensor<double>> tokens;
  std::vector<std::pair<int, int>> grids;
  Tensor<double> queries;
  std::vector<double> refs;

  MsdaFixture(int c, int heads, int pts, std::uint64_t seed, bool random_offsets = true) {
    Rng rng(seed);
    msda = Msda<double>(ps, "m", c, heads, pts, 3, rng);
    if (random_offsets) {
      testutil_randomize(msda.offset.w, rng, 0.2);
      testutil_randomize(msda.offset.b, rng, 0.8);
      testutil_randomize(msda.weight.w, rng, 0.5);
      testutil_randomize(msda.weight.b, rng, 0.5);
    }
    grids = {{2, 3}, {3, 4}, {5, 6}};
    for (auto [h, w] : grids) tokens.push_back(testutil::rand_tensor({h * w, c}, rng, 1.0, true));
    const int nq = 7;
    queries = testutil::rand_tensor({nq, c}, rng, 1.0, true);
    for (int q = 0; q < nq; ++q)
      for (int l = 0; l < 3; ++l) {
        refs.push_back(rng.uniform(0.1, 0.9));
        refs.push_back(rng.uniform(0.1, 0.9));
      }
  }

  static void testutil_randomize(Tensor<double>& t, Rng& rng, double s) {
    for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-s, s);
  }
};

}  // namespace

TEST_CASE("sine position embedding basics") {
  Tensor<double> e = sine_pos_embed<double>(1, 1, 8);
  // col channels: sin(0)=0, cos(0)=1; row channels likewise
  CHECK(e.at(0) == doctest::Approx(0.0));
  CHECK(e.at(1) == doctest::Approx(1.0));
  CHECK(e.at(4) == doctest::Approx(0.0));
  CHECK(e.at(5) == doctest::Approx(1.0));

  // translation along a row changes only the column half
  Tensor<double> g = sine_pos_embed<double>(4, 6, 16);
  const int r = 2, c0 = 1, c1 = 4;
  for (int ch = 8; ch < 16; ++ch)
    CHECK(g.at2(r * 6 + c0, ch) == doctest::Approx(g.at2(r * 6 + c1, ch)));
  bool any_col_diff = false;
  for (int ch = 0; ch < 8; ++ch)
    any_col_diff = any_col_diff || std::abs(g.at2(r * 6 + c0, ch) - g.at2(r * 6 + c1, ch)) > 1e-6;
  CHECK(any_col_diff);

  for (std::int64_t i = 0; i < g.size(); ++i) {
    CHECK(g.at(i) <= 1.0);
    CHECK(g.at(i) >= -1.0);
  }

  CHECK_THROWS_AS(sine_pos_embed<double>(2, 2, 6), TensorError);
}

TEST_CASE("pos embedding dot products decay with distance on a 16x16 grid") {
  Tensor<double> g = sine_pos_embed<double>(16, 16, 32);
  auto dot = [&](int a, int b) {
    double acc = 0;
    for (int ch = 0; ch < 32; ++ch) acc += g.at2(a, ch) * g.at2(b, ch);
    return acc;
  };
  // band averages: near pairs correlate more than distant ones
  double near_sum = 0, far_sum = 0;
  int near_n = 0, far_n = 0;
  for (int a = 0; a < 256; ++a)
    for (int b = a + 1; b < 256; ++b) {
      const double dy = a / 16 - b / 16, dx = a % 16 - b % 16;
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (dist <= 2.0) {
        near_sum += dot(a, b);
        ++near_n;
      } else if (dist >= 10.0) {
        far_sum += dot(a, b);
        ++far_n;
      }
    }
  CHECK(near_sum / near_n > far_sum / far_n);
}

TEST_CASE("msda zero-init: uniform mean of reference-point samples, projected") {
  MsdaFixture f(8, 2, 2, 51, /*random_offsets=*/false);
  // zero the spread bias and make the projections pass-through
  f.msda.offset.b.array() = 0.0;
  f.msda.value_proj.w.array() = 0.0;
  f.msda.out_proj.w.array() = 0.0;
  for (int i = 0; i < 8; ++i) {
    f.msda.value_proj.w.at2(i, i) = 1.0;
    f.msda.out_proj.w.at2(i, i) = 1.0;
  }
  f.msda.value_proj.b.array() = 0.0;
  f.msda.out_proj.b.array() = 0.0;

  Tensor<double> out = f.msda.forward(f.queries, f.refs, f.tokens, f.grids);

  // expectation: average over levels of the bilinear sample at the reference
  for (int q = 0; q < f.queries.dim(0); ++q)
    for (int ch = 0; ch < 8; ++ch) {
      double acc = 0;
      for (int l = 0; l < 3; ++l) {
        Tensor<double> pt = Tensor<double>::from_data(
            {1, 2}, {f.refs[(static_cast<size_t>(q) * 3 + l) * 2],
                     f.refs[(static_cast<size_t>(q) * 3 + l) * 2 + 1]});
        Tensor<double> map = tokens_to_map(f.tokens[static_cast<size_t>(l)],
                                           f.grids[static_cast<size_t>(l)].first,
                                           f.grids[static_cast<size_t>(l)].second);
        acc += bilinear_sample(map, pt).at2(0, ch);
      }
      CHECK(out.at2(q, ch) == doctest::Approx(acc / 3.0).epsilon(1e-9));
    }
}

TEST_CASE("msda single level single point reduces to the sampled value") {
  ParamStore<double> ps;
  Rng rng(52);
  Msda<double> m(ps, "m", 4, 1, 1, 1, rng);
  m.offset.b.array() = 0.0;
  m.value_proj.w.array() = 0.0;
  m.out_proj.w.array() = 0.0;
  for (int i = 0; i < 4; ++i) {
    m.value_proj.w.at2(i, i) = 1.0;
    m.out_proj.w.at2(i, i) = 1.0;
  }
  m.value_proj.b.array() = 0.0;
  m.out_proj.b.array() = 0.0;

  std::vector<std::pair<int, int>> grids{{4, 4}};
  std::vector<Tensor<double>> tokens{testutil::rand_tensor({16, 4}, rng, 1.0, false)};
  Tensor<double> q = testutil::rand_tensor({1, 4}, rng, 1.0, false);
  std::vector<double> refs{0.40625, 0.59375};  // an exact cell center

  Tensor<double> out = m.forward(q, refs, tokens, grids);
  // single (level, point) with softmax over one sample: weight is exactly 1
  Tensor<double> map = tokens_to_map(tokens[0], 4, 4);
  Tensor<double> pt = Tensor<double>::from_data({1, 2}, refs);
  Tensor<double> expect = bilinear_sample(map, pt);
  for (int ch = 0; ch < 4; ++ch) CHECK(out.at2(0, ch) == doctest::Approx(expect.at2(0, ch)));
}

TEST_CASE("msda matches the triple-loop brute force within 1e-5") {
  MsdaFixture f(8, 2, 3, 53);
  Tensor<double> fast = f.msda.forward(f.queries, f.refs, f.tokens, f.grids);
  Tensor<double> slow = msda_reference(f.msda, f.queries, f.refs, f.tokens, f.grids);
  REQUIRE(fast.shape() == slow.shape());
  for (std::int64_t i = 0; i < fast.size(); ++i)
    CHECK(fast.at(i) == doctest::Approx(slow.at(i)).epsilon(1e-5));
}

TEST_CASE("msda is permutation-equivariant over queries") {
  MsdaFixture f(8, 2, 2, 54);
  Tensor<double> out = f.msda.forward(f.queries, f.refs, f.tokens, f.grids);

  const int nq = f.queries.dim(0);
  std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
  Tensor<double> qp = gather_rows(f.queries, perm);
  std::vector<double> refs_p;
  for (int i = 0; i < nq; ++i)
    for (int l = 0; l < 3; ++l) {
      refs_p.push_back(f.refs[(static_cast<size_t>(perm[static_cast<size_t>(i)]) * 3 + l) * 2]);
      refs_p.push_back(f.refs[(static_cast<size_t>(perm[static_cast<size_t>(i)]) * 3 + l) * 2 + 1]);
    }
  Tensor<double> out_p = f.msda.forward(qp, refs_p, f.tokens, f.grids);
  for (int i = 0; i < nq; ++i)
    for (int ch = 0; ch < 8; ++ch)
      CHECK(out_p.at2(i, ch) == doctest::Approx(out.at2(perm[static_cast<size_t>(i)], ch)));
}

TEST_CASE("msda gradient check (<= 1e-5)") {
  MsdaFixture f(8, 2, 2, 55);
  Rng rng(56);
  Tensor<double> w = testutil::rand_tensor({7, 8}, rng, 1.0, false);
  std::vector<Tensor<double>> inputs{f.queries, f.tokens[0], f.tokens[1], f.tokens[2]};
  for (auto& [name, t] : f.ps.all()) inputs.push_back(t);
  const double err = testutil::grad_check(
      [&]() { return sum_all(mul(f.msda.forward(f.queries, f.refs, f.tokens, f.grids), w)); },
      inputs, 4);
  CHECK(err <= 1e-5);
}

namespace {

struct EncoderFixture {
  ParamStore<double> ps;
  Encoder<double> enc;
  PyramidGeom geom;
  ScaleFeatures<double> feats;

  EncoderFixture(int c, int units, std::uint64_t seed) {
    Rng rng(seed);
    enc = Encoder<double>(ps, c, units, 2, 2, 3, rng);
    enc.set_update_attention(2, 2);
    enc.bind_text_init(ps, c / 4, rng);

    Image im = Image::zeros({3, 32, 32});
    Rng drng(seed + 1);
    for (std::int64_t i = 0; i < im.size(); ++i)
      im.at(i) = static_cast<float>(drng.uniform(0.0, 1.0));
    ImagePyramid pyr = build_pyramid(im, {0.5, 1, 2}, 16);
    geom = make_geom(pyr, 16);
    for (const auto& lvl : pyr.levels) {
      LevelFeatures<double> lf;
      lf.grid_h = image_h(lvl.image) / 16;
      lf.grid_w = image_w(lvl.image) / 16;
      lf.tokens = testutil::rand_tensor({lf.grid_h * lf.grid_w, c}, drng, 1.0, true);
      lf.early_map = testutil::rand_tensor({c / 4, image_h(lvl.image) / 2, image_w(lvl.image) / 2},
                                           drng, 1.0, true);
      feats.levels.push_back(std::move(lf));
    }
  }
};

}  // namespace

TEST_CASE("encode with zero units is the identity; shapes are preserved") {
  EncoderFixture f(8, 0, 61);
  auto out = f.enc.encode(f.feats, f.geom);
  REQUIRE(out.size() == 3);
  for (int l = 0; l < 3; ++l) {
    REQUIRE(out[static_cast<size_t>(l)].shape() == f.feats.levels[static_cast<size_t>(l)].tokens.shape());
    for (std::int64_t i = 0; i < out[static_cast<size_t>(l)].size(); ++i)
      CHECK(out[static_cast<size_t>(l)].at(i) == f.feats.levels[static_cast<size_t>(l)].tokens.at(i));
  }

  EncoderFixture f2(8, 2, 62);
  auto out2 = f2.enc.encode(f2.feats, f2.geom);
  for (int l = 0; l < 3; ++l)
    CHECK(out2[static_cast<size_t>(l)].shape() == f2.feats.levels[static_cast<size_t>(l)].tokens.shape());
}

TEST_CASE("text embedding: dims, zero-image constancy, residual identity update") {
  EncoderFixture f(8, 1, 63);
  TextEmbedding<double> e = f.enc.init_text_embedding(f.feats, f.geom);
  // last level is 64x64 padded; early map 32x32; pooled to 16x16
  CHECK(e.h == 16);
  CHECK(e.w == 16);
  CHECK(e.tokens.dim(0) == 256);
  CHECK(e.tokens.dim(1) == 8);

  // zero early map -> E constant per channel (bias only)
  f.feats.levels[static_cast<size_t>(f.geom.last)].early_map.array() = 0.0;
  TextEmbedding<double> ez = f.enc.init_text_embedding(f.feats, f.geom);
  for (int p = 1; p < ez.tokens.dim(0); ++p)
    for (int ch = 0; ch < 8; ++ch)
      CHECK(ez.tokens.at2(p, ch) == doctest::Approx(ez.tokens.at2(0, ch)));

  // zero-init update out-projection leaves E unchanged
  auto encoded = f.enc.encode(f.feats, f.geom);
  f.ps.get("enc/text_update/out/w").array() = 0.0;
  f.ps.get("enc/text_update/out/b").array() = 0.0;
  TextEmbedding<double> eu = f.enc.update_text_embedding(e, encoded, f.geom);
  CHECK(eu.h == e.h);
  CHECK(eu.w == e.w);
  for (std::int64_t i = 0; i < e.tokens.size(); ++i)
    CHECK(eu.tokens.at(i) == doctest::Approx(e.tokens.at(i)));
}

TEST_CASE("full encoder gradient check on a tiny config (<= 1e-4)") {
  EncoderFixture f(8, 2, 64);
  Rng rng(65);
  testutil::perturb_params(f.ps, rng);  // off the zero-init special point
  std::vector<Tensor<double>> weights;
  for (int l = 0; l < 3; ++l)
    weights.push_back(testutil::rand_tensor(f.feats.levels[static_cast<size_t>(l)].tokens.shape(),
                                            rng, 1.0, false));
  auto loss = [&]() {
    auto out = f.enc.encode(f.feats, f.geom);
    Tensor<double> acc = sum_all(mul(out[0], weights[0]));
    acc = add(acc, sum_all(mul(out[1], weights[1])));
    acc = add(acc, sum_all(mul(out[2], weights[2])));
    return acc;
  };
  std::vector<Tensor<double>> inputs;
  for (int l = 0; l < 3; ++l) inputs.push_back(f.feats.levels[static_cast<size_t>(l)].tokens);
  for (auto& [name, t] : f.ps.all())
    if (name.rfind("enc/u", 0) == 0 || name == "enc/level_embed") inputs.push_back(t);
  CHECK(testutil::grad_check(loss, inputs, 3) <= 1e-4);
}

TEST_CASE("every encoder parameter receives gradient (dead-parameter check)") {
  EncoderFixture f(8, 1, 66);
  Rng prng(67);
  testutil::perturb_params(f.ps, prng);  // zero-init layers are dead only at init
  GradTape<double> tape;
  auto out = f.enc.encode(f.feats, f.geom);
  TextEmbedding<double> e = f.enc.init_text_embedding(f.feats, f.geom);
  TextEmbedding<double> eu = f.enc.update_text_embedding(e, out, f.geom);
  Tensor<double> loss = add(sum_all(concat(out, 0)), sum_all(eu.tokens));
  tape.backward(loss);
  for (auto& [name, t] : f.ps.all()) {
    if (!t.has_grad()) {
      FAIL_CHECK("no grad at all for " << name);
      continue;
    }
    double mx = 0;
    auto g = t.grad();
    for (std::int64_t i = 0; i < t.size(); ++i) mx = std::max(mx, std::abs(g(i)));
    CHECK_MESSAGE(mx > 0.0, name);
  }
}
