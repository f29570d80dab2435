#pragma once

#include "attr/geometry.hpp"
#include "attr/nn.hpp"
#include "attr/pyramid.hpp"

#include <cmath>
#include <vector>

namespace attr {

// ------------------------------------------------------------------ geometry
//
// Coordinate bookkeeping between the base image, the (resized, padded)
// pyramid levels, their token grids, and the text-embedding grid. All
// cross-grid transforms route through base-image coordinates.

struct LevelGeom {
  double scale = 1.0;
  int resized_h = 0, resized_w = 0;
  int padded_h = 0, padded_w = 0;
  int grid_h = 0, grid_w = 0;
  int stride = kPatchSize;
};

struct PyramidGeom {
  int base_h = 0, base_w = 0;
  std::vector<LevelGeom> levels;
  int last = 0;  // highest-resolution level (text embedding source)
  int e_h = 0, e_w = 0;

  int num_levels() const { return static_cast<int>(levels.size()); }

  // Token-cell center of level k in base-image coordinates.
  Vec2 token_center(int k, int row, int col) const {
    const auto& l = levels[static_cast<size_t>(k)];
    return {(col + 0.5) * l.stride * base_w / l.resized_w,
            (row + 0.5) * l.stride * base_h / l.resized_h};
  }

  // Base-image point normalized to level l's padded extent.
  Vec2 normalize_to_level(const Vec2& p, int l) const {
    const auto& lv = levels[static_cast<size_t>(l)];
    return {p.x() * lv.resized_w / base_w / lv.padded_w,
            p.y() * lv.resized_h / base_h / lv.padded_h};
  }

  // Text-embedding cell center in base-image coordinates.
  Vec2 e_cell_center(int row, int col) const {
    const auto& l = levels[static_cast<size_t>(last)];
    return {(col + 0.5) * kTextEmbedStride * base_w / l.resized_w,
            (row + 0.5) * kTextEmbedStride * base_h / l.resized_h};
  }

  // Base-image point in (continuous) text-embedding cell coordinates.
  Vec2 base_to_e(const Vec2& p) const {
    const auto& l = levels[static_cast<size_t>(last)];
    return {p.x() * l.resized_w / base_w / kTextEmbedStride,
            p.y() * l.resized_h / base_h / kTextEmbedStride};
  }

  Vec2 e_to_base(const Vec2& p) const {
    const auto& l = levels[static_cast<size_t>(last)];
    return {p.x() * kTextEmbedStride * base_w / l.resized_w,
            p.y() * kTextEmbedStride * base_h / l.resized_h};
  }
};

inline PyramidGeom make_geom(const ImagePyramid& pyr, int token_stride) {
  PyramidGeom g;
  g.base_h = pyr.base_h;
  g.base_w = pyr.base_w;
  double best = -1;
  for (size_t i = 0; i < pyr.levels.size(); ++i) {
    const auto& pl = pyr.levels[i];
    LevelGeom lg;
    lg.scale = pl.scale;
    lg.resized_h = pl.resized_h;
    lg.resized_w = pl.resized_w;
    lg.padded_h = image_h(pl.image);
    lg.padded_w = image_w(pl.image);
    lg.grid_h = lg.padded_h / token_stride;
    lg.grid_w = lg.padded_w / token_stride;
    lg.stride = token_stride;
    g.levels.push_back(lg);
    if (pl.scale > best) {
      best = pl.scale;
      g.last = static_cast<int>(i);
    }
  }
  const auto& lastl = g.levels[static_cast<size_t>(g.last)];
  g.e_h = lastl.padded_h / kTextEmbedStride;
  g.e_w = lastl.padded_w / kTextEmbedStride;
  return g;
}

// -------------------------------------------------------------- pos embedding
//
// 2-D sinusoidal embedding over integer (row, col) with temperature 10000;
// first half of the channels encodes the column, second half the row.

template <typename S>
Tensor<S> sine_pos_embed(int h, int w, int c) {
  if (c % 4 != 0) throw TensorError("sine_pos_embed: channels must divide by 4");
  Tensor<S> out = Tensor<S>::zeros({h * w, c});
  const int half = c / 2;
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      S* row = out.data() + static_cast<std::int64_t>(r * w + col) * c;
      for (int i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / half);
        row[2 * i] = static_cast<S>(std::sin(col * freq));
        row[2 * i + 1] = static_cast<S>(std::cos(col * freq));
        row[half + 2 * i] = static_cast<S>(std::sin(r * freq));
        row[half + 2 * i + 1] = static_cast<S>(std::cos(r * freq));
      }
    }
  }
  return out;
}

// ----------------------------------------------------------------------- msda
//
// Multi-scale deformable attention: per head and level, K sampling offsets
// and attention weights are linear in the query; samples are taken with
// bilinear interpolation from per-head channel slices of the projected value
// maps, and weights are softmax-normalized jointly over the L*K samples of a
// head.

template <typename S>
struct Msda {
  int heads = 8, points = 4, n_levels = 3, c = 64;
  Linear<S> value_proj, out_proj, offset, weight;

  Msda() = default;
  Msda(ParamStore<S>& ps, const std::string& name, int c_, int heads_, int points_, int n_levels_,
       Rng& rng)
      : heads(heads_), points(points_), n_levels(n_levels_), c(c_) {
    if (c % heads != 0) throw TensorError("msda: heads must divide embed dim");
    value_proj = Linear<S>(ps, name + "/value", c, c, rng);
    out_proj = Linear<S>(ps, name + "/out", c, c, rng);
    offset = Linear<S>(ps, name + "/offset", c, heads * n_levels * points * 2, rng);
    weight = Linear<S>(ps, name + "/weight", c, heads * n_levels * points, rng);
    // Offsets start at fixed per-head directions (scaled by point index) with
    // zero weights; attention weights start uniform. Keeps early sampling
    // spread out and stable.
    offset.w.array() = S(0);
    weight.w.array() = S(0);
    // 0.41 rather than a half-integer step keeps the initial sampling
    // locations off the bilinear lattice lines
    for (int m = 0; m < heads; ++m) {
      const double ang = 2.0 * M_PI * m / heads;
      const double dx = std::cos(ang), dy = std::sin(ang);
      for (int l = 0; l < n_levels; ++l)
        for (int k = 0; k < points; ++k) {
          const std::int64_t base = ((static_cast<std::int64_t>(m) * n_levels + l) * points + k) * 2;
          offset.b.at(base) = static_cast<S>(dx * (k + 1) * 0.41);
          offset.b.at(base + 1) = static_cast<S>(dy * (k + 1) * 0.41);
        }
    }
  }

  // queries: [nq x c]; refs: nq * n_levels * 2 normalized (x, y) per level;
  // level_tokens: per level [n_l x c] with grid dims in `grids`.
  Tensor<S> forward(const Tensor<S>& queries, const std::vector<double>& refs,
                    const std::vector<Tensor<S>>& level_tokens,
                    const std::vector<std::pair<int, int>>& grids /* (h, w) */) const {
    const int nq = queries.dim(0);
    const int dh = c / heads;
    const int lk = n_levels * points;

    Tensor<S> offs = offset.forward(queries);               // [nq, M*L*K*2]
    Tensor<S> wlog = reshape(weight.forward(queries), {nq, heads, lk});
    Tensor<S> wsoft = softmax(wlog, 2);                     // joint over L*K per head

    std::vector<Tensor<S>> vmaps;                           // per level [c x h x w]
    for (size_t l = 0; l < level_tokens.size(); ++l)
      vmaps.push_back(tokens_to_map(value_proj.forward(level_tokens[l]),
                                    grids[l].first, grids[l].second));

    std::vector<Tensor<S>> head_outs;
    for (int m = 0; m < heads; ++m) {
      Tensor<S> wm = reshape(narrow(wsoft, 1, m, 1), {nq, lk});
      Tensor<S> acc;
      for (int l = 0; l < n_levels; ++l) {
        const int gh = grids[static_cast<size_t>(l)].first;
        const int gw = grids[static_cast<size_t>(l)].second;
        // sampling locations = ref + offset / grid extent
        Tensor<S> off_ml =
            reshape(narrow(offs, 1, (m * n_levels + l) * points * 2, points * 2), {nq * points, 2});
        Tensor<S> inv = Tensor<S>::zeros({nq * points, 2});
        Tensor<S> ref = Tensor<S>::zeros({nq * points, 2});
        for (int q = 0; q < nq; ++q)
          for (int k = 0; k < points; ++k) {
            inv.at2(q * points + k, 0) = S(1) / static_cast<S>(gw);
            inv.at2(q * points + k, 1) = S(1) / static_cast<S>(gh);
            ref.at2(q * points + k, 0) = static_cast<S>(refs[(q * n_levels + l) * 2]);
            ref.at2(q * points + k, 1) = static_cast<S>(refs[(q * n_levels + l) * 2 + 1]);
          }
        Tensor<S> locs = add(mul(off_ml, inv), ref);
        Tensor<S> head_map = narrow(vmaps[static_cast<size_t>(l)], 0, m * dh, dh);
        Tensor<S> samples = bilinear_sample(head_map, locs);            // [nq*K, dh]
        Tensor<S> w_ml = reshape(narrow(wm, 1, l * points, points), {nq * points});
        Tensor<S> contrib = sum_row_groups(mul_colvec(samples, w_ml), points);  // [nq, dh]
        acc = acc.defined() ? add(acc, contrib) : contrib;
      }
      head_outs.push_back(acc);
    }
    return out_proj.forward(concat(head_outs, 1));
  }
};

// --------------------------------------------------------------- text embedding

template <typename S>
struct TextEmbedding {
  Tensor<S> tokens;  // [e_h*e_w x c]
  int h = 0, w = 0;
};

// -------------------------------------------------------------------- encoder

template <typename S>
struct EncoderUnit {
  Msda<S> msda;
  LayerNorm<S> ln;
  Linear<S> ffn1, ffn2;

  EncoderUnit() = default;
  EncoderUnit(ParamStore<S>& ps, const std::string& name, int c, int heads, int points,
              int n_levels, Rng& rng)
      : msda(ps, name + "/msda", c, heads, points, n_levels, rng),
        ln(ps, name + "/ln", c),
        ffn1(ps, name + "/ffn1", c, 4 * c, rng),
        ffn2(ps, name + "/ffn2", 4 * c, c, rng) {}
};

template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamStore<S>& ps, int c, int units, int heads, int points, int n_levels, Rng& rng)
      : c_(c), n_levels_(n_levels) {
    level_embed_ = ps.create("enc/level_embed", {n_levels, c});
    xavier_uniform(level_embed_, c, c, rng);
    for (int u = 0; u < units; ++u)
      units_.emplace_back(ps, "enc/u" + std::to_string(u), c, heads, points, n_levels, rng);
    text_init_w_ = Tensor<S>();  // created lazily by bind_text_init
  }

  // 1x1 conv projecting the early map into the embedding width; a channel
  // norm keeps the mask dot products in a sane range.
  void bind_text_init(ParamStore<S>& ps, int early_channels, Rng& rng) {
    text_init_w_ = ps.create("enc/text_init/w", {c_, early_channels, 1, 1});
    text_init_b_ = ps.create("enc/text_init/b", {c_});
    xavier_uniform(text_init_w_, early_channels, c_, rng);
    text_init_ln_ = LayerNorm<S>(ps, "enc/text_init/ln", c_);
    text_update_ = Msda<S>(ps, "enc/text_update", c_, heads_for_update_, points_for_update_,
                           n_levels_, rng);
  }

  void set_update_attention(int heads, int points) {
    heads_for_update_ = heads;
    points_for_update_ = points;
  }

  // Per-level position embeddings: sinusoidal plus the learned level embed.
  Tensor<S> pos_embed(int level, int h, int w) const {
    Tensor<S> sine = sine_pos_embed<S>(h, w, c_);
    Tensor<S> le = reshape(narrow(level_embed_, 0, level, 1), {c_});
    return add_rowvec(sine, le);
  }

  // Normalized reference points of every token into every level.
  std::vector<double> token_refs(const PyramidGeom& geom) const {
    std::vector<double> refs;
    for (int k = 0; k < geom.num_levels(); ++k) {
      const auto& lg = geom.levels[static_cast<size_t>(k)];
      for (int r = 0; r < lg.grid_h; ++r)
        for (int col = 0; col < lg.grid_w; ++col) {
          const Vec2 base = geom.token_center(k, r, col);
          for (int l = 0; l < geom.num_levels(); ++l) {
            const Vec2 n = geom.normalize_to_level(base, l);
            refs.push_back(n.x());
            refs.push_back(n.y());
          }
        }
    }
    return refs;
  }

  std::vector<Tensor<S>> encode(const ScaleFeatures<S>& feats, const PyramidGeom& geom) const {
    const int nl = geom.num_levels();
    std::vector<Tensor<S>> tokens;
    std::vector<std::pair<int, int>> grids;
    std::vector<Tensor<S>> pos;
    std::vector<int> counts;
    for (int l = 0; l < nl; ++l) {
      const auto& lf = feats.levels[static_cast<size_t>(l)];
      tokens.push_back(lf.tokens);
      grids.emplace_back(lf.grid_h, lf.grid_w);
      pos.push_back(pos_embed(l, lf.grid_h, lf.grid_w));
      counts.push_back(lf.grid_h * lf.grid_w);
    }
    const std::vector<double> refs = token_refs(geom);

    for (const auto& unit : units_) {
      std::vector<Tensor<S>> q_parts;
      for (int l = 0; l < nl; ++l) q_parts.push_back(add(tokens[static_cast<size_t>(l)], pos[static_cast<size_t>(l)]));
      Tensor<S> q_in = concat(q_parts, 0);
      Tensor<S> attn = unit.msda.forward(q_in, refs, tokens, grids);
      Tensor<S> all = add(concat(tokens, 0), attn);
      all = add(all, unit.ffn2.forward(relu(unit.ffn1.forward(unit.ln.forward(all)))));
      int off = 0;
      for (int l = 0; l < nl; ++l) {
        tokens[static_cast<size_t>(l)] = narrow(all, 0, off, counts[static_cast<size_t>(l)]);
        off += counts[static_cast<size_t>(l)];
      }
    }
    return tokens;
  }

  TextEmbedding<S> init_text_embedding(const ScaleFeatures<S>& feats,
                                       const PyramidGeom& geom) const {
    const auto& lf = feats.levels[static_cast<size_t>(geom.last)];
    if (!lf.early_map.defined())
      throw TensorError("text embedding requires a projection with an early feature map "
                        "(conv or res; the linear projection has none)");
    Tensor<S> e = conv2d(lf.early_map, text_init_w_, text_init_b_, 1, 0);
    e = avg_pool2d(e, kTextEmbedStride / kEarlyMapStride);
    TextEmbedding<S> te;
    te.h = e.dim(1);
    te.w = e.dim(2);
    te.tokens = text_init_ln_.forward(map_to_tokens(e));
    return te;
  }

  TextEmbedding<S> update_text_embedding(const TextEmbedding<S>& e,
                                         const std::vector<Tensor<S>>& encoded,
                                         const PyramidGeom& geom) const {
    std::vector<std::pair<int, int>> grids;
    for (const auto& lg : geom.levels) grids.emplace_back(lg.grid_h, lg.grid_w);
    std::vector<double> refs;
    refs.reserve(static_cast<size_t>(e.h) * e.w * geom.num_levels() * 2);
    for (int r = 0; r < e.h; ++r)
      for (int col = 0; col < e.w; ++col) {
        const Vec2 base = geom.e_cell_center(r, col);
        for (int l = 0; l < geom.num_levels(); ++l) {
          const Vec2 n = geom.normalize_to_level(base, l);
          refs.push_back(n.x());
          refs.push_back(n.y());
        }
      }
    Tensor<S> q_in = add(e.tokens, sine_pos_embed<S>(e.h, e.w, c_));
    TextEmbedding<S> out;
    out.h = e.h;
    out.w = e.w;
    out.tokens = add(e.tokens, text_update_.forward(q_in, refs, encoded, grids));
    return out;
  }

  const Msda<S>& text_update() const { return text_update_; }

 private:
  int c_ = 0, n_levels_ = 0;
  int heads_for_update_ = 8, points_for_update_ = 4;
  std::vector<EncoderUnit<S>> units_;
  Tensor<S> level_embed_, text_init_w_, text_init_b_;
  LayerNorm<S> text_init_ln_;
  Msda<S> text_update_;
};

}  // namespace attr
