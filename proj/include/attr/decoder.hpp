#pragma once

#include "attr/encoder.hpp"
#include "attr/nn.hpp"

#include <cmath>
#include <vector>

namespace attr {

// Dense multi-head attention; `bias` (optional, [nq x nk], no grad) is added
// to every head's attention logits before the softmax.
template <typename S>
struct MultiHeadAttention {
  int heads = 8, c = 64;
  Linear<S> wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<S>& ps, const std::string& name, int c_, int heads_, Rng& rng)
      : heads(heads_), c(c_) {
    if (c % heads != 0) throw TensorError("mha: heads must divide embed dim");
    wq = Linear<S>(ps, name + "/wq", c, c, rng);
    wk = Linear<S>(ps, name + "/wk", c, c, rng);
    wv = Linear<S>(ps, name + "/wv", c, c, rng);
    wo = Linear<S>(ps, name + "/wo", c, c, rng);
  }

  Tensor<S> forward(const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in,
                    const Tensor<S>& bias = Tensor<S>()) const {
    const int dh = c / heads;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
    Tensor<S> q = wq.forward(q_in), k = wk.forward(k_in), v = wv.forward(v_in);
    std::vector<Tensor<S>> outs;
    for (int m = 0; m < heads; ++m) {
      Tensor<S> qm = narrow(q, 1, m * dh, dh);
      Tensor<S> km = narrow(k, 1, m * dh, dh);
      Tensor<S> vm = narrow(v, 1, m * dh, dh);
      Tensor<S> scores = mul_scalar(matmul(qm, transpose(km)), inv_sqrt);
      if (bias.defined()) scores = add(scores, bias);
      outs.push_back(matmul(softmax(scores, 1), vm));
    }
    return wo.forward(concat(outs, 1));
  }
};

// One scale-wise decoder stage (pre-norm): masked cross-attention over one
// level's tokens, self-attention over the queries, then an FFN.
template <typename S>
struct DecoderStage {
  MultiHeadAttention<S> cross, self_attn;
  LayerNorm<S> ln1, ln2, ln3;
  Linear<S> ffn1, ffn2;

  DecoderStage() = default;
  DecoderStage(ParamStore<S>& ps, const std::string& name, int c, int heads, Rng& rng)
      : cross(ps, name + "/cross", c, heads, rng),
        self_attn(ps, name + "/self", c, heads, rng),
        ln1(ps, name + "/ln1", c),
        ln2(ps, name + "/ln2", c),
        ln3(ps, name + "/ln3", c),
        ffn1(ps, name + "/ffn1", c, 4 * c, rng),
        ffn2(ps, name + "/ffn2", 4 * c, c, rng) {}

  Tensor<S> forward(const Tensor<S>& queries, const Tensor<S>& qpos, const Tensor<S>& tokens,
                    const Tensor<S>& token_pos, const Tensor<S>& mask_bias) const {
    Tensor<S> x = ln1.forward(queries);
    Tensor<S> q = add(queries, cross.forward(add(x, qpos), add(tokens, token_pos), tokens,
                                             mask_bias));
    x = ln2.forward(q);
    q = add(q, self_attn.forward(add(x, qpos), add(x, qpos), x));
    q = add(q, ffn2.forward(relu(ffn1.forward(ln3.forward(q)))));
    return q;
  }
};

// Mask logits from the fixed text embedding and the current queries:
// logits[t, p] = <E(p), MLP(Q_t)>.
template <typename S>
Tensor<S> predict_masks(const TextEmbedding<S>& e, const Tensor<S>& queries, const Mlp3<S>& head) {
  return mask_dot(e.tokens, head.forward(queries));
}

// Additive attention bias from the previous stage's masks: a token is blocked
// (-1e9) when the query's sigmoid mask, bilinearly resampled to the level
// grid, is below 0.5 there. A query whose resampled mask is empty falls back
// to full cross-attention.
template <typename S>
Tensor<S> masked_attention_bias(const Tensor<S>& mask_logits /* [N x eh*ew], values only */,
                                int eh, int ew, int level, const PyramidGeom& geom) {
  const auto& lg = geom.levels[static_cast<size_t>(level)];
  const int n = mask_logits.dim(0);
  const int nt = lg.grid_h * lg.grid_w;
  Tensor<S> bias = Tensor<S>::zeros({n, nt});
  // sigmoid probabilities, sampled with zero padding outside the E extent
  std::vector<double> probs(static_cast<size_t>(mask_logits.size()));
  for (std::int64_t i = 0; i < mask_logits.size(); ++i) {
    const double x = static_cast<double>(mask_logits.at(i));
    probs[static_cast<size_t>(i)] =
        x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  auto prob_at = [&](int t, double gx, double gy) {
    // gx, gy in E-cell units; bilinear with zero outside
    const double fx = gx - 0.5, fy = gy - 0.5;
    const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    const double ax = fx - x0, ay = fy - y0;
    double acc = 0;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int xx = x0 + dx, yy = y0 + dy;
        if (xx < 0 || xx >= ew || yy < 0 || yy >= eh) continue;
        const double wgt = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
        acc += wgt * probs[static_cast<size_t>(t) * eh * ew + static_cast<size_t>(yy) * ew + xx];
      }
    return acc;
  };

  for (int t = 0; t < n; ++t) {
    bool any = false;
    for (int r = 0; r < lg.grid_h; ++r)
      for (int col = 0; col < lg.grid_w; ++col) {
        const Vec2 e = geom.base_to_e(geom.token_center(level, r, col));
        const bool fg = prob_at(t, e.x(), e.y()) >= 0.5;
        if (fg)
          any = true;
        else
          bias.at2(t, r * lg.grid_w + col) = S(-1e9);
      }
    if (!any)
      for (int u = 0; u < nt; ++u) bias.at2(t, u) = S(0);
  }
  return bias;
}

template <typename S>
struct Snapshot {
  Tensor<S> mask_logits;  // [N x e_h*e_w]
  Tensor<S> cls_logits;   // [N x 1]
};

// Scale-wise schedule: stage s (1-based) consumes level ((s-1) mod L) + 1.
inline int round_robin_level(int stage_1based, int n_levels) {
  return (stage_1based - 1) % n_levels;
}

// Query set plus the stack of scale-wise decoders. The mask and class heads
// are shared across stages; levels repeat round-robin.
template <typename S>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore<S>& ps, int c, int heads, int n_queries, int n_stages, Rng& rng)
      : n_queries_(n_queries) {
    query_ = ps.create("query/content", {n_queries, c});
    qpos_ = ps.create("query/pos", {n_queries, c});
    xavier_uniform(query_, c, c, rng);
    xavier_uniform(qpos_, c, c, rng);
    mask_head_ = Mlp3<S>(ps, "mask/mlp3", c, rng);
    cls_head_ = Linear<S>(ps, "cls", c, 1, rng);
    for (int s = 0; s < n_stages; ++s)
      stages_.emplace_back(ps, "dec/s" + std::to_string(s), c, heads, rng);
  }

  std::vector<Snapshot<S>> decode(const std::vector<Tensor<S>>& encoded,
                                  const std::vector<Tensor<S>>& level_pos,
                                  const TextEmbedding<S>& e, const PyramidGeom& geom) const {
    std::vector<Snapshot<S>> snaps;
    Tensor<S> q = query_;
    snaps.push_back({predict_masks(e, q, mask_head_), cls_head_.forward(q)});
    const int nl = geom.num_levels();
    for (size_t s = 0; s < stages_.size(); ++s) {
      const int level = round_robin_level(static_cast<int>(s) + 1, nl);
      Tensor<S> bias =
          masked_attention_bias<S>(snaps.back().mask_logits, e.h, e.w, level, geom);
      q = stages_[s].forward(q, qpos_, encoded[static_cast<size_t>(level)],
                             level_pos[static_cast<size_t>(level)], bias);
      snaps.push_back({predict_masks(e, q, mask_head_), cls_head_.forward(q)});
    }
    return snaps;
  }

  const Mlp3<S>& mask_head() const { return mask_head_; }
  const Linear<S>& cls_head() const { return cls_head_; }
  const Tensor<S>& queries() const { return query_; }
  Tensor<S>& queries_mut() { return query_; }
  Tensor<S>& qpos_mut() { return qpos_; }
  int n_queries() const { return n_queries_; }

 private:
  int n_queries_ = 0;
  Tensor<S> query_, qpos_;
  Mlp3<S> mask_head_;
  Linear<S> cls_head_;
  std::vector<DecoderStage<S>> stages_;
};

}  // namespace attr
