#pragma once

#include "attr/model.hpp"
#include "attr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace attr {

struct LossOptions {
  double lambda_cls_matched = 0.4;
  double lambda_cls_unmatched = 0.02;
  int points_k = 1024;
  bool aux_loss = true;
  double aux_weight = 1.0;
  double importance_frac = 0.75;
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query, gt), injective both ways
  std::vector<int> unmatched_queries;
};

// Optimal assignment minimizing total cost over an N x G matrix; matches
// min(N, G) pairs. Implemented in src/matching.cpp.
MatchResult hungarian_match(const Eigen::MatrixXd& cost);

// ------------------------------------------------------------- point sampling
//
// K grid positions per (prediction, gt) pair: an importance fraction picks the
// cells with the smallest |logit| (ties broken uniformly at random), the rest
// are drawn uniformly without replacement from the remaining cells. All K are
// distinct while K <= h*w; beyond that sampling falls back to replacement.

struct SampledPoints {
  std::vector<int> idx;
  std::vector<float> targets;
};

template <typename T>
std::vector<int> sample_point_indices(const T* logits, int hw, int k, double importance_frac,
                                      Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(k));
  if (k > hw) {
    for (int i = 0; i < k; ++i) out.push_back(static_cast<int>(rng.below(static_cast<std::uint32_t>(hw))));
    return out;
  }
  std::vector<int> perm(static_cast<size_t>(hw));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = hw - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)], perm[rng.below(static_cast<std::uint32_t>(i + 1))]);

  const int ki = std::min(hw, static_cast<int>(std::floor(importance_frac * k)));
  std::vector<char> taken(static_cast<size_t>(hw), 0);
  if (ki > 0) {
    // rank cells by |logit| with the random permutation as tiebreak, so a
    // constant-logit map degenerates to a uniform draw
    std::vector<int> rank_of(static_cast<size_t>(hw));
    for (int i = 0; i < hw; ++i) rank_of[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
    std::vector<int> cells(static_cast<size_t>(hw));
    std::iota(cells.begin(), cells.end(), 0);
    std::nth_element(cells.begin(), cells.begin() + ki, cells.end(), [&](int a, int b) {
      const double aa = std::abs(static_cast<double>(logits[a]));
      const double bb = std::abs(static_cast<double>(logits[b]));
      if (aa != bb) return aa < bb;
      return rank_of[static_cast<size_t>(a)] < rank_of[static_cast<size_t>(b)];
    });
    for (int i = 0; i < ki; ++i) {
      out.push_back(cells[static_cast<size_t>(i)]);
      taken[static_cast<size_t>(cells[static_cast<size_t>(i)])] = 1;
    }
  }
  for (int i = 0; i < hw && static_cast<int>(out.size()) < k; ++i) {
    const int cell = perm[static_cast<size_t>(i)];
    if (!taken[static_cast<size_t>(cell)]) out.push_back(cell);
  }
  return out;
}

// ---------------------------------------------------------------- loss pieces

// Mean over rows of the summed point-wise BCE, computed from logits.
template <typename S>
Tensor<S> loss_bce(const Tensor<S>& logits /* [n x k] */, const Tensor<S>& targets) {
  return mul_scalar(bce_with_logits_sum(logits, targets), S(1) / static_cast<S>(logits.dim(0)));
}

// Set-level dice with eps = 1: mean over rows of 1 - (2*sum(yh*y)+1)/(sum(yh)+sum(y)+1).
template <typename S>
Tensor<S> loss_dice(const Tensor<S>& logits /* [n x k] */, const Tensor<S>& targets) {
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor<S> ones = Tensor<S>::full({k, 1}, S(1));
  Tensor<S> yh = sigmoid(logits);
  Tensor<S> inter = matmul(mul(yh, targets), ones);  // [n x 1]
  Tensor<S> sum_yh = matmul(yh, ones);
  Tensor<S> sum_y = matmul(targets, ones);
  Tensor<S> num = add_scalar(mul_scalar(inter, S(2)), S(1));
  Tensor<S> den = add_scalar(add(sum_yh, sum_y), S(1));
  Tensor<S> ratio = div(num, den);
  return mean_all(add_scalar(neg(ratio), S(1)));
}

// Per-query weighted BCE on the text/non-text logit, averaged over N.
template <typename S>
Tensor<S> loss_cls(const Tensor<S>& cls_logits /* [n x 1] */, const std::vector<float>& labels,
                   const std::vector<float>& weights) {
  const int n = cls_logits.dim(0);
  Tensor<S> y = Tensor<S>::zeros({n, 1});
  Tensor<S> w = Tensor<S>::zeros({n, 1});
  for (int i = 0; i < n; ++i) {
    y.at(i) = static_cast<S>(labels[static_cast<size_t>(i)]);
    w.at(i) = static_cast<S>(weights[static_cast<size_t>(i)]);
  }
  return mul_scalar(bce_with_logits_sum(cls_logits, y, w), S(1) / static_cast<S>(n));
}

// --------------------------------------------------------------- full training loss

namespace detail_loss {

inline double stable_bce(double x, double y) {
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}

inline double neg_log_sigmoid(double x) { return std::log1p(std::exp(-x)); }

}  // namespace detail_loss

// Ground-truth masks rasterized onto the text-embedding grid.
inline std::vector<std::vector<std::uint8_t>> rasterize_gts(const std::vector<Polygon>& gts,
                                                            const PyramidGeom& geom) {
  std::vector<std::vector<std::uint8_t>> out;
  const auto& lastl = geom.levels[static_cast<size_t>(geom.last)];
  const double sx = static_cast<double>(kTextEmbedStride) * geom.base_w / lastl.resized_w;
  const double sy = static_cast<double>(kTextEmbedStride) * geom.base_h / lastl.resized_h;
  for (const auto& g : gts) {
    BinaryGrid grid(geom.e_w, geom.e_h);
    rasterize_polygon(g, 0.0, 0.0, sx, sy, grid);
    out.emplace_back(grid.cells.begin(), grid.cells.end());
  }
  return out;
}

// Matching + mask/cls loss for one snapshot. The assignment and the sampled
// positions are treated as constants; gradient flows only through the matched
// mask logits and the class logits.
template <typename S>
Tensor<S> snapshot_loss(const Snapshot<S>& snap,
                        const std::vector<std::vector<std::uint8_t>>& gt_masks,
                        const LossOptions& opt, Rng& rng, MatchResult* match_out = nullptr) {
  const int n = snap.mask_logits.dim(0);
  const int hw = snap.mask_logits.dim(1);
  const int g = static_cast<int>(gt_masks.size());

  std::vector<float> labels(static_cast<size_t>(n), 0.0f);
  std::vector<float> weights(static_cast<size_t>(n),
                             static_cast<float>(opt.lambda_cls_unmatched));
  if (g == 0) {
    if (match_out) *match_out = MatchResult{};
    return loss_cls<S>(snap.cls_logits, labels, weights);
  }

  // Sampled positions per (query, gt) pair; shared by the matching cost and
  // the final loss of matched pairs.
  std::vector<std::vector<std::vector<int>>> positions(static_cast<size_t>(n));
  Eigen::MatrixXd cost(n, g);
  for (int t = 0; t < n; ++t) {
    positions[static_cast<size_t>(t)].resize(static_cast<size_t>(g));
    const S* lrow = snap.mask_logits.data() + static_cast<std::int64_t>(t) * hw;
    const double x_cls = static_cast<double>(snap.cls_logits.at(t));
    const double cls_term = opt.lambda_cls_matched * detail_loss::neg_log_sigmoid(x_cls);
    for (int j = 0; j < g; ++j) {
      auto idx = sample_point_indices(lrow, hw, opt.points_k, opt.importance_frac, rng);
      double bce = 0, inter = 0, sum_yh = 0, sum_y = 0;
      for (int i : idx) {
        const double x = static_cast<double>(lrow[i]);
        const double y = gt_masks[static_cast<size_t>(j)][static_cast<size_t>(i)] ? 1.0 : 0.0;
        bce += detail_loss::stable_bce(x, y);
        const double yh = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        inter += yh * y;
        sum_yh += yh;
        sum_y += y;
      }
      const double dice = 1.0 - (2.0 * inter + 1.0) / (sum_yh + sum_y + 1.0);
      cost(t, j) = cls_term + bce + dice;
      positions[static_cast<size_t>(t)][static_cast<size_t>(j)] = std::move(idx);
    }
  }

  MatchResult match = hungarian_match(cost);
  if (match_out) *match_out = match;

  std::vector<Tensor<S>> logit_rows, target_rows;
  for (const auto& [t, j] : match.pairs) {
    labels[static_cast<size_t>(t)] = 1.0f;
    weights[static_cast<size_t>(t)] = static_cast<float>(opt.lambda_cls_matched);
    const auto& idx = positions[static_cast<size_t>(t)][static_cast<size_t>(j)];
    Tensor<S> row = reshape(narrow(snap.mask_logits, 0, t, 1), {hw});
    logit_rows.push_back(reshape(gather_rows(row, idx), {1, static_cast<int>(idx.size())}));
    Tensor<S> tgt = Tensor<S>::zeros({1, static_cast<int>(idx.size())});
    for (size_t i = 0; i < idx.size(); ++i)
      tgt.at(static_cast<std::int64_t>(i)) =
          gt_masks[static_cast<size_t>(j)][static_cast<size_t>(idx[i])] ? S(1) : S(0);
    target_rows.push_back(tgt);
  }

  Tensor<S> logits = concat(logit_rows, 0);
  Tensor<S> targets = concat(target_rows, 0);
  Tensor<S> l_mask = add(loss_bce(logits, targets), loss_dice(logits, targets));
  return add(l_mask, loss_cls<S>(snap.cls_logits, labels, weights));
}

// L = L_mask + weighted L_cls on the final prediction, plus identical terms
// for every earlier stage when aux supervision is on.
template <typename S>
Tensor<S> loss_total(const ForwardOut<S>& fwd,
                     const std::vector<std::vector<std::uint8_t>>& gt_masks,
                     const LossOptions& opt, Rng& rng) {
  Tensor<S> total = snapshot_loss(fwd.snapshots.back(), gt_masks, opt, rng);
  if (opt.aux_loss) {
    for (size_t s = 0; s + 1 < fwd.snapshots.size(); ++s) {
      Tensor<S> aux = snapshot_loss(fwd.snapshots[s], gt_masks, opt, rng);
      total = add(total, mul_scalar(aux, static_cast<S>(opt.aux_weight)));
    }
  }
  return total;
}

}  // namespace attr
