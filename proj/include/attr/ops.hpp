#pragma once

#include "attr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

// Expression-style free functions over Tensor<S>. Each op computes its value
// eagerly and, when a tape is active and an input requires grad, records a
// closure that pulls d(out) and pushes it into the inputs.

namespace attr {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

// ---------------------------------------------------------------- elementwise

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.array() = a.array() + b.array();
  if (detail::tracing<S>(a, b)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, b = b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() += out.grad();
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.array() = a.array() - b.array();
  if (detail::tracing<S>(a, b)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, b = b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad();
      if (b.requires_grad()) b.grad() -= out.grad();
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.array() = a.array() * b.array();
  if (detail::tracing<S>(a, b)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, b = b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad() * b.array();
      if (b.requires_grad()) b.grad() += out.grad() * a.array();
    });
  }
  return out;
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "div");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.array() = a.array() / b.array();
  if (detail::tracing<S>(a, b)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, b = b, out]() mutable {
      if (a.requires_grad()) a.grad() += out.grad() / b.array();
      if (b.requires_grad()) b.grad() -= out.grad() * a.array() / (b.array() * b.array());
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.array() = a.array() * c;
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out, c]() mutable { a.grad() += out.grad() * c; });
  }
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.array() = a.array() + c;
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out]() mutable { a.grad() += out.grad(); });
  }
  return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return mul_scalar(a, S(-1));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.array() = a.array().max(S(0));
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out]() mutable {
      a.grad() += out.grad() * (a.array() > S(0)).template cast<S>();
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  // 1/(1+exp(-x)) evaluated stably on both tails.
  for (std::int64_t i = 0; i < a.size(); ++i) {
    S x = a.at(i);
    out.at(i) = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                          : std::exp(x) / (S(1) + std::exp(x));
  }
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out]() mutable {
      a.grad() += out.grad() * out.array() * (S(1) - out.array());
    });
  }
  return out;
}

// ------------------------------------------------------------------ structure

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw TensorError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor<S> out = Tensor<S>::zeros(std::move(shape));
  out.array() = a.array();
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out]() mutable { a.grad() += out.grad(); });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw TensorError("transpose: rank-2 only");
  Tensor<S> out = Tensor<S>::zeros({a.dim(1), a.dim(0)});
  out.mat().noalias() = a.mat().transpose();
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out]() mutable {
      a.grad_mat().noalias() += out.grad_mat().transpose();
    });
  }
  return out;
}

namespace detail {
inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}
}  // namespace detail

// Slice `len` entries starting at `start` along `axis` (copying).
template <typename S>
Tensor<S> narrow(const Tensor<S>& a, int axis, int start, int len) {
  const Shape& sh = a.shape();
  if (axis < 0 || axis >= a.rank() || start < 0 || start + len > sh[static_cast<size_t>(axis)])
    throw TensorError("narrow: bad slice");
  Shape osh = sh;
  osh[static_cast<size_t>(axis)] = len;
  Tensor<S> out = Tensor<S>::zeros(osh);

  auto st = detail::row_major_strides(sh);
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[static_cast<size_t>(i)];
  const std::int64_t block = st[static_cast<size_t>(axis)];  // elems per index step on axis
  const std::int64_t in_pitch = sh[static_cast<size_t>(axis)] * block;
  const std::int64_t out_pitch = len * block;

  const S* src = a.data();
  S* dst = out.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(src + o * in_pitch + start * block, out_pitch, dst + o * out_pitch);

  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out, outer, block, in_pitch, out_pitch, start]() mutable {
      auto ag = a.grad();
      auto og = out.grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < out_pitch; ++i)
          ag(o * in_pitch + start * block + i) += og(o * out_pitch + i);
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw TensorError("concat: empty");
  Shape osh = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(osh.size())) throw TensorError("concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != osh[static_cast<size_t>(i)])
        throw TensorError("concat: shape mismatch");
    total += p.dim(axis);
  }
  osh[static_cast<size_t>(axis)] = total;
  Tensor<S> out = Tensor<S>::zeros(osh);

  auto ost = detail::row_major_strides(osh);
  const std::int64_t block = ost[static_cast<size_t>(axis)];
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= osh[static_cast<size_t>(i)];
  const std::int64_t out_pitch = total * block;

  bool any_grad = false;
  std::int64_t off = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::int64_t p_pitch = p.dim(axis) * block;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(p.data() + o * p_pitch, p_pitch, out.data() + o * out_pitch + off);
    off += p_pitch;
    any_grad = any_grad || p.requires_grad();
  }

  if (GradTape<S>::active() && any_grad) {
    detail::mark_output(out);
    auto parts_copy = parts;
    GradTape<S>::active()->record([parts_copy, out, offsets, outer, out_pitch, block]() mutable {
      auto og = out.grad();
      for (size_t pi = 0; pi < parts_copy.size(); ++pi) {
        auto& p = parts_copy[pi];
        if (!p.requires_grad()) continue;
        const std::int64_t pitch = static_cast<std::int64_t>(p.size()) / outer;
        auto pg = p.grad();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < pitch; ++i)
            pg(o * pitch + i) += og(o * out_pitch + offsets[pi] + i);
      }
    });
  }
  return out;
}

// Rows of `a` selected by `idx` (repeats allowed). Rank-1 tensors gather
// elements; rank-2 gather whole rows.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, const std::vector<int>& idx) {
  const int cols = a.rank() == 1 ? 1 : a.dim(1);
  if (a.rank() > 2) throw TensorError("gather_rows: rank must be 1 or 2");
  Shape osh = a.rank() == 1 ? Shape{static_cast<int>(idx.size())}
                            : Shape{static_cast<int>(idx.size()), cols};
  Tensor<S> out = Tensor<S>::zeros(osh);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(a.data() + static_cast<std::int64_t>(idx[i]) * cols, cols,
                out.data() + static_cast<std::int64_t>(i) * cols);
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out, idx, cols]() mutable {
      auto ag = a.grad();
      auto og = out.grad();
      for (size_t i = 0; i < idx.size(); ++i)
        for (int c = 0; c < cols; ++c)
          ag(static_cast<std::int64_t>(idx[i]) * cols + c) +=
              og(static_cast<std::int64_t>(i) * cols + c);
    });
  }
  return out;
}

// ------------------------------------------------------------------ reductions

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a.array().sum());
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out]() mutable { a.grad() += out.grad()(0); });
  }
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return mul_scalar(sum_all(a), S(1) / static_cast<S>(a.size()));
}

// [m*k x n] -> [m x n], summing groups of k consecutive rows.
template <typename S>
Tensor<S> sum_row_groups(const Tensor<S>& a, int k) {
  if (a.rank() != 2 || a.dim(0) % k != 0) throw TensorError("sum_row_groups: bad shape");
  const int m = a.dim(0) / k, n = a.dim(1);
  Tensor<S> out = Tensor<S>::zeros({m, n});
  for (int g = 0; g < m; ++g)
    for (int i = 0; i < k; ++i)
      out.mat().row(g) += a.mat().row(g * k + i);
  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out, m, k]() mutable {
      for (int g = 0; g < m; ++g)
        for (int i = 0; i < k; ++i)
          a.grad_mat().row(g * k + i) += out.grad_mat().row(g);
    });
  }
  return out;
}

// ---------------------------------------------------------------- broadcasting

// x[m x n] + v[n] per row.
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2 || v.size() != x.dim(1)) throw TensorError("add_rowvec: shape mismatch");
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.mat() = x.mat();
  out.mat().rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(v.data(), v.size());
  if (detail::tracing<S>(x, v)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([x = x, v = v, out]() mutable {
      if (x.requires_grad()) x.grad() += out.grad();
      if (v.requires_grad()) {
        auto vg = v.grad();
        auto og = out.grad_mat();
        for (int c = 0; c < og.cols(); ++c) vg(c) += og.col(c).sum();
      }
    });
  }
  return out;
}

// x[m x n] with row i scaled by v[i].
template <typename S>
Tensor<S> mul_colvec(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2 || v.size() != x.dim(0)) throw TensorError("mul_colvec: shape mismatch");
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (int r = 0; r < x.dim(0); ++r) out.mat().row(r) = x.mat().row(r) * v.at(r);
  if (detail::tracing<S>(x, v)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([x = x, v = v, out]() mutable {
      if (x.requires_grad())
        for (int r = 0; r < x.dim(0); ++r) x.grad_mat().row(r) += out.grad_mat().row(r) * v.at(r);
      if (v.requires_grad()) {
        auto vg = v.grad();
        for (int r = 0; r < x.dim(0); ++r)
          vg(r) += (out.grad_mat().row(r).array() * x.mat().row(r).array()).sum();
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------- matmul

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw TensorError("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros({a.dim(0), b.dim(1)});
  out.mat().noalias() = a.mat() * b.mat();
  if (detail::tracing<S>(a, b)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, b = b, out]() mutable {
      if (a.requires_grad()) a.grad_mat().noalias() += out.grad_mat() * b.mat().transpose();
      if (b.requires_grad()) b.grad_mat().noalias() += a.mat().transpose() * out.grad_mat();
    });
  }
  return out;
}

// x[n x d] * W[d x o] + b[o]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_rowvec(matmul(x, w), b);
}

// -------------------------------------------------------------------- softmax

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  if (axis < 0) axis += a.rank();
  if (axis < 0 || axis >= a.rank()) throw TensorError("softmax: bad axis");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const Shape& sh = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[static_cast<size_t>(i)];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= sh[static_cast<size_t>(i)];
  const std::int64_t n = sh[static_cast<size_t>(axis)];

  const S* src = a.data();
  S* dst = out.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      S mx = src[base];
      for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, src[base + i * inner]);
      S denom = S(0);
      for (std::int64_t i = 0; i < n; ++i) {
        S e = std::exp(src[base + i * inner] - mx);
        dst[base + i * inner] = e;
        denom += e;
      }
      for (std::int64_t i = 0; i < n; ++i) dst[base + i * inner] /= denom;
    }
  }

  if (detail::tracing<S>(a)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([a = a, out, outer, inner, n]() mutable {
      auto ag = a.grad();
      auto og = out.grad();
      const S* y = out.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          S dot = S(0);
          for (std::int64_t i = 0; i < n; ++i) dot += og(base + i * inner) * y[base + i * inner];
          for (std::int64_t i = 0; i < n; ++i)
            ag(base + i * inner) += y[base + i * inner] * (og(base + i * inner) - dot);
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------------ layer norm
//
// Normalizes over the last axis with eps 1e-5, then applies gain and bias.

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias) {
  const int d = x.dim(x.rank() - 1);
  if (gain.size() != d || bias.size() != d) throw TensorError("layer_norm: param size mismatch");
  const std::int64_t rows = x.size() / d;
  const S eps = static_cast<S>(1e-5);

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  // Saved normalized activations and inverse stddev for the backward pass.
  auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(x.size()));
  auto istd = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));

  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = x.data() + r * d;
    S mu = S(0);
    for (int i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<S>(d);
    S var = S(0);
    for (int i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    (*istd)[static_cast<size_t>(r)] = is;
    S* orow = out.data() + r * d;
    for (int i = 0; i < d; ++i) {
      const S h = (xr[i] - mu) * is;
      (*xhat)[static_cast<size_t>(r * d + i)] = h;
      orow[i] = h * gain.at(i) + bias.at(i);
    }
  }

  if (detail::tracing<S>(x, gain, bias)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([x = x, gain = gain, bias = bias, out, xhat, istd, rows, d]() mutable {
      auto og = out.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const S is = (*istd)[static_cast<size_t>(r)];
        // dh = og * gain; dx via the standard layernorm backward.
        S sum_dh = S(0), sum_dh_h = S(0);
        for (int i = 0; i < d; ++i) {
          const S dh = og(r * d + i) * gain.at(i);
          const S h = (*xhat)[static_cast<size_t>(r * d + i)];
          sum_dh += dh;
          sum_dh_h += dh * h;
        }
        if (x.requires_grad()) {
          auto xg = x.grad();
          for (int i = 0; i < d; ++i) {
            const S dh = og(r * d + i) * gain.at(i);
            const S h = (*xhat)[static_cast<size_t>(r * d + i)];
            xg(r * d + i) +=
                is * (dh - sum_dh / static_cast<S>(d) - h * sum_dh_h / static_cast<S>(d));
          }
        }
        if (gain.requires_grad()) {
          auto gg = gain.grad();
          for (int i = 0; i < d; ++i)
            gg(i) += og(r * d + i) * (*xhat)[static_cast<size_t>(r * d + i)];
        }
        if (bias.requires_grad()) {
          auto bg = bias.grad();
          for (int i = 0; i < d; ++i) bg(i) += og(r * d + i);
        }
      }
    });
  }
  return out;
}

// -------------------------------------------------------------------- conv2d
//
// x: [Cin x H x W], w: [Cout x Cin x k x k], optional bias [Cout].
// Output spatial dims: floor((H + 2p - k)/stride) + 1. im2col + GEMM.

namespace detail {

template <typename S>
void im2col(const S* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            S* cols /* [cin*k*k x ho*wo] row-major */) {
  const int ospan = ho * wo;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = cols + (static_cast<std::int64_t>(c) * k * k + ky * k + kx) * ospan;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill_n(row + static_cast<std::int64_t>(oy) * wo, wo, S(0));
            continue;
          }
          const S* src = x + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[static_cast<std::int64_t>(oy) * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
                S* x_grad) {
  const int ospan = ho * wo;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = cols + (static_cast<std::int64_t>(c) * k * k + ky * k + kx) * ospan;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          S* dst = x_grad + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[static_cast<std::int64_t>(oy) * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int stride,
                 int pad) {
  if (x.rank() != 3 || w.rank() != 4) throw TensorError("conv2d: x must be CxHxW, w OxIxKxK");
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) throw TensorError("conv2d: channel mismatch");
  if (w.dim(3) != k || k % 2 == 0) throw TensorError("conv2d: kernel must be square and odd");
  if (pad < 0) pad = k / 2;
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw TensorError("conv2d: empty output");

  const int patch = cin * k * k;
  const int ospan = ho * wo;
  auto cols = std::make_shared<Tensor<S>>(Tensor<S>::zeros({patch, ospan}));
  detail::im2col(x.data(), cin, h, wd, k, stride, pad, ho, wo, cols->data());

  Tensor<S> out = Tensor<S>::zeros({cout, ho, wo});
  using Mat = typename Tensor<S>::ConstMatrixMap;
  Mat wmat(w.data(), cout, patch);
  typename Tensor<S>::MatrixMap omat(out.data(), cout, ospan);
  omat.noalias() = wmat * cols->mat();
  if (bias.defined()) {
    if (bias.size() != cout) throw TensorError("conv2d: bias size mismatch");
    for (int c = 0; c < cout; ++c) omat.row(c).array() += bias.at(c);
  }

  const bool bias_grad = bias.defined() && bias.requires_grad();
  if (GradTape<S>::active() && (x.requires_grad() || w.requires_grad() || bias_grad)) {
    detail::mark_output(out);
    GradTape<S>::active()->record(
        [x = x, w = w, bias = bias, out, cols, cin, h, wd, k, stride, pad, ho, wo, cout, patch,
         ospan]() mutable {
          typename Tensor<S>::MatrixMap og(out.grad().data(), cout, ospan);
          if (w.requires_grad()) {
            typename Tensor<S>::MatrixMap wg(w.grad().data(), cout, patch);
            wg.noalias() += og * cols->mat().transpose();
          }
          if (x.requires_grad()) {
            Tensor<S> dcols = Tensor<S>::zeros({patch, ospan});
            typename Tensor<S>::ConstMatrixMap wmat(w.data(), cout, patch);
            dcols.mat().noalias() = wmat.transpose() * og;
            detail::col2im_add(dcols.data(), cin, h, wd, k, stride, pad, ho, wo, x.grad().data());
          }
          if (bias.defined() && bias.requires_grad()) {
            auto bg = bias.grad();
            for (int c = 0; c < cout; ++c) bg(c) += og.row(c).sum();
          }
        });
  }
  return out;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride = 1, int pad = -1) {
  return conv2d(x, w, Tensor<S>(), stride, pad);
}

// Non-overlapping P x P patches of x[C x H x W], flattened to rows of
// [n_patches x C*P*P]; patch rows are row-major over the patch grid and the
// feature order within a row is (c, py, px).
template <typename S>
Tensor<S> extract_patches(const Tensor<S>& x, int p) {
  if (x.rank() != 3 || x.dim(1) % p != 0 || x.dim(2) % p != 0)
    throw TensorError("extract_patches: dims must divide by patch size");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int gh = h / p, gw = w / p, n = gh * gw, d = c * p * p;
  Tensor<S> out = Tensor<S>::zeros({n, d});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      S* row = out.data() + static_cast<std::int64_t>(gy * gw + gx) * d;
      for (int ch = 0; ch < c; ++ch)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            row[(ch * p + py) * p + px] =
                x.at((static_cast<std::int64_t>(ch) * h + gy * p + py) * w + gx * p + px);
    }
  if (detail::tracing<S>(x)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([x = x, out, c, h, w = w, p, gh, gw, d]() mutable {
      auto xg = x.grad();
      auto og = out.grad();
      for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
          const std::int64_t row = static_cast<std::int64_t>(gy * gw + gx) * d;
          for (int ch = 0; ch < c; ++ch)
            for (int py = 0; py < p; ++py)
              for (int px = 0; px < p; ++px)
                xg((static_cast<std::int64_t>(ch) * h + gy * p + py) * w + gx * p + px) +=
                    og(row + (ch * p + py) * p + px);
        }
    });
  }
  return out;
}

// Non-overlapping average pool by factor k (dims must divide).
template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, int k) {
  if (x.rank() != 3 || x.dim(1) % k != 0 || x.dim(2) % k != 0)
    throw TensorError("avg_pool2d: dims must divide by k");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = h / k, wo = w / k;
  Tensor<S> out = Tensor<S>::zeros({c, ho, wo});
  const S inv = S(1) / static_cast<S>(k * k);
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        S acc = S(0);
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            acc += x.at((static_cast<std::int64_t>(ch) * h + oy * k + dy) * w + ox * k + dx);
        out.at((static_cast<std::int64_t>(ch) * ho + oy) * wo + ox) = acc * inv;
      }
  if (detail::tracing<S>(x)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([x = x, out, c, h, w = w, ho, wo, k, inv]() mutable {
      auto xg = x.grad();
      auto og = out.grad();
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const S g = og((static_cast<std::int64_t>(ch) * ho + oy) * wo + ox) * inv;
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                xg((static_cast<std::int64_t>(ch) * h + oy * k + dy) * w + ox * k + dx) += g;
          }
    });
  }
  return out;
}

// ----------------------------------------------------------- bilinear sampling
//
// map: [C x H x W]; points: [P x 2] as (x, y) in [0,1] normalized over the map
// extent, pixel centers at (i + 0.5)/n. Out-of-range neighbor taps contribute
// zero (zero padding, not clamping). Differentiable in both map and points.

template <typename S>
Tensor<S> bilinear_sample(const Tensor<S>& map, const Tensor<S>& points) {
  if (map.rank() != 3 || points.rank() != 2 || points.dim(1) != 2)
    throw TensorError("bilinear_sample: map CxHxW, points Px2");
  const int c = map.dim(0), h = map.dim(1), w = map.dim(2), p = points.dim(0);
  Tensor<S> out = Tensor<S>::zeros({p, c});

  for (int i = 0; i < p; ++i) {
    const S gx = points.at2(i, 0) * static_cast<S>(w) - S(0.5);
    const S gy = points.at2(i, 1) * static_cast<S>(h) - S(0.5);
    const int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
    const S fx = gx - static_cast<S>(x0), fy = gy - static_cast<S>(y0);
    const S wgt[4] = {(S(1) - fx) * (S(1) - fy), fx * (S(1) - fy), (S(1) - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int t = 0; t < 4; ++t) {
      if (xs[t] < 0 || xs[t] >= w || ys[t] < 0 || ys[t] >= h) continue;
      const std::int64_t off = static_cast<std::int64_t>(ys[t]) * w + xs[t];
      for (int ch = 0; ch < c; ++ch)
        out.at2(i, ch) += wgt[t] * map.at((static_cast<std::int64_t>(ch) * h) * w + off);
    }
  }

  if (detail::tracing<S>(map, points)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([map = map, points = points, out, c, h, w = w, p]() mutable {
      auto og = out.grad();
      for (int i = 0; i < p; ++i) {
        const S gx = points.at2(i, 0) * static_cast<S>(w) - S(0.5);
        const S gy = points.at2(i, 1) * static_cast<S>(h) - S(0.5);
        const int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
        const S fx = gx - static_cast<S>(x0), fy = gy - static_cast<S>(y0);
        const S wgt[4] = {(S(1) - fx) * (S(1) - fy), fx * (S(1) - fy), (S(1) - fx) * fy, fx * fy};
        // d(weight)/d(gx), d(weight)/d(gy) per tap
        const S dwx[4] = {-(S(1) - fy), (S(1) - fy), -fy, fy};
        const S dwy[4] = {-(S(1) - fx), -fx, (S(1) - fx), fx};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        S gx_acc = S(0), gy_acc = S(0);
        for (int t = 0; t < 4; ++t) {
          if (xs[t] < 0 || xs[t] >= w || ys[t] < 0 || ys[t] >= h) continue;
          const std::int64_t off = static_cast<std::int64_t>(ys[t]) * w + xs[t];
          for (int ch = 0; ch < c; ++ch) {
            const S go = og(static_cast<std::int64_t>(i) * c + ch);
            const S mv = map.at((static_cast<std::int64_t>(ch) * h) * w + off);
            if (map.requires_grad())
              map.grad()((static_cast<std::int64_t>(ch) * h) * w + off) += go * wgt[t];
            gx_acc += go * dwx[t] * mv;
            gy_acc += go * dwy[t] * mv;
          }
        }
        if (points.requires_grad()) {
          auto pg = points.grad();
          pg(static_cast<std::int64_t>(i) * 2 + 0) += gx_acc * static_cast<S>(w);
          pg(static_cast<std::int64_t>(i) * 2 + 1) += gy_acc * static_cast<S>(h);
        }
      }
    });
  }
  return out;
}

// -------------------------------------------------------- stable BCE from logits
//
// Sum over all elements of BCE(sigmoid(x), y); y is a plain target tensor and
// receives no gradient. Stable form: max(x,0) - x*y + log1p(exp(-|x|)).

template <typename S>
Tensor<S> bce_with_logits_sum(const Tensor<S>& logits, const Tensor<S>& targets,
                              const Tensor<S>& weights = Tensor<S>()) {
  check_same_shape(logits, targets, "bce_with_logits_sum");
  if (weights.defined()) check_same_shape(logits, weights, "bce_with_logits_sum weights");
  S acc = S(0);
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    const S x = logits.at(i), y = targets.at(i);
    const S w = weights.defined() ? weights.at(i) : S(1);
    acc += w * (std::max(x, S(0)) - x * y + std::log1p(std::exp(-std::abs(x))));
  }
  Tensor<S> out = Tensor<S>::scalar(acc);
  if (detail::tracing<S>(logits)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([logits = logits, targets = targets, weights = weights, out]() mutable {
      const S g = out.grad()(0);
      auto lg = logits.grad();
      for (std::int64_t i = 0; i < logits.size(); ++i) {
        const S x = logits.at(i);
        const S w = weights.defined() ? weights.at(i) : S(1);
        const S sig = x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
        lg(i) += g * w * (sig - targets.at(i));
      }
    });
  }
  return out;
}

// ------------------------------------------------------------------- mask dot
//
// logits[t, p] = <E[p, :], Q[t, :]>, accumulated in index order so the result
// is bit-identical to a plain triple loop.

template <typename S>
Tensor<S> mask_dot(const Tensor<S>& e_tokens, const Tensor<S>& q) {
  if (e_tokens.rank() != 2 || q.rank() != 2 || e_tokens.dim(1) != q.dim(1))
    throw TensorError("mask_dot: shape mismatch");
  const int hw = e_tokens.dim(0), c = e_tokens.dim(1), n = q.dim(0);
  Tensor<S> out = Tensor<S>::zeros({n, hw});
  for (int t = 0; t < n; ++t) {
    const S* qt = q.data() + static_cast<std::int64_t>(t) * c;
    for (int p = 0; p < hw; ++p) {
      const S* ep = e_tokens.data() + static_cast<std::int64_t>(p) * c;
      S acc = S(0);
      for (int k = 0; k < c; ++k) acc += ep[k] * qt[k];
      out.at2(t, p) = acc;
    }
  }
  if (detail::tracing<S>(e_tokens, q)) {
    detail::mark_output(out);
    GradTape<S>::active()->record([e_tokens = e_tokens, q = q, out]() mutable {
      // dE = dOut^T * Q ; dQ = dOut * E
      if (e_tokens.requires_grad())
        e_tokens.grad_mat().noalias() += out.grad_mat().transpose() * q.mat();
      if (q.requires_grad()) q.grad_mat().noalias() += out.grad_mat() * e_tokens.mat();
    });
  }
  return out;
}

// operator sugar
template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

}  // namespace attr
