#pragma once

#include "attr/ops.hpp"
#include "attr/rng.hpp"

#include <cmath>
#include <map>
#include <string>

namespace attr {

// Named parameter registry. Iteration order is the sorted name order, which
// fixes checkpoint layout and optimizer update order.
template <typename S>
class ParamStore {
 public:
  Tensor<S> create(const std::string& name, Shape shape) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape), /*requires_grad=*/true);
    add(name, t);
    return t;
  }

  void add(const std::string& name, Tensor<S> t) {
    if (params_.count(name)) throw TensorError("duplicate parameter name: " + name);
    params_.emplace(name, std::move(t));
  }

  const std::map<std::string, Tensor<S>>& all() const { return params_; }

  Tensor<S>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("no such parameter: " + name);
    return it->second;
  }

  void zero_grads() {
    for (auto& [k, t] : params_) t.zero_grad();
  }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [k, t] : params_) n += t.size();
    return n;
  }

 private:
  std::map<std::string, Tensor<S>> params_;
};

template <typename S>
void xavier_uniform(Tensor<S>& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t.at(i) = static_cast<S>(rng.uniform(-limit, limit));
}

// x[n x d_in] -> [n x d_out]
template <typename S>
struct Linear {
  Tensor<S> w, b;

  Linear() = default;
  Linear(ParamStore<S>& ps, const std::string& name, int d_in, int d_out, Rng& rng) {
    w = ps.create(name + "/w", {d_in, d_out});
    b = ps.create(name + "/b", {d_out});
    xavier_uniform(w, d_in, d_out, rng);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return linear(x, w, b); }
};

template <typename S>
struct LayerNorm {
  Tensor<S> g, b;

  LayerNorm() = default;
  LayerNorm(ParamStore<S>& ps, const std::string& name, int d) {
    g = ps.create(name + "/g", {d});
    b = ps.create(name + "/b", {d});
    g.array() = S(1);
  }

  Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, g, b); }
};

// Channels-last view of a feature map: [C x H x W] <-> [H*W x C].
template <typename S>
Tensor<S> map_to_tokens(const Tensor<S>& x) {
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename S>
Tensor<S> tokens_to_map(const Tensor<S>& t, int h, int w) {
  return reshape(transpose(t), {t.dim(1), h, w});
}

// Convolution with layer norm over channels (no conv bias; the norm carries
// the shift).
template <typename S>
struct ConvLn {
  Tensor<S> w;
  LayerNorm<S> ln;
  int stride = 1;

  ConvLn() = default;
  ConvLn(ParamStore<S>& ps, const std::string& name, int cin, int cout, int k, int stride_,
         Rng& rng)
      : stride(stride_) {
    w = ps.create(name + "/w", {cout, cin, k, k});
    xavier_uniform(w, cin * k * k, cout, rng);
    ln = LayerNorm<S>(ps, name + "/ln", cout);
  }

  Tensor<S> conv_only(const Tensor<S>& x) const { return conv2d(x, w, stride, -1); }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y = conv_only(x);
    const int h = y.dim(1), wd = y.dim(2);
    return tokens_to_map(relu(ln.forward(map_to_tokens(y))), h, wd);
  }
};

// Three linear layers with relu between; output dim equals input dim.
template <typename S>
struct Mlp3 {
  Linear<S> l0, l1, l2;

  Mlp3() = default;
  Mlp3(ParamStore<S>& ps, const std::string& name, int c, Rng& rng)
      : l0(ps, name + "/l0", c, c, rng),
        l1(ps, name + "/l1", c, c, rng),
        l2(ps, name + "/l2", c, c, rng) {}

  Tensor<S> forward(const Tensor<S>& x) const {
    return l2.forward(relu(l1.forward(relu(l0.forward(x)))));
  }
};

template <typename S>
Tensor<S> mlp3(const Tensor<S>& x, const Mlp3<S>& m) {
  return m.forward(x);
}

}  // namespace attr
