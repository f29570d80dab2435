#pragma once

#include "attr/nn.hpp"
#include "attr/ops.hpp"
#include "attr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-2, std::abs(a), std::abs(b)});
}

inline attr::Tensor<double> rand_tensor(attr::Shape shape, attr::Rng& rng, double scale = 1.0,
                                        bool requires_grad = true) {
  attr::Tensor<double> t = attr::Tensor<double>::zeros(std::move(shape), requires_grad);
  for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-scale, scale);
  return t;
}

// Nudges every tensor off special points (zero-initialized layers, exact
// thresholds) so finite differences run at a generic parameter point.
template <typename S>
inline void perturb_all(std::vector<attr::Tensor<S>> ts, attr::Rng& rng, double amp = 0.05) {
  for (auto& t : ts)
    for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) += static_cast<S>(rng.uniform(-amp, amp));
}

template <typename S>
inline void perturb_params(attr::ParamStore<S>& ps, attr::Rng& rng, double amp = 0.05) {
  for (auto& [name, t] : const_cast<std::map<std::string, attr::Tensor<S>>&>(ps.all()))
    for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) += static_cast<S>(rng.uniform(-amp, amp));
}

inline attr::Tensor<float> rand_tensor_f(attr::Shape shape, attr::Rng& rng, float scale = 1.0f,
                                         bool requires_grad = true) {
  attr::Tensor<float> t = attr::Tensor<float>::zeros(std::move(shape), requires_grad);
  for (std::int64_t i = 0; i < t.size(); ++i)
    t.at(i) = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

// Central finite-difference gradient check in double precision. `loss_fn`
// must recompute the scalar loss from the current contents of `inputs` and be
// deterministic across calls. Returns the max relative error over the checked
// elements (all elements, or `samples_per_tensor` random ones when >= 0).
inline double grad_check(const std::function<attr::Tensor<double>()>& loss_fn,
                         std::vector<attr::Tensor<double>> inputs,
                         int samples_per_tensor = -1, std::uint64_t sample_seed = 7) {
  using attr::GradTape;
  using attr::Tensor;
  for (auto& t : inputs) t.zero_grad();
  {
    GradTape<double> tape;
    Tensor<double> loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.data(), g.data() + t.size());
  }

  attr::Rng pick(sample_seed);
  double max_err = 0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    std::vector<std::int64_t> idxs;
    if (samples_per_tensor < 0 || samples_per_tensor >= t.size()) {
      for (std::int64_t i = 0; i < t.size(); ++i) idxs.push_back(i);
    } else {
      for (int i = 0; i < samples_per_tensor; ++i)
        idxs.push_back(static_cast<std::int64_t>(pick.below(static_cast<std::uint32_t>(t.size()))));
    }
    for (std::int64_t idx : idxs) {
      const double x0 = t.at(idx);
      const double h = 1e-6 * (1.0 + std::abs(x0));
      t.at(idx) = x0 + h;
      const double fp = loss_fn().item();
      t.at(idx) = x0 - h;
      const double fm = loss_fn().item();
      t.at(idx) = x0;
      const double numeric = (fp - fm) / (2 * h);
      max_err = std::max(max_err, rel_err(analytic[ti][static_cast<size_t>(idx)], numeric));
    }
  }
  return max_err;
}

}  // namespace testutil
