#pragma once

#include "attr/nn.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace attr {

// AdamW with decoupled weight decay and the step schedule: the base rate
// drops by 10x at 90% and 100x at 95% of the total steps. Parameters whose
// group predicate matches (projection + encoder) use a reduced multiplier.
template <typename S>
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int total_steps = 2000;
    double backbone_mult = 0.1;
  };

  AdamW() = default;
  AdamW(ParamStore<S>& ps, Options opt,
        const std::function<bool(const std::string&)>& is_backbone)
      : opt_(opt) {
    for (auto& [name, t] : const_cast<std::map<std::string, Tensor<S>>&>(ps.all())) {
      Slot s;
      s.name = name;
      s.param = t;
      s.mult = is_backbone(name) ? opt.backbone_mult : 1.0;
      s.m = Tensor<S>::zeros(t.shape());
      s.v = Tensor<S>::zeros(t.shape());
      slots_.push_back(std::move(s));
    }
  }

  double schedule_factor(int step) const {
    const double frac = opt_.total_steps > 0 ? static_cast<double>(step) / opt_.total_steps : 0.0;
    if (frac >= 0.95) return 0.01;
    if (frac >= 0.9) return 0.1;
    return 1.0;
  }

  double lr_at(int step, bool backbone = false) const {
    return opt_.lr * schedule_factor(step) * (backbone ? opt_.backbone_mult : 1.0);
  }

  // Applies one update using the gradients currently on the parameters.
  void step(int step_index) {
    ++t_;
    const double base = opt_.lr * schedule_factor(step_index);
    const double bc1 = 1.0 - std::pow(opt_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opt_.beta2, t_);
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      const double lr = base * s.mult;
      auto p = s.param.array();
      auto g = s.param.grad();
      auto m = s.m.array();
      auto v = s.v.array();
      m = static_cast<S>(opt_.beta1) * m + static_cast<S>(1.0 - opt_.beta1) * g;
      v = static_cast<S>(opt_.beta2) * v + static_cast<S>(1.0 - opt_.beta2) * g * g;
      for (std::int64_t i = 0; i < s.param.size(); ++i) {
        const double mh = static_cast<double>(m(i)) / bc1;
        const double vh = static_cast<double>(v(i)) / bc2;
        const double upd = lr * (mh / (std::sqrt(vh) + opt_.eps)) +
                           lr * opt_.weight_decay * static_cast<double>(p(i));
        p(i) -= static_cast<S>(upd);
      }
    }
  }

  int steps_taken() const { return t_; }
  void set_steps_taken(int t) { t_ = t; }
  const Options& options() const { return opt_; }

  // Moment access for checkpoint/resume, keyed by parameter name.
  std::map<std::string, std::pair<Tensor<S>, Tensor<S>>> state() const {
    std::map<std::string, std::pair<Tensor<S>, Tensor<S>>> out;
    for (const auto& s : slots_) out.emplace(s.name, std::make_pair(s.m, s.v));
    return out;
  }

  void load_state(const std::map<std::string, std::pair<std::vector<float>, std::vector<float>>>& st) {
    for (auto& s : slots_) {
      auto it = st.find(s.name);
      if (it == st.end()) throw TensorError("optimizer state missing for " + s.name);
      if (static_cast<std::int64_t>(it->second.first.size()) != s.m.size())
        throw TensorError("optimizer state size mismatch for " + s.name);
      for (std::int64_t i = 0; i < s.m.size(); ++i) {
        s.m.at(i) = static_cast<S>(it->second.first[static_cast<size_t>(i)]);
        s.v.at(i) = static_cast<S>(it->second.second[static_cast<size_t>(i)]);
      }
    }
  }

 private:
  struct Slot {
    std::string name;
    Tensor<S> param, m, v;
    double mult = 1.0;
  };

  Options opt_;
  std::vector<Slot> slots_;
  int t_ = 0;
};

}  // namespace attr
