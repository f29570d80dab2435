#pragma once

#include "attr/checkpoint.hpp"
#include "attr/loss.hpp"
#include "attr/optim.hpp"
#include "attr/synth.hpp"

#include <functional>
#include <string>
#include <vector>

namespace attr {

struct TrainOptions {
  int total_steps = 2000;
  int batch_size = 2;
  bool augment = false;
  std::uint64_t seed = 0;
  LossOptions loss;
  typename AdamW<float>::Options adam;
};

struct TrainStepInfo {
  int step = 0;
  double loss = 0;
  double lr = 0;
};

// Serial training loop over an in-memory dataset. All randomness (batch
// order, augmentation, point sampling) flows from one generator whose state
// is part of the saved training state, so an interrupted run resumes
// bit-identically.
class Trainer {
 public:
  Trainer(Detector<float>& model, std::vector<SceneSample> dataset, const TrainOptions& opt)
      : model_(model),
        dataset_(std::move(dataset)),
        opt_(opt),
        adam_(model.params(), opt.adam, Detector<float>::is_backbone_param),
        rng_(opt.seed ^ 0x7261696e65724aULL) {
    if (dataset_.empty()) throw TensorError("trainer: empty dataset");
  }

  int step() const { return step_; }
  Rng& rng() { return rng_; }
  AdamW<float>& optimizer() { return adam_; }

  TrainStepInfo run_step() {
    model_.params().zero_grads();
    GradTape<float> tape;
    Tensor<float> batch_loss;
    for (int b = 0; b < opt_.batch_size; ++b) {
      const auto& base = dataset_[rng_.below(static_cast<std::uint32_t>(dataset_.size()))];
      SceneSample sample = opt_.augment ? augment(base, rng_.next_u64()) : base;
      ForwardOut<float> fwd = model_.forward(sample.image);
      auto gt_masks = rasterize_gts(sample.instances, fwd.geom);
      Tensor<float> l = loss_total(fwd, gt_masks, opt_.loss, rng_);
      batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
    }
    batch_loss = mul_scalar(batch_loss, 1.0f / static_cast<float>(opt_.batch_size));
    const double loss_value = static_cast<double>(batch_loss.item());
    tape.backward(batch_loss);
    adam_.step(step_);

    TrainStepInfo info;
    info.step = step_;
    info.loss = loss_value;
    info.lr = adam_.lr_at(step_);
    ++step_;
    return info;
  }

  void run(const std::function<void(const TrainStepInfo&)>& on_step = nullptr) {
    while (step_ < opt_.total_steps) {
      TrainStepInfo info = run_step();
      if (on_step) on_step(info);
    }
  }

  // ---- persistence -------------------------------------------------------

  void save(const std::string& ckpt_path) const {
    save_checkpoint(ckpt_path, model_.params().all());
    std::map<std::string, StoredTensor> st;
    for (const auto& [name, mv] : adam_.state()) {
      StoredTensor m, v;
      m.shape = mv.first.shape();
      v.shape = mv.second.shape();
      m.data.assign(mv.first.data(), mv.first.data() + mv.first.size());
      v.data.assign(mv.second.data(), mv.second.data() + mv.second.size());
      st.emplace("m/" + name, std::move(m));
      st.emplace("v/" + name, std::move(v));
    }
    StoredTensor meta;
    meta.shape = {10};
    meta.data.resize(10, 0.0f);
    pack_u64(meta.data, 0, static_cast<std::uint64_t>(step_));
    const auto state = rng_.state();
    for (int i = 0; i < 4; ++i) pack_u64(meta.data, 2 + 2 * i, state[static_cast<size_t>(i)]);
    st.emplace("meta", std::move(meta));
    save_checkpoint_raw(ckpt_path + ".state", st);
  }

  void resume(const std::string& ckpt_path) {
    auto named = model_.params().all();
    std::map<std::string, Tensor<float>> mut(named.begin(), named.end());
    load_checkpoint_into(ckpt_path, mut);
    auto st = load_checkpoint_raw(ckpt_path + ".state");
    std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> mv;
    for (const auto& [name, t] : st) {
      if (name.rfind("m/", 0) == 0) mv[name.substr(2)].first = t.data;
      if (name.rfind("v/", 0) == 0) mv[name.substr(2)].second = t.data;
    }
    adam_.load_state(mv);
    const auto& meta = st.at("meta").data;
    step_ = static_cast<int>(unpack_u64(meta, 0));
    adam_.set_steps_taken(step_);
    Rng::State rs;
    for (int i = 0; i < 4; ++i) rs[static_cast<size_t>(i)] = unpack_u64(meta, 2 + 2 * i);
    rng_.set_state(rs);
  }

 private:
  // u64 values ride in the f32 payload as two bit-cast halves
  static void pack_u64(std::vector<float>& v, int at, std::uint64_t x) {
    const std::uint32_t lo = static_cast<std::uint32_t>(x & 0xffffffffULL);
    const std::uint32_t hi = static_cast<std::uint32_t>(x >> 32);
    std::memcpy(&v[static_cast<size_t>(at)], &lo, 4);
    std::memcpy(&v[static_cast<size_t>(at) + 1], &hi, 4);
  }
  static std::uint64_t unpack_u64(const std::vector<float>& v, int at) {
    std::uint32_t lo, hi;
    std::memcpy(&lo, &v[static_cast<size_t>(at)], 4);
    std::memcpy(&hi, &v[static_cast<size_t>(at) + 1], 4);
    return static_cast<std::uint64_t>(lo) | (static_cast<std::uint64_t>(hi) << 32);
  }

  Detector<float>& model_;
  std::vector<SceneSample> dataset_;
  TrainOptions opt_;
  AdamW<float> adam_;
  Rng rng_;
  int step_ = 0;
};

}  // namespace attr
