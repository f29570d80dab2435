#pragma once

#include "attr/config.hpp"
#include "attr/decoder.hpp"
#include "attr/encoder.hpp"
#include "attr/pyramid.hpp"

#include <memory>
#include <string>

namespace attr {

struct ModelConfig {
  std::vector<double> scales{0.5, 1.0, 2.0};
  std::string projection = "res";
  int res_blocks = 3;
  int embed_dim = 64;
  int encoder_units = 6;
  int heads = 8;
  int msda_points = 4;
  int num_queries = 20;
  int num_decoders = 9;
  bool aux_loss = true;

  static ModelConfig from(const Config& cfg) {
    ModelConfig mc;
    mc.scales = cfg.get_list("scales");
    mc.projection = cfg.str("projection");
    mc.res_blocks = cfg.geti("res_blocks");
    mc.embed_dim = cfg.geti("embed_dim");
    mc.encoder_units = cfg.geti("encoder_units");
    mc.heads = cfg.geti("heads");
    mc.msda_points = cfg.geti("msda_points");
    mc.num_queries = cfg.geti("num_queries");
    mc.num_decoders = cfg.geti("num_decoders");
    mc.aux_loss = cfg.getb("aux_loss");
    if (mc.embed_dim % 4 != 0) throw ConfigError("embed_dim must divide by 4");
    if (mc.embed_dim % mc.heads != 0) throw ConfigError("heads must divide embed_dim");
    return mc;
  }
};

template <typename S>
struct ForwardOut {
  PyramidGeom geom;
  std::vector<Snapshot<S>> snapshots;  // [0] = initial queries, back() = final
  TextEmbedding<S> text_embedding;
  std::vector<Tensor<S>> encoded;  // per level tokens
};

// The full detector: pyramid projection with shared weights, deformable
// attention encoder, text embedding, and scale-wise decoders.
template <typename S>
class Detector {
 public:
  explicit Detector(const ModelConfig& mc, std::uint64_t init_seed = 1)
      : mc_(mc) {
    Rng rng(init_seed);
    const int c = mc.embed_dim;
    const int nl = static_cast<int>(mc.scales.size());

    if (mc.projection == "lp") {
      proj_ = std::make_unique<LinearProjection<S>>(params_, c, rng);
    } else if (mc.projection == "conv") {
      proj_ = std::make_unique<ConvProjection<S>>(params_, c, rng);
    } else if (mc.projection == "res") {
      proj_ = std::make_unique<ResProjection<S>>(params_, c, mc.res_blocks, rng);
    } else {
      throw ConfigError("unknown projection: " + mc.projection);
    }

    encoder_ = Encoder<S>(params_, c, mc.encoder_units, mc.heads, mc.msda_points, nl, rng);
    encoder_.set_update_attention(mc.heads, mc.msda_points);
    if (proj_->has_early_map()) encoder_.bind_text_init(params_, c / 4, rng);
    decoder_ = Decoder<S>(params_, c, mc.heads, mc.num_queries, mc.num_decoders, rng);
  }

  const ModelConfig& config() const { return mc_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const Projection<S>& projection() const { return *proj_; }
  const Encoder<S>& encoder() const { return encoder_; }
  const Decoder<S>& decoder() const { return decoder_; }
  Decoder<S>& decoder_mut() { return decoder_; }

  ForwardOut<S> forward(const Image& image) const {
    ImagePyramid pyr = build_pyramid(image, mc_.scales, proj_->token_stride());
    ForwardOut<S> out;
    out.geom = make_geom(pyr, proj_->token_stride());

    ScaleFeatures<S> feats = project_pyramid(pyr, *proj_);
    for (int l = 0; l < out.geom.num_levels(); ++l) {
      // grid dims from the projection must agree with the geometry
      if (feats.levels[static_cast<size_t>(l)].grid_h != out.geom.levels[static_cast<size_t>(l)].grid_h ||
          feats.levels[static_cast<size_t>(l)].grid_w != out.geom.levels[static_cast<size_t>(l)].grid_w)
        throw TensorError("projection grid does not match pyramid geometry");
    }

    TextEmbedding<S> e0 = encoder_.init_text_embedding(feats, out.geom);
    out.encoded = encoder_.encode(feats, out.geom);
    out.text_embedding = encoder_.update_text_embedding(e0, out.encoded, out.geom);

    std::vector<Tensor<S>> level_pos;
    for (int l = 0; l < out.geom.num_levels(); ++l)
      level_pos.push_back(encoder_.pos_embed(l, out.geom.levels[static_cast<size_t>(l)].grid_h,
                                             out.geom.levels[static_cast<size_t>(l)].grid_w));
    out.snapshots = decoder_.decode(out.encoded, level_pos, out.text_embedding, out.geom);
    return out;
  }

  // Parameter grouping for the optimizer: the shared-weight projection is the
  // group that trains with the reduced learning-rate multiplier.
  static bool is_backbone_param(const std::string& name) {
    return name.rfind("proj/", 0) == 0;
  }

 private:
  ModelConfig mc_;
  ParamStore<S> params_;
  std::unique_ptr<Projection<S>> proj_;
  Encoder<S> encoder_;
  Decoder<S> decoder_;
};

}  // namespace attr
