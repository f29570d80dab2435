#pragma once

#include "attr/image.hpp"
#include "attr/nn.hpp"

#include <memory>
#include <vector>

namespace attr {

constexpr int kPatchSize = 16;       // phi_lp patch edge; also the token stride
constexpr int kEarlyMapStride = 2;   // first conv layer stride
constexpr int kTextEmbedStride = 4;  // text embedding grid stride on the last scale

struct PyramidLevel {
  double scale = 1.0;
  int resized_h = 0, resized_w = 0;  // before padding
  Image image;                       // padded to a stride multiple
};

struct ImagePyramid {
  int base_h = 0, base_w = 0;
  std::vector<PyramidLevel> levels;
};

// Bilinear resize per scale, padded bottom/right with zeros so each level's
// dims are multiples of `stride`.
inline ImagePyramid build_pyramid(const Image& image, const std::vector<double>& scales,
                                  int stride = kPatchSize) {
  if (image_h(image) < 32 || image_w(image) < 32)
    throw TensorError("build_pyramid: image must be at least 32x32");
  ImagePyramid pyr;
  pyr.base_h = image_h(image);
  pyr.base_w = image_w(image);
  for (double s : scales) {
    PyramidLevel lvl;
    lvl.scale = s;
    lvl.resized_h = std::max(stride, static_cast<int>(std::lround(s * pyr.base_h)));
    lvl.resized_w = std::max(stride, static_cast<int>(std::lround(s * pyr.base_w)));
    Image resized = (lvl.resized_h == pyr.base_h && lvl.resized_w == pyr.base_w)
                        ? image
                        : image_resize(image, lvl.resized_h, lvl.resized_w);
    lvl.image = image_pad(resized, round_up(lvl.resized_h, stride), round_up(lvl.resized_w, stride));
    pyr.levels.push_back(std::move(lvl));
  }
  return pyr;
}

template <typename S>
struct LevelFeatures {
  Tensor<S> tokens;     // [h*w x c]
  int grid_h = 0, grid_w = 0;
  Tensor<S> early_map;  // [c0 x eh x ew], first conv layer output (pre-norm)
};

template <typename S>
struct ScaleFeatures {
  std::vector<LevelFeatures<S>> levels;

  int total_tokens() const {
    int n = 0;
    for (const auto& l : levels) n += l.grid_h * l.grid_w;
    return n;
  }
};

// Shared-weight projection applied to every pyramid level. The same parameter
// set is used regardless of pyramid depth.
template <typename S>
class Projection {
 public:
  virtual ~Projection() = default;
  virtual LevelFeatures<S> project(const Tensor<S>& level_image) const = 0;
  virtual bool has_early_map() const = 0;
  virtual int token_stride() const = 0;
};

// phi_lp: one shared linear layer over flattened P x P patches.
template <typename S>
class LinearProjection final : public Projection<S> {
 public:
  LinearProjection(ParamStore<S>& ps, int c, Rng& rng)
      : proj_(ps, "proj/lp", 3 * kPatchSize * kPatchSize, c, rng) {}

  LevelFeatures<S> project(const Tensor<S>& img) const override {
    LevelFeatures<S> out;
    out.grid_h = img.dim(1) / kPatchSize;
    out.grid_w = img.dim(2) / kPatchSize;
    out.tokens = proj_.forward(extract_patches(img, kPatchSize));
    return out;
  }
  bool has_early_map() const override { return false; }
  int token_stride() const override { return kPatchSize; }

 private:
  Linear<S> proj_;
};

// phi_conv: one conv layer followed by conv blocks, all stride 2.
template <typename S>
class ConvProjection final : public Projection<S> {
 public:
  ConvProjection(ParamStore<S>& ps, int c, Rng& rng) {
    stem_ = ConvLn<S>(ps, "proj/conv/stem", 3, c / 4, 3, 2, rng);
    const int widths[3] = {c / 2, c, c};
    int cin = c / 4;
    for (int i = 0; i < 3; ++i) {
      blocks_.emplace_back(ps, "proj/conv/b" + std::to_string(i), cin, widths[i], 3, 2, rng);
      cin = widths[i];
    }
  }

  LevelFeatures<S> project(const Tensor<S>& img) const override {
    LevelFeatures<S> out;
    Tensor<S> raw = stem_.conv_only(img);
    out.early_map = raw;
    Tensor<S> x = tokens_to_map(relu(stem_.ln.forward(map_to_tokens(raw))), raw.dim(1), raw.dim(2));
    for (const auto& b : blocks_) x = b.forward(x);
    out.grid_h = x.dim(1);
    out.grid_w = x.dim(2);
    out.tokens = map_to_tokens(x);
    return out;
  }
  bool has_early_map() const override { return true; }
  int token_stride() const override { return kPatchSize; }

 private:
  ConvLn<S> stem_;
  std::vector<ConvLn<S>> blocks_;
};

// Residual block, stride 2: y = skip(x) + conv2(relu(ln(conv1(x)))).
// Zeroing conv2 reduces the block to its strided 1x1 skip projection.
template <typename S>
struct ResBlock {
  Tensor<S> w1, w2, wskip;
  LayerNorm<S> ln;

  ResBlock(ParamStore<S>& ps, const std::string& name, int cin, int cout, Rng& rng) {
    w1 = ps.create(name + "/w1", {cout, cin, 3, 3});
    w2 = ps.create(name + "/w2", {cout, cout, 3, 3});
    wskip = ps.create(name + "/wskip", {cout, cin, 1, 1});
    xavier_uniform(w1, cin * 9, cout, rng);
    xavier_uniform(w2, cout * 9, cout, rng);
    xavier_uniform(wskip, cin, cout, rng);
    ln = LayerNorm<S>(ps, name + "/ln", cout);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> h = conv2d(x, w1, 2, -1);
    const int hh = h.dim(1), hw = h.dim(2);
    h = tokens_to_map(relu(ln.forward(map_to_tokens(h))), hh, hw);
    h = conv2d(h, w2, 1, -1);
    Tensor<S> s = conv2d(x, wskip, 2, 0);
    return add(s, h);
  }
};

// phi_res: the conv stem with residual blocks (2-4 of them).
template <typename S>
class ResProjection final : public Projection<S> {
 public:
  ResProjection(ParamStore<S>& ps, int c, int n_blocks, Rng& rng) : n_blocks_(n_blocks) {
    if (n_blocks < 2 || n_blocks > 4) throw TensorError("res projection: blocks must be 2..4");
    stem_ = ConvLn<S>(ps, "proj/res/stem", 3, c / 4, 3, 2, rng);
    int cin = c / 4;
    for (int i = 0; i < n_blocks; ++i) {
      const int cout = std::min(c, c / 4 << (i + 1));
      blocks_.push_back(std::make_shared<ResBlock<S>>(ps, "proj/res/b" + std::to_string(i), cin,
                                                      cout, rng));
      cin = cout;
    }
  }

  LevelFeatures<S> project(const Tensor<S>& img) const override {
    LevelFeatures<S> out;
    Tensor<S> raw = stem_.conv_only(img);
    out.early_map = raw;
    Tensor<S> x = tokens_to_map(relu(stem_.ln.forward(map_to_tokens(raw))), raw.dim(1), raw.dim(2));
    for (const auto& b : blocks_) x = b->forward(x);
    out.grid_h = x.dim(1);
    out.grid_w = x.dim(2);
    out.tokens = map_to_tokens(x);
    return out;
  }
  bool has_early_map() const override { return true; }
  int token_stride() const override { return kEarlyMapStride << n_blocks_; }

 private:
  int n_blocks_;
  ConvLn<S> stem_;
  std::vector<std::shared_ptr<ResBlock<S>>> blocks_;
};

template <typename S>
ScaleFeatures<S> project_pyramid(const ImagePyramid& pyr, const Projection<S>& proj) {
  ScaleFeatures<S> out;
  for (const auto& lvl : pyr.levels) out.levels.push_back(proj.project(lvl.image.cast<S>()));
  return out;
}

}  // namespace attr
