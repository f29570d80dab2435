#pragma once

#include "attr/tensor.hpp"

#include <algorithm>
#include <cmath>

// Plain image helpers for the data path (no autograd participation).
// Images are Tensor<float> of shape [3 x H x W] with values in [0,1].

namespace attr {

using Image = Tensor<float>;

inline int image_h(const Image& im) { return im.dim(1); }
inline int image_w(const Image& im) { return im.dim(2); }

inline float image_px(const Image& im, int c, int y, int x) {
  return im.at((static_cast<std::int64_t>(c) * im.dim(1) + y) * im.dim(2) + x);
}

inline void image_set_px(Image& im, int c, int y, int x, float v) {
  im.at((static_cast<std::int64_t>(c) * im.dim(1) + y) * im.dim(2) + x) = v;
}

// Bilinear sample with clamp-to-edge; (x, y) in source pixel coordinates,
// pixel centers at integer + 0.5.
inline float image_sample(const Image& im, int c, float x, float y) {
  const int h = im.dim(1), w = im.dim(2);
  const float gx = x - 0.5f, gy = y - 0.5f;
  const int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
  const float fx = gx - static_cast<float>(x0), fy = gy - static_cast<float>(y0);
  auto px = [&](int xi, int yi) {
    return image_px(im, c, std::clamp(yi, 0, h - 1), std::clamp(xi, 0, w - 1));
  };
  return (1 - fx) * (1 - fy) * px(x0, y0) + fx * (1 - fy) * px(x0 + 1, y0) +
         (1 - fx) * fy * px(x0, y0 + 1) + fx * fy * px(x0 + 1, y0 + 1);
}

inline Image image_resize(const Image& im, int oh, int ow) {
  Image out = Image::zeros({im.dim(0), oh, ow});
  const float sx = static_cast<float>(im.dim(2)) / static_cast<float>(ow);
  const float sy = static_cast<float>(im.dim(1)) / static_cast<float>(oh);
  for (int c = 0; c < im.dim(0); ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        image_set_px(out, c, y, x,
                     image_sample(im, c, (static_cast<float>(x) + 0.5f) * sx,
                                  (static_cast<float>(y) + 0.5f) * sy));
  return out;
}

// Pad bottom/right with zeros to the given dims.
inline Image image_pad(const Image& im, int oh, int ow) {
  if (oh == im.dim(1) && ow == im.dim(2)) return im;
  Image out = Image::zeros({im.dim(0), oh, ow});
  for (int c = 0; c < im.dim(0); ++c)
    for (int y = 0; y < im.dim(1); ++y)
      for (int x = 0; x < im.dim(2); ++x)
        image_set_px(out, c, y, x, image_px(im, c, y, x));
  return out;
}

inline int round_up(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

}  // namespace attr
