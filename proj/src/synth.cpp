#include "attr/synth.hpp"

#include <algorithm>
#include <cmath>

namespace attr {

namespace {

// Integer hash noise in [0,1); avoids libm so values are platform-stable.
double hash01(std::uint64_t x, std::uint64_t y, std::uint64_t salt) {
  std::uint64_t z = x * 0x9e3779b97f4a7c15ULL + y * 0xbf58476d1ce4e5b9ULL + salt;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinear value noise on a coarse lattice.
double value_noise(double x, double y, double cell, std::uint64_t salt) {
  const double gx = x / cell, gy = y / cell;
  const double fx = gx - std::floor(gx), fy = gy - std::floor(gy);
  const auto ix = static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(gx)) + (1 << 20));
  const auto iy = static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(gy)) + (1 << 20));
  const double v00 = hash01(ix, iy, salt), v10 = hash01(ix + 1, iy, salt);
  const double v01 = hash01(ix, iy + 1, salt), v11 = hash01(ix + 1, iy + 1, salt);
  const double sx = smooth(fx), sy = smooth(fy);
  return (v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy;
}

struct Baseline {
  // p(t) = center + (t-0.5)*len*dir + bow*4t(1-t)*normal,  t in [0,1]
  Vec2 center, dir, normal;
  double len = 0, bow = 0, thickness = 0;

  Vec2 at(double t) const {
    return center + (t - 0.5) * len * dir + bow * 4.0 * t * (1.0 - t) * normal;
  }
  Vec2 tangent(double t) const {
    Vec2 d = len * dir + bow * (4.0 - 8.0 * t) * normal;
    return d / std::sqrt(d.squaredNorm());
  }
};

struct InstanceDraft {
  Baseline base;
  Polygon ribbon;
  int glyph_count = 0;
};

Polygon ribbon_polygon(const Baseline& b, int samples) {
  std::vector<Vec2> top, bot;
  for (int i = 0; i <= samples; ++i) {
    const double t = static_cast<double>(i) / samples;
    const Vec2 p = b.at(t);
    const Vec2 tg = b.tangent(t);
    const Vec2 n(-tg.y(), tg.x());
    top.push_back(p + 0.5 * b.thickness * n);
    bot.push_back(p - 0.5 * b.thickness * n);
  }
  std::vector<Vec2> ring = top;
  ring.insert(ring.end(), bot.rbegin(), bot.rend());
  return Polygon(ring);
}

bool in_bounds(const Polygon& p, double w, double h, double margin) {
  for (const auto& v : p.pts)
    if (v.x() < margin || v.x() > w - margin || v.y() < margin || v.y() > h - margin)
      return false;
  return true;
}

// Ink coverage of a pixel center for one glyph, in the glyph's local frame
// (u along baseline within [-hw, hw], v across within [-hh, hh]).
bool glyph_hit(int kind, double u, double v, double hw, double hh) {
  switch (kind) {
    case 0:  // solid box
      return std::abs(u) <= hw && std::abs(v) <= hh;
    case 1: {  // ring
      const double r = std::sqrt((u * u) * (hh * hh) / (hw * hw) + v * v);
      return r <= hh && r >= 0.3 * hh;
    }
    default: {  // two bars
      const double bar = std::max(0.6, 0.65 * hw);
      return std::abs(v) <= hh && (std::abs(u - hw * 0.45) <= bar * 0.5 || std::abs(u + hw * 0.45) <= bar * 0.5);
    }
  }
}

void render_instance(Image& im, const Baseline& b, Rng& rng, const Eigen::Vector3d& ink) {
  const int h = image_h(im), w = image_w(im);
  const double pitch = b.thickness * rng.uniform(0.65, 0.85);
  const int n_glyphs = std::max(1, static_cast<int>(b.len / pitch));
  for (int g = 0; g < n_glyphs; ++g) {
    const double t = (g + 0.5) / n_glyphs;
    const Vec2 c = b.at(t);
    const Vec2 tg = b.tangent(t);
    const Vec2 nm(-tg.y(), tg.x());
    const int kind = static_cast<int>(rng.below(3));
    const double hw = 0.5 * pitch * rng.uniform(0.8, 0.98);
    const double hh = 0.5 * b.thickness * rng.uniform(0.8, 0.98);
    const double r = std::max(hw, hh) + 1.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - r)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(c.x() + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - r)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(c.y() + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        // 2x2 supersampled coverage
        int hits = 0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) {
            const Vec2 p(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy);
            const Vec2 d = p - c;
            if (glyph_hit(kind, d.dot(tg), d.dot(nm), hw, hh)) ++hits;
          }
        if (!hits) continue;
        const float cov = static_cast<float>(hits) * 0.25f;
        for (int ch = 0; ch < 3; ++ch) {
          const float old = image_px(im, ch, y, x);
          image_set_px(im, ch, y, x,
                       old + cov * (static_cast<float>(ink(ch)) - old));
        }
      }
    }
  }
}

}  // namespace

SceneSample generate_sample(std::uint64_t seed, const SynthConfig& cfg) {
  Rng rng(seed);
  SceneSample s;
  s.seed = seed;
  const int H = cfg.h, W = cfg.w;
  s.image = Image::zeros({3, H, W});

  // Textured background.
  const double base_lum = rng.uniform(0.3, 0.7);
  Eigen::Vector3d base;
  for (int c = 0; c < 3; ++c) base(c) = std::clamp(base_lum + rng.uniform(-0.08, 0.08), 0.05, 0.95);
  const std::uint64_t salt = rng.next_u64();
  const double noise_amp = rng.uniform(0.04, 0.1);
  const double noise_cell = rng.uniform(10.0, 24.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double n = value_noise(x + 0.5, y + 0.5, noise_cell, salt) - 0.5;
      for (int c = 0; c < 3; ++c)
        image_set_px(s.image, c, y, x,
                     static_cast<float>(std::clamp(base(c) + noise_amp * n, 0.0, 1.0)));
    }

  const int want = std::clamp(rng.range(cfg.min_instances, cfg.max_instances), 1, 8);
  const double small_hi = 0.9 * H / 16.0;
  const double big_lo = 1.15 * H / 16.0;
  const double big_hi = std::max(big_lo + 1.0, H / 6.0);

  std::vector<InstanceDraft> placed;
  for (int inst = 0; inst < want; ++inst) {
    // size class fixed per instance; placement rejection must not skew it
    const bool small = rng.bernoulli(cfg.small_text_prob);
    const double thickness =
        small ? rng.uniform(3.0, std::max(3.2, small_hi)) : rng.uniform(big_lo, big_hi);
    bool ok = false;
    for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
      Baseline b;
      b.thickness = thickness;
      const double max_len = 0.8 * W;
      b.len = std::clamp(b.thickness * rng.uniform(2.5, 8.0), 2.0 * b.thickness, max_len);
      // orientation as a normalized direction (no trig for platform-stable bits)
      const double slope = rng.uniform(-0.5, 0.5);
      const double inv = 1.0 / std::sqrt(1.0 + slope * slope);
      b.dir = Vec2(inv, slope * inv);
      b.normal = Vec2(-b.dir.y(), b.dir.x());
      b.bow = rng.bernoulli(cfg.curve_prob) ? rng.uniform(0.08, 0.22) * b.len *
                                                  (rng.bernoulli(0.5) ? 1.0 : -1.0)
                                            : 0.0;
      const double m = 0.5 * b.thickness + 2.0;
      b.center = Vec2(rng.uniform(m, W - m), rng.uniform(m, H - m));

      const int samples = std::clamp(static_cast<int>(b.len / 4.0), 3, 12);
      Polygon ribbon;
      try {
        ribbon = ribbon_polygon(b, samples);
      } catch (const GeometryError&) {
        continue;
      }
      if (!in_bounds(ribbon, W, H, 1.0)) continue;

      bool overlaps = false;
      for (const auto& other : placed) {
        if (polygon_iou(ribbon, other.ribbon, 128) >= 0.02) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;

      InstanceDraft d;
      d.base = b;
      d.ribbon = ribbon;
      placed.push_back(std::move(d));
      ok = true;
    }
    if (!ok && placed.empty() && inst == want - 1) {
      // guaranteed fallback: short horizontal ribbon at image center
      Baseline b;
      b.thickness = 3.0;
      b.len = std::min(12.0, 0.5 * W);
      b.dir = Vec2(1, 0);
      b.normal = Vec2(0, 1);
      b.bow = 0;
      b.center = Vec2(W * 0.5, H * 0.5);
      InstanceDraft d;
      d.base = b;
      d.ribbon = ribbon_polygon(b, 4);
      placed.push_back(std::move(d));
    }
  }

  // Ink contrasts with the background luminance.
  for (auto& d : placed) {
    Eigen::Vector3d ink;
    const double lum = base_lum >= 0.5 ? rng.uniform(0.0, 0.15) : rng.uniform(0.85, 1.0);
    for (int c = 0; c < 3; ++c) ink(c) = std::clamp(lum + rng.uniform(-0.06, 0.06), 0.0, 1.0);
    render_instance(s.image, d.base, rng, ink);
    s.instances.push_back(std::move(d.ribbon));
  }
  return s;
}

namespace {

struct Affine {
  // output = A * input + t
  Eigen::Matrix2d a;
  Vec2 t;

  Vec2 apply(const Vec2& p) const { return a * p + t; }
  Affine inverse() const {
    Affine inv;
    inv.a = a.inverse();
    inv.t = -inv.a * t;
    return inv;
  }
};

Affine augment_affine(const AugmentParams& p, double w, double h) {
  const Vec2 c(w * 0.5, h * 0.5);
  Eigen::Matrix2d rot;
  rot << std::cos(p.rot), -std::sin(p.rot), std::sin(p.rot), std::cos(p.rot);
  Eigen::Matrix2d flip = Eigen::Matrix2d::Identity();
  if (p.hflip) flip(0, 0) = -1;
  Affine af;
  af.a = rot * flip * p.scale;
  af.t = c - af.a * c + Vec2(p.tx, p.ty);
  return af;
}

}  // namespace

AugmentParams draw_augment_params(const SceneSample& s, Rng& rng) {
  AugmentParams p;
  p.scale = rng.uniform(0.5, 2.0);
  p.rot = rng.uniform(-10.0, 10.0) * M_PI / 180.0;
  p.hflip = rng.bernoulli(0.5);

  const double w = image_w(s.image), h = image_h(s.image);
  // Crop offset keeping one chosen instance fully inside the frame.
  p.tx = 0;
  p.ty = 0;
  if (!s.instances.empty()) {
    const auto& target = s.instances[rng.below(static_cast<std::uint32_t>(s.instances.size()))];
    Affine af = augment_affine(p, w, h);
    Eigen::AlignedBox2d box;
    for (const auto& v : target.pts) box.extend(af.apply(v));
    // allowed translation range so box fits in [0,w]x[0,h]
    const double lo_x = -box.min().x(), hi_x = w - box.max().x();
    const double lo_y = -box.min().y(), hi_y = h - box.max().y();
    if (lo_x <= hi_x && lo_y <= hi_y) {
      p.tx = rng.uniform(lo_x, hi_x);
      p.ty = rng.uniform(lo_y, hi_y);
    } else {
      // instance larger than the frame: center it
      p.tx = 0.5 * (lo_x + hi_x);
      p.ty = 0.5 * (lo_y + hi_y);
    }
  }
  return p;
}

SceneSample apply_augment(const SceneSample& s, const AugmentParams& p) {
  const int h = image_h(s.image), w = image_w(s.image);
  const Affine af = augment_affine(p, w, h);
  const Affine inv = af.inverse();

  SceneSample out;
  out.seed = s.seed;
  out.image = Image::zeros({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Vec2 src = inv.apply(Vec2(x + 0.5, y + 0.5));
      for (int c = 0; c < 3; ++c)
        image_set_px(out.image, c, y, x,
                     image_sample(s.image, c, static_cast<float>(src.x()),
                                  static_cast<float>(src.y())));
    }

  for (const auto& poly : s.instances) {
    std::vector<Vec2> pts;
    pts.reserve(poly.pts.size());
    for (const auto& v : poly.pts) pts.push_back(af.apply(v));
    // Clip to frame; drop instances that mostly leave it.
    Polygon moved;
    try {
      moved = Polygon(pts);
    } catch (const GeometryError&) {
      continue;
    }
    Eigen::AlignedBox2d frame(Vec2(0, 0), Vec2(w, h));
    Eigen::AlignedBox2d bb = moved.bbox();
    if (!frame.intersects(bb)) continue;
    if (frame.contains(bb)) {
      out.instances.push_back(std::move(moved));
      continue;
    }
    // Sutherland-Hodgman clip against the frame rectangle.
    std::vector<Vec2> ring = moved.pts;
    auto clip_edge = [&](auto inside, auto intersect) {
      std::vector<Vec2> next;
      const size_t n = ring.size();
      for (size_t i = 0; i < n; ++i) {
        const Vec2& a = ring[i];
        const Vec2& b = ring[(i + 1) % n];
        const bool ia = inside(a), ib = inside(b);
        if (ia) next.push_back(a);
        if (ia != ib) next.push_back(intersect(a, b));
      }
      ring = std::move(next);
    };
    auto lerp_x = [](const Vec2& a, const Vec2& b, double x) {
      const double t = (x - a.x()) / (b.x() - a.x());
      return Vec2(x, a.y() + t * (b.y() - a.y()));
    };
    auto lerp_y = [](const Vec2& a, const Vec2& b, double y) {
      const double t = (y - a.y()) / (b.y() - a.y());
      return Vec2(a.x() + t * (b.x() - a.x()), y);
    };
    clip_edge([&](const Vec2& v) { return v.x() >= 0; },
              [&](const Vec2& a, const Vec2& b) { return lerp_x(a, b, 0); });
    clip_edge([&](const Vec2& v) { return v.x() <= w; },
              [&](const Vec2& a, const Vec2& b) { return lerp_x(a, b, w); });
    clip_edge([&](const Vec2& v) { return v.y() >= 0; },
              [&](const Vec2& a, const Vec2& b) { return lerp_y(a, b, 0); });
    clip_edge([&](const Vec2& v) { return v.y() <= h; },
              [&](const Vec2& a, const Vec2& b) { return lerp_y(a, b, h); });
    if (ring.size() < 3) continue;
    try {
      Polygon clipped(ring);
      if (polygon_area(clipped) < 9.0 ||
          polygon_area(clipped) < 0.3 * std::abs(polygon_area(moved)))
        continue;
      out.instances.push_back(std::move(clipped));
    } catch (const GeometryError&) {
      continue;
    }
  }
  return out;
}

SceneSample augment(const SceneSample& s, std::uint64_t seed) {
  Rng rng(seed);
  return apply_augment(s, draw_augment_params(s, rng));
}

}  // namespace attr
