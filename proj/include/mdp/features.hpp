#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mdp/core.hpp"
#include "mdp/geometry.hpp"
#include "mdp/patch_tracking.hpp"

namespace mdp {

/// Dense response surface, row-major.
struct ScoreMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  bool degenerate = false;  // template had zero variance

  ScoreMap() = default;
  ScoreMap(int w, int h, double fill = 0.0) : width(w), height(h), values(static_cast<std::size_t>(w * h), fill) {}
  ScoreMap(int w, int h, std::vector<double> v) : width(w), height(h), values(std::move(v)) {
    expects(values.size() == static_cast<std::size_t>(w * h), "ScoreMap: size mismatch");
  }

  double& at(int x, int y) { return values[static_cast<std::size_t>(y * width + x)]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y * width + x)]; }
  bool empty() const { return values.empty(); }

  /// Row-major first occurrence of the maximum.
  std::pair<int, int> argmax() const {
    expects(!empty(), "ScoreMap::argmax on empty map");
    const auto it = std::max_element(values.begin(), values.end());
    const int idx = static_cast<int>(it - values.begin());
    return {idx % width, idx / width};
  }
};

enum class FeatureKind : std::uint8_t { Active, Tracked, Lost };

inline std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Active: return "active";
    case FeatureKind::Tracked: return "tracked";
    case FeatureKind::Lost: return "lost";
  }
  return "?";
}

struct FeatureVector {
  std::vector<double> values;
  FeatureKind tag = FeatureKind::Lost;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

inline constexpr std::size_t kActiveFeatureDim = 6;
inline constexpr std::size_t kLostFeatureDim = 7;

/// Normalized cross-correlation of `templ` at every placement inside
/// `search`; output is (search - templ + 1) per axis. Windows of zero
/// variance score 0, and a flat template yields an all-zero map flagged
/// `degenerate`.
inline ScoreMap ncc_response(const GrayImage& templ, const GrayImage& search) {
  expects(!templ.empty() && templ.width() <= search.width() && templ.height() <= search.height(),
          "ncc_response: template must fit inside the search image");
  const int ow = search.width() - templ.width() + 1;
  const int oh = search.height() - templ.height() + 1;
  const int tw = templ.width();
  const int th = templ.height();
  const double n = static_cast<double>(tw) * th;

  double tsum = 0.0;
  for (float v : templ.data()) tsum += v;
  const double tmean = tsum / n;
  std::vector<double> tz(templ.data().size());
  double tnorm2 = 0.0;
  for (std::size_t i = 0; i < tz.size(); ++i) {
    tz[i] = templ.data()[i] - tmean;
    tnorm2 += tz[i] * tz[i];
  }
  ScoreMap map(ow, oh);
  if (tnorm2 <= 1e-12) {
    map.degenerate = true;
    return map;
  }

  // Integral images of the search raster for O(1) window statistics.
  const int sw = search.width();
  const int sh = search.height();
  std::vector<double> s1(static_cast<std::size_t>((sw + 1) * (sh + 1)), 0.0), s2(s1.size(), 0.0);
  auto I = [sw](int x, int y) { return static_cast<std::size_t>(y * (sw + 1) + x); };
  for (int y = 0; y < sh; ++y) {
    for (int x = 0; x < sw; ++x) {
      const double v = search.at(x, y);
      s1[I(x + 1, y + 1)] = v + s1[I(x, y + 1)] + s1[I(x + 1, y)] - s1[I(x, y)];
      s2[I(x + 1, y + 1)] = v * v + s2[I(x, y + 1)] + s2[I(x + 1, y)] - s2[I(x, y)];
    }
  }
  const double tnorm = std::sqrt(tnorm2);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double sum = s1[I(ox + tw, oy + th)] - s1[I(ox, oy + th)] - s1[I(ox + tw, oy)] + s1[I(ox, oy)];
      const double sq = s2[I(ox + tw, oy + th)] - s2[I(ox, oy + th)] - s2[I(ox + tw, oy)] + s2[I(ox, oy)];
      const double var = sq - sum * sum / n;
      if (var <= 1e-12) continue;
      double num = 0.0;
      for (int y = 0; y < th; ++y) {
        const double* trow = &tz[static_cast<std::size_t>(y * tw)];
        for (int x = 0; x < tw; ++x) num += trow[x] * search.at(ox + x, oy + y);
      }
      map.at(ox, oy) = std::clamp(num / (tnorm * std::sqrt(var)), -1.0, 1.0);
    }
  }
  return map;
}

/// Correlates the template patch's object region over the whole search patch.
inline ScoreMap ncc_response(const Patch& templ, const Patch& search) {
  const BoundingBox& reg = templ.object_region();
  const int x0 = static_cast<int>(std::lround(reg.x));
  const int y0 = static_cast<int>(std::lround(reg.y));
  const int w = static_cast<int>(std::lround(reg.w));
  const int h = static_cast<int>(std::lround(reg.h));
  GrayImage crop(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) crop.at(x, y) = templ.pixels().clamped(x0 + x, y0 + y);
  }
  return ncc_response(crop, search.pixels());
}

/// Row maxima followed by column maxima.
inline FeatureVector rowcol_max(const ScoreMap& map) {
  expects(!map.empty(), "rowcol_max: empty map");
  FeatureVector f;
  f.values.reserve(static_cast<std::size_t>(map.width + map.height));
  for (int y = 0; y < map.height; ++y) {
    double m = -std::numeric_limits<double>::infinity();
    for (int x = 0; x < map.width; ++x) m = std::max(m, map.at(x, y));
    f.values.push_back(m);
  }
  for (int x = 0; x < map.width; ++x) {
    double m = -std::numeric_limits<double>::infinity();
    for (int y = 0; y < map.height; ++y) m = std::max(m, map.at(x, y));
    f.values.push_back(m);
  }
  return f;
}

/// The k largest responses in descending order. With radius > 0 every cell
/// within Chebyshev distance `radius` of an accepted peak is suppressed.
/// Missing entries are zero-padded.
inline FeatureVector topk_nms(const ScoreMap& map, std::size_t k = 10, int radius = 3) {
  expects(k >= 1, "topk_nms: k must be >= 1");
  FeatureVector f;
  f.values.reserve(k);
  std::vector<char> suppressed(map.values.size(), 0);
  while (f.values.size() < k) {
    int best = -1;
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      if (suppressed[i]) continue;
      if (best < 0 || map.values[i] > map.values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    if (best < 0) break;
    f.values.push_back(map.values[static_cast<std::size_t>(best)]);
    const int bx = best % map.width;
    const int by = best / map.width;
    const int r = std::max(0, radius);
    for (int y = std::max(0, by - r); y <= std::min(map.height - 1, by + r); ++y) {
      for (int x = std::max(0, bx - r); x <= std::min(map.width - 1, bx + r); ++x) {
        suppressed[static_cast<std::size_t>(y * map.width + x)] = 1;
      }
    }
  }
  f.values.resize(k, 0.0);
  return f;
}

/// [mean, median, min, max] over concentric rings around the argmax. The first
/// ring is the disc d <= radii[0]; ring i covers radii[i-1] < d <= radii[i].
/// Rings with no cells emit zeros.
inline FeatureVector ring_stats(const ScoreMap& map, std::span<const double> radii) {
  expects(!map.empty(), "ring_stats: empty map");
  for (std::size_t i = 1; i < radii.size(); ++i) {
    expects(radii[i] > radii[i - 1], "ring_stats: radii must be strictly increasing");
  }
  const auto [ax, ay] = map.argmax();
  std::vector<std::vector<double>> rings(radii.size());
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double d = std::hypot(static_cast<double>(x - ax), static_cast<double>(y - ay));
      for (std::size_t i = 0; i < radii.size(); ++i) {
        const double lo = i == 0 ? -1.0 : radii[i - 1];
        if (d > lo && d <= radii[i]) {
          rings[i].push_back(map.at(x, y));
          break;
        }
      }
    }
  }
  FeatureVector f;
  for (auto& ring : rings) {
    if (ring.empty()) {
      f.values.insert(f.values.end(), {0.0, 0.0, 0.0, 0.0});
      continue;
    }
    double sum = 0.0;
    for (double v : ring) sum += v;
    const auto [mn, mx] = std::minmax_element(ring.begin(), ring.end());
    const double lo = *mn, hi = *mx;
    f.values.push_back(sum / static_cast<double>(ring.size()));
    f.values.push_back(detail::median(ring));
    f.values.push_back(lo);
    f.values.push_back(hi);
  }
  return f;
}

/// [x/W, y/H, w/W, h/H, w/h, confidence]
inline FeatureVector active_features(const Detection& det, const ImageExtent& img) {
  expects(det.box.valid() && img.valid(), "active_features: invalid input");
  const double W = img.width, H = img.height;
  return {{det.box.x / W, det.box.y / H, det.box.w / W, det.box.h / H, det.box.w / det.box.h, det.confidence},
          FeatureKind::Active};
}

/// [exp(-median FB), median NCC, height ratio, width ratio, IOU,
///  exp(-center distance / image diagonal), confidence]
inline FeatureVector lost_features(const TrackResult& summary, const BoundingBox& predicted, const Detection& det,
                                   const ImageExtent& img, FeatureKind tag = FeatureKind::Lost) {
  expects(predicted.valid() && det.box.valid() && img.valid(), "lost_features: invalid input");
  const double fb = summary.success ? std::exp(-summary.median_fb) : 0.0;
  const double ncc = summary.success ? summary.median_ncc : 0.0;
  const double hr = std::min(predicted.h, det.box.h) / std::max(predicted.h, det.box.h);
  const double wr = std::min(predicted.w, det.box.w) / std::max(predicted.w, det.box.w);
  const double dist = std::hypot(predicted.cx() - det.box.cx(), predicted.cy() - det.box.cy());
  return {{fb, ncc, hr, wr, iou(predicted, det.box), std::exp(-dist / img.diagonal()), det.confidence}, tag};
}

}  // namespace mdp
