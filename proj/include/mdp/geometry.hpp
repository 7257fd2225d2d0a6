#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mdp/core.hpp"

namespace mdp {

struct ImageExtent {
  int width = 1;
  int height = 1;

  bool valid() const { return width >= 1 && height >= 1; }
  double diagonal() const { return std::hypot(static_cast<double>(width), static_cast<double>(height)); }

  friend bool operator==(const ImageExtent&, const ImageExtent&) = default;
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

/// Fraction of the box area that lies within the image rectangle.
inline double inside_fraction(const BoundingBox& box, const ImageExtent& img) {
  const BoundingBox frame{0.0, 0.0, static_cast<double>(img.width), static_cast<double>(img.height)};
  return std::clamp(intersection_area(box, frame) / box.area(), 0.0, 1.0);
}

/// Intersection of the box with the image. A box fully outside comes back
/// with zero size (`valid()` is false).
inline BoundingBox clip_to_image(const BoundingBox& box, const ImageExtent& img) {
  const double x0 = std::clamp(box.x, 0.0, static_cast<double>(img.width));
  const double y0 = std::clamp(box.y, 0.0, static_cast<double>(img.height));
  const double x1 = std::clamp(box.right(), 0.0, static_cast<double>(img.width));
  const double y1 = std::clamp(box.bottom(), 0.0, static_cast<double>(img.height));
  return {x0, y0, x1 - x0, y1 - y0};
}

enum class SampleLabel : std::uint8_t { Positive, Negative };

struct SynthesisWindow {
  double anchor_min;
  double anchor_max;
  double others_max;
  double synthetic_max;
};

inline SynthesisWindow synthesis_window(SampleLabel label) {
  if (label == SampleLabel::Negative) return {0.1, 0.3, 0.3, 0.5};
  return {0.5, 0.8, 0.8, 0.5};
}

/// Acceptance predicate for a synthetic sample box.
inline bool synthetic_box_admissible(const BoundingBox& candidate, const BoundingBox& anchor,
                                     std::span<const BoundingBox> others, std::span<const BoundingBox> synthetic,
                                     SampleLabel label) {
  const SynthesisWindow win = synthesis_window(label);
  const double a = iou(candidate, anchor);
  if (!(a > win.anchor_min && a < win.anchor_max)) return false;
  for (const auto& o : others) {
    if (!(iou(candidate, o) < win.others_max)) return false;
  }
  for (const auto& s : synthetic) {
    if (!(iou(candidate, s) < win.synthetic_max)) return false;
  }
  return true;
}

/// Rejection-samples shifted/rescaled copies of `anchor` that fall in the IOU
/// window of `label`. Center shifts are uniform in +-0.6 (w, h), scales are
/// log-uniform in [0.6, 1.6], with at most 100 proposals per requested box.
/// A short result means the neighbourhood is too crowded.
inline std::vector<BoundingBox> synthesize_boxes(const BoundingBox& anchor, std::span<const BoundingBox> others,
                                                 std::span<const BoundingBox> existing_synth, SampleLabel label,
                                                 std::size_t count, std::uint64_t seed) {
  expects(anchor.valid(), "synthesize_boxes: invalid anchor");
  constexpr int kAttemptsPerBox = 100;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(-0.6, 0.6);
  std::uniform_real_distribution<double> log_scale(std::log(0.6), std::log(1.6));

  std::vector<BoundingBox> accepted_all(existing_synth.begin(), existing_synth.end());
  std::vector<BoundingBox> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < kAttemptsPerBox; ++attempt) {
      const double cx = anchor.cx() + shift(rng) * anchor.w;
      const double cy = anchor.cy() + shift(rng) * anchor.h;
      const double w = anchor.w * std::exp(log_scale(rng));
      const double h = anchor.h * std::exp(log_scale(rng));
      const BoundingBox cand = BoundingBox::from_center(cx, cy, w, h);
      if (synthetic_box_admissible(cand, anchor, others, accepted_all, label)) {
        accepted_all.push_back(cand);
        out.push_back(cand);
        break;
      }
    }
  }
  return out;
}

}  // namespace mdp
