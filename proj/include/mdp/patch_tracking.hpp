#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mdp/core.hpp"
#include "mdp/geometry.hpp"
#include "mdp/image.hpp"

namespace mdp {

/// Canonical ROI layout: the object is resampled to object_w x object_h and
/// surrounded by border_x / border_y pixels of context on each side.
struct RoiParams {
  int object_w = 45;
  int object_h = 60;
  int border_x = 45;
  int border_y = 120;

  int roi_w() const { return object_w + 2 * border_x; }
  int roi_h() const { return object_h + 2 * border_y; }
  BoundingBox object_region() const {
    return {static_cast<double>(border_x), static_cast<double>(border_y), static_cast<double>(object_w),
            static_cast<double>(object_h)};
  }
  bool valid() const { return object_w > 0 && object_h > 0 && border_x > 0 && border_y > 0; }
};

struct LkParams {
  int levels = 3;
  int grid = 10;
  int window = 7;
  int max_iters = 20;
  double epsilon = 0.01;
  double fb_threshold = 2.0;
  double min_eigen = 1e-5;
  int ncc_window = 11;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// An ROI resampled from one frame. `object_region` is where the source box
/// landed inside the patch.
class Patch {
 public:
  Patch() = default;
  Patch(GrayImage pixels, int frame, BoundingBox source_box, BoundingBox object_region, int levels = 3)
      : pixels_(std::move(pixels)), frame_(frame), source_box_(source_box), object_region_(object_region) {
    pyramid_ = std::make_shared<const std::vector<PyramidLevel>>(build_pyramid(pixels_, levels));
  }

  const GrayImage& pixels() const { return pixels_; }
  int width() const { return pixels_.width(); }
  int height() const { return pixels_.height(); }
  int frame() const { return frame_; }
  const BoundingBox& source_box() const { return source_box_; }
  const BoundingBox& object_region() const { return object_region_; }

  std::shared_ptr<const std::vector<PyramidLevel>> pyramid(int levels) const {
    if (pyramid_ && static_cast<int>(pyramid_->size()) == levels) return pyramid_;
    return std::make_shared<const std::vector<PyramidLevel>>(build_pyramid(pixels_, levels));
  }

 private:
  GrayImage pixels_;
  int frame_ = 0;
  BoundingBox source_box_;
  BoundingBox object_region_;
  std::shared_ptr<const std::vector<PyramidLevel>> pyramid_;
};

/// Resamples `box` anisotropically to the canonical object size and embeds it
/// with its surrounding context. Context beyond the image is edge-replicated.
inline Patch extract_roi(const GrayImage& frame_image, const BoundingBox& box, const RoiParams& params, int frame = 0,
                         int pyramid_levels = 3) {
  expects(!frame_image.empty(), "extract_roi: empty raster");
  expects(params.valid(), "extract_roi: invalid ROI parameters");
  expects(std::isfinite(box.x) && std::isfinite(box.y) && box.w >= 1.0 && box.h >= 1.0,
          "extract_roi: degenerate box (w or h < 1 px)");
  const double sx = box.w / params.object_w;
  const double sy = box.h / params.object_h;
  GrayImage roi(params.roi_w(), params.roi_h());
  for (int v = 0; v < roi.height(); ++v) {
    const double y = box.y + (v + 0.5 - params.border_y) * sy - 0.5;
    for (int u = 0; u < roi.width(); ++u) {
      const double x = box.x + (u + 0.5 - params.border_x) * sx - 0.5;
      roi.at(u, v) = std::clamp(frame_image.sample(x, y), 0.0f, 1.0f);
    }
  }
  return Patch(std::move(roi), frame, box, params.object_region(), pyramid_levels);
}

/// Maps a box in `patch` coordinates back to the image the patch came from.
inline BoundingBox roi_to_image(const Patch& patch, const BoundingBox& roi_box) {
  const BoundingBox& src = patch.source_box();
  const BoundingBox& reg = patch.object_region();
  const double sx = src.w / reg.w;
  const double sy = src.h / reg.h;
  return {src.x + (roi_box.x - reg.x) * sx, src.y + (roi_box.y - reg.y) * sy, roi_box.w * sx, roi_box.h * sy};
}

struct TrackResult {
  std::vector<Point2> points;   // source lattice
  std::vector<Point2> flow;     // forward displacement per point
  std::vector<double> fb_error; // +inf for points LK lost
  std::vector<double> ncc;
  double median_fb = std::numeric_limits<double>::infinity();
  double median_ncc = 0.0;
  BoundingBox box;              // predicted object box in the destination patch
  bool success = false;
};

/// grid x grid lattice over the patch's object region, inset so the
/// integration window stays inside the region.
inline std::vector<Point2> make_grid(const BoundingBox& region, const LkParams& params) {
  const double margin = std::min({params.window / 2 + 1.0, region.w / 4.0, region.h / 4.0});
  std::vector<Point2> pts;
  const int n = std::max(1, params.grid);
  pts.reserve(static_cast<std::size_t>(n * n));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double tx = n == 1 ? 0.5 : static_cast<double>(i) / (n - 1);
      const double ty = n == 1 ? 0.5 : static_cast<double>(j) / (n - 1);
      pts.push_back({region.x + margin + tx * (region.w - 1.0 - 2.0 * margin),
                     region.y + margin + ty * (region.h - 1.0 - 2.0 * margin)});
    }
  }
  return pts;
}

inline std::vector<Point2> make_grid(const Patch& patch, const LkParams& params) {
  return make_grid(patch.object_region(), params);
}

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  if (std::isinf(hi) && std::isinf(lo)) return hi;
  return 0.5 * (lo + hi);
}

/// Pyramidal iterative Lucas-Kanade for one point. Returns nullopt when the
/// structure tensor is degenerate or the point leaves the destination.
inline std::optional<Point2> lk_point(const std::vector<PyramidLevel>& src, const std::vector<PyramidLevel>& dst,
                                      Point2 p, const LkParams& params) {
  constexpr int kMaxHalf = 15;
  const int half = params.window / 2;
  expects(half <= kMaxHalf, "lk: window larger than 31");
  const int levels = static_cast<int>(src.size());
  const std::size_t n = static_cast<std::size_t>((2 * half + 1) * (2 * half + 1));
  std::array<float, (2 * kMaxHalf + 1) * (2 * kMaxHalf + 1)> iw, ixw, iyw, jw;
  double gx = 0.0, gy = 0.0;
  for (int l = levels - 1; l >= 0; --l) {
    const double scale = 1.0 / static_cast<double>(1 << l);
    const double px = p.x * scale;
    const double py = p.y * scale;
    const PyramidLevel& s = src[static_cast<std::size_t>(l)];
    const PyramidLevel& d = dst[static_cast<std::size_t>(l)];

    s.image.sample_window(px, py, half, iw.data());
    s.grad_x.sample_window(px, py, half, ixw.data());
    s.grad_y.sample_window(px, py, half, iyw.data());
    double a = 0.0, b = 0.0, c = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      a += ixw[k] * ixw[k];
      b += ixw[k] * iyw[k];
      c += iyw[k] * iyw[k];
    }
    const double det = a * c - b * b;
    const double min_eig = 0.5 * (a + c - std::sqrt((a - c) * (a - c) + 4.0 * b * b)) / static_cast<double>(n);
    if (min_eig < params.min_eigen || std::abs(det) < 1e-12) return std::nullopt;

    double nx = 0.0, ny = 0.0;
    for (int it = 0; it < params.max_iters; ++it) {
      const double qx = px + gx + nx;
      const double qy = py + gy + ny;
      double bx = 0.0, by = 0.0;
      d.image.sample_window(qx, qy, half, jw.data());
      for (std::size_t k = 0; k < n; ++k) {
        const double diff = iw[k] - jw[k];
        bx += diff * ixw[k];
        by += diff * iyw[k];
      }
      const double ex = (c * bx - b * by) / det;
      const double ey = (a * by - b * bx) / det;
      nx += ex;
      ny += ey;
      if (!std::isfinite(nx) || !std::isfinite(ny)) return std::nullopt;
      if (std::hypot(ex, ey) < params.epsilon) break;
    }
    if (l > 0) {
      gx = 2.0 * (gx + nx);
      gy = 2.0 * (gy + ny);
    } else {
      gx += nx;
      gy += ny;
    }
  }
  const Point2 out{p.x + gx, p.y + gy};
  const auto& base = dst.front().image;
  if (out.x < 0.0 || out.y < 0.0 || out.x > base.width() - 1.0 || out.y > base.height() - 1.0) return std::nullopt;
  return out;
}

inline double window_ncc(const GrayImage& a, Point2 pa, const GrayImage& b, Point2 pb, int window) {
  const int half = window / 2;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  int n = 0;
  for (int dy = -half; dy <= half; ++dy) {
    for (int dx = -half; dx <= half; ++dx) {
      const double va = a.sample(pa.x + dx, pa.y + dy);
      const double vb = b.sample(pb.x + dx, pb.y + dy);
      sa += va;
      sb += vb;
      saa += va * va;
      sbb += vb * vb;
      sab += va * vb;
      ++n;
    }
  }
  const double cov = sab - sa * sb / n;
  const double va = saa - sa * sa / n;
  const double vb = sbb - sb * sb / n;
  if (va <= 1e-12 || vb <= 1e-12) return 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

}  // namespace detail

/// Forward-backward pyramidal LK between two ROIs. The predicted box is the
/// source object region moved by the median flow and rescaled by the median
/// pairwise-distance ratio of the points that survived the FB check.
inline TrackResult fb_lk_track(const Patch& src, const Patch& dst, std::span<const Point2> grid,
                               const LkParams& params = {}) {
  expects(src.width() == dst.width() && src.height() == dst.height(), "fb_lk_track: patch sizes differ");
  const auto sp = src.pyramid(params.levels);
  const auto dp = dst.pyramid(params.levels);
  const double inf = std::numeric_limits<double>::infinity();

  TrackResult r;
  r.points.assign(grid.begin(), grid.end());
  r.flow.assign(grid.size(), Point2{});
  r.fb_error.assign(grid.size(), inf);
  r.ncc.assign(grid.size(), 0.0);
  r.box = src.object_region();
  std::vector<Point2> fwd(grid.size());
  std::vector<char> ok(grid.size(), 0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto f = detail::lk_point(*sp, *dp, grid[i], params);
    if (!f) continue;
    const auto b = detail::lk_point(*dp, *sp, *f, params);
    if (!b) continue;
    ok[i] = 1;
    fwd[i] = *f;
    r.flow[i] = {f->x - grid[i].x, f->y - grid[i].y};
    r.fb_error[i] = distance(grid[i], *b);
    r.ncc[i] = detail::window_ncc(src.pixels(), grid[i], dst.pixels(), *f, params.ncc_window);
  }
  r.median_fb = grid.empty() ? inf : detail::median(r.fb_error);

  std::vector<std::size_t> keep;
  std::vector<double> nccs;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (ok[i]) nccs.push_back(r.ncc[i]);
    if (ok[i] && r.fb_error[i] < params.fb_threshold) keep.push_back(i);
  }
  r.median_ncc = nccs.empty() ? 0.0 : detail::median(nccs);
  if (keep.empty()) return r;

  std::vector<double> dxs, dys;
  for (auto i : keep) {
    dxs.push_back(r.flow[i].x);
    dys.push_back(r.flow[i].y);
  }
  const double mdx = detail::median(dxs);
  const double mdy = detail::median(dys);
  double scale = 1.0;
  if (keep.size() >= 2) {
    std::vector<double> ratios;
    ratios.reserve(keep.size() * (keep.size() - 1) / 2);
    for (std::size_t a = 0; a < keep.size(); ++a) {
      for (std::size_t b = a + 1; b < keep.size(); ++b) {
        const double d0 = distance(grid[keep[a]], grid[keep[b]]);
        if (d0 <= 1e-9) continue;
        ratios.push_back(distance(fwd[keep[a]], fwd[keep[b]]) / d0);
      }
    }
    if (!ratios.empty()) scale = detail::median(ratios);
  }
  const BoundingBox& reg = src.object_region();
  r.box = BoundingBox::from_center(reg.cx() + mdx, reg.cy() + mdy, reg.w * scale, reg.h * scale);
  r.success = r.median_fb < params.fb_threshold && 2 * keep.size() >= grid.size();
  return r;
}

struct Template {
  Patch patch;
  int frame = 0;
  BoundingBox box;
};

struct TemplateSet {
  std::size_t capacity = 5;
  std::vector<Template> items;
  std::size_t anchor = 0;
  int last_update_frame = 0;

  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
};

/// Below capacity the new template is appended. A full set refreshes its
/// least recently refreshed non-anchor slot, but only every
/// `refresh_interval` frames and only on a confident (>= 0.5) policy decision.
inline TemplateSet update_templates(TemplateSet set, Template fresh, double policy_confidence,
                                    int refresh_interval = 10) {
  expects(!fresh.patch.pixels().empty(), "update_templates: empty patch");
  expects(set.capacity >= 1, "update_templates: zero capacity");
  if (set.items.size() < set.capacity) {
    if (set.items.empty()) set.anchor = 0;
    set.last_update_frame = fresh.frame;
    set.items.push_back(std::move(fresh));
    return set;
  }
  if (fresh.frame - set.last_update_frame < refresh_interval || policy_confidence < 0.5) return set;
  std::optional<std::size_t> victim;
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    if (i == set.anchor) continue;
    if (!victim || set.items[i].frame < set.items[*victim].frame) victim = i;
  }
  if (!victim) return set;
  set.last_update_frame = fresh.frame;
  set.items[*victim] = std::move(fresh);
  return set;
}

/// One FB-LK result per template, in template order. Failures are reported,
/// never thrown.
inline std::vector<TrackResult> track_templates(const TemplateSet& templates, const Patch& candidate,
                                                const LkParams& params = {}) {
  expects(!templates.empty(), "track_templates: empty template set");
  std::vector<TrackResult> out;
  out.reserve(templates.size());
  for (const auto& t : templates.items) {
    out.push_back(fb_lk_track(t.patch, candidate, make_grid(t.patch, params), params));
  }
  return out;
}

/// Anchor heuristic: the successful result with the smallest median FB error,
/// else template 0.
inline std::size_t select_anchor(std::span<const TrackResult> results) {
  expects(!results.empty(), "select_anchor: no results");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].success) continue;
    if (!best || results[i].median_fb < results[*best].median_fb) best = i;
  }
  return best.value_or(0);
}

inline TrackResult summarize(std::span<const TrackResult> results, const TemplateSet& templates) {
  expects(!results.empty(), "summarize: empty result list");
  expects(results.size() == templates.size(), "summarize: results not aligned with templates");
  return results[select_anchor(results)];
}

// --- continuous tracking mode --------------------------------------------------

/// Frame-to-frame tracker state: the ROI of the last confirmed box.
struct CtmState {
  bool initialized = false;
  int init_frame = 0;
  int last_frame = 0;
  std::optional<Patch> previous;
};

inline void ctm_initialize(CtmState& state, Patch roi, int frame) {
  state.initialized = true;
  state.init_frame = frame;
  state.last_frame = frame;
  state.previous = std::move(roi);
}

inline void ctm_commit(CtmState& state, Patch roi, int frame) {
  expects(state.initialized, "ctm_commit: tracker not initialized");
  state.last_frame = frame;
  state.previous = std::move(roi);
}

inline void ctm_reset(CtmState& state) {
  state.initialized = false;
  state.previous.reset();
}

/// Tracks from the previous confirmed ROI into the ROI around `predicted`. The
/// result box is in the destination ROI; `dst_out` receives that ROI so the
/// caller can map the box back with roi_to_image.
inline TrackResult ctm_track(const CtmState& state, const GrayImage& frame_image, int frame,
                             const BoundingBox& predicted, const RoiParams& roi, const LkParams& params,
                             Patch* dst_out = nullptr) {
  expects(state.initialized && state.previous.has_value(), "ctm_track: tracker not initialized");
  Patch dst = extract_roi(frame_image, predicted, roi, frame, params.levels);
  TrackResult r = fb_lk_track(*state.previous, dst, make_grid(*state.previous, params), params);
  if (dst_out) *dst_out = std::move(dst);
  return r;
}

}  // namespace mdp
