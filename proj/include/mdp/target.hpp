#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mdp/core.hpp"
#include "mdp/features.hpp"
#include "mdp/geometry.hpp"
#include "mdp/image.hpp"
#include "mdp/patch_tracking.hpp"
#include "mdp/policies.hpp"

namespace mdp {

/// Per-frame rasters for a sequence. A default-constructed source has no
/// pixels and the tracker falls back to the motion model alone.
class FrameSource {
 public:
  FrameSource() = default;

  static FrameSource from_directory(std::filesystem::path dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("frame directory not found: " + dir.string());
    FrameSource s;
    s.dir_ = std::move(dir);
    return s;
  }

  static FrameSource from_images(std::map<int, GrayImage> images) {
    FrameSource s;
    s.images_ = std::make_shared<const std::map<int, GrayImage>>(std::move(images));
    return s;
  }

  bool has_pixels() const { return images_ != nullptr || !dir_.empty(); }

  /// nullptr when the source has no pixels; IoError when a frame file is missing.
  const GrayImage* get(int frame) const {
    if (images_) {
      auto it = images_->find(frame);
      if (it == images_->end()) throw IoError("no raster for frame " + std::to_string(frame));
      return &it->second;
    }
    if (dir_.empty()) return nullptr;
    if (cache_frame_ != frame) {
      cache_ = std::make_shared<GrayImage>(read_pgm(dir_ / frame_filename(frame)));
      cache_frame_ = frame;
    }
    return cache_.get();
  }

 private:
  std::filesystem::path dir_;
  std::shared_ptr<const std::map<int, GrayImage>> images_;
  mutable std::shared_ptr<GrayImage> cache_;
  mutable int cache_frame_ = -1;
};

struct TrackerConfig {
  RoiParams roi;
  LkParams lk;
  std::size_t template_capacity = 5;
  int refresh_interval = 10;
  bool ctm = false;
  std::size_t velocity_window = 5;
  double match_iou = 0.5;          // tracked box vs detection
  double gate_distance = 2.0;      // lost candidates: center distance / max(w, h) of the prediction
  double gate_height_ratio = 0.5;  // lost candidates: min/max height
  TrackedPolicyConfig tracked;
  LostPolicyConfig lost;
};

struct Target {
  int id = 0;
  TrackState state = TrackState::Active;
  TrackState prev_state = TrackState::Active;
  TemplateSet templates;
  CtmState ctm;
  Velocity velocity;
  int tracked_streak = 0;
  int lost_duration = 0;
  std::vector<TrajectoryPoint> trajectory;
  int gt_id = -1;  // GT identity at creation; -1 when spawned from a false positive or without GT

  const TrajectoryPoint& last() const {
    expects(!trajectory.empty(), "target has no trajectory");
    return trajectory.back();
  }

  const TrajectoryPoint* last_tracked() const {
    for (auto it = trajectory.rbegin(); it != trajectory.rend(); ++it) {
      if (it->state == TrackState::Tracked) return &*it;
    }
    return nullptr;
  }

  std::size_t tracked_length() const {
    return static_cast<std::size_t>(std::count_if(trajectory.begin(), trajectory.end(),
                                                  [](const auto& p) { return p.state == TrackState::Tracked; }));
  }

  /// Appends a point, or overwrites the last one when it is for the same frame.
  void record(int frame, const BoundingBox& box, TrackState s, std::size_t velocity_window = 5) {
    if (!trajectory.empty()) {
      expects(frame >= trajectory.back().frame, "Target::record: frames must not decrease");
      if (trajectory.back().frame == frame) trajectory.pop_back();
    }
    trajectory.push_back({frame, box, s});
    velocity = estimate_velocity(trajectory, velocity_window);
  }

  void transit(PolicyAction a) {
    prev_state = state;
    state = apply_transition(state, a);
  }

  /// Output trajectory: frames in which the target was Tracked.
  Trajectory emit() const {
    Trajectory t{id, {}};
    for (const auto& p : trajectory) {
      if (p.state == TrackState::Tracked) t.entries.push_back({p.frame, p.box});
    }
    return t;
  }
};

/// Motion-only stand-in used when no pixels are available.
inline TrackResult motion_only_result(const BoundingBox& box) {
  TrackResult r;
  r.median_fb = 0.0;
  r.median_ncc = 1.0;
  r.box = box;
  r.success = true;
  return r;
}

inline bool templates_need_update(const TemplateSet& set, int frame, double confidence, int refresh_interval) {
  if (set.items.size() < set.capacity) return true;
  return frame - set.last_update_frame >= refresh_interval && confidence >= 0.5;
}

inline void refresh_templates(Target& t, const GrayImage* img, int frame, const BoundingBox& box, double confidence,
                              const TrackerConfig& cfg) {
  if (!img || box.w < 1.0 || box.h < 1.0) return;
  t.templates.capacity = cfg.template_capacity;
  if (!templates_need_update(t.templates, frame, confidence, cfg.refresh_interval)) return;
  Patch p = extract_roi(*img, box, cfg.roi, frame, cfg.lk.levels);
  t.templates = update_templates(std::move(t.templates), Template{std::move(p), frame, box}, confidence,
                                 cfg.refresh_interval);
}

inline void restart_ctm(Target& t, const GrayImage* img, int frame, const BoundingBox& box, const TrackerConfig& cfg) {
  if (!cfg.ctm || !img || box.w < 1.0 || box.h < 1.0) return;
  ctm_initialize(t.ctm, extract_roi(*img, box, cfg.roi, frame, cfg.lk.levels), frame);
}

/// A new target in Tracked state (A1 applied) seeded from a detection.
inline Target spawn_target(int id, const Detection& det, const GrayImage* img, const TrackerConfig& cfg,
                           int gt_id = -1) {
  Target t;
  t.id = id;
  t.gt_id = gt_id;
  t.templates.capacity = cfg.template_capacity;
  t.transit(PolicyAction::A1);
  t.record(det.frame, det.box, TrackState::Tracked, cfg.velocity_window);
  t.tracked_streak = 1;
  refresh_templates(t, img, det.frame, det.box, 1.0, cfg);
  restart_ctm(t, img, det.frame, det.box, cfg);
  return t;
}

inline BoundingBox predict_target(const Target& t, int frame, const TrackerConfig& cfg) {
  return predict_location(t.trajectory, frame, cfg.velocity_window);
}

inline int lost_duration_at(const Target& t, int frame) {
  const TrajectoryPoint* lt = t.last_tracked();
  expects(lt != nullptr, "target was never tracked");
  return frame - lt->frame;
}

/// Index of the detection overlapping `box` most, if above `min_iou`.
inline std::optional<std::size_t> best_overlap(const BoundingBox& box, std::span<const Detection> dets,
                                               double min_iou) {
  std::optional<std::size_t> best;
  double best_iou = min_iou;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const double o = iou(box, dets[i].box);
    if (o > best_iou) {
      best_iou = o;
      best = i;
    }
  }
  return best;
}

// --- tracked state -------------------------------------------------------------

struct TrackedObservation {
  BoundingBox predicted;
  BoundingBox box;  // tracker output in image coordinates (the prediction when tracking fails)
  TrackResult summary;
  std::optional<Patch> dst;  // CTM destination ROI, committed on A3
};

inline TrackedObservation observe_tracked(const Target& t, const GrayImage* img, int frame, const TrackerConfig& cfg) {
  TrackedObservation o;
  o.predicted = predict_target(t, frame, cfg);
  if (!img || o.predicted.w < 1.0 || o.predicted.h < 1.0) {
    o.summary = motion_only_result(o.predicted);
    o.box = o.predicted;
    return o;
  }
  Patch dst;
  if (cfg.ctm && t.ctm.initialized) {
    o.summary = ctm_track(t.ctm, *img, frame, o.predicted, cfg.roi, cfg.lk, &dst);
  } else if (!t.templates.empty()) {
    dst = extract_roi(*img, o.predicted, cfg.roi, frame, cfg.lk.levels);
    const auto results = track_templates(t.templates, dst, cfg.lk);
    o.summary = summarize(results, t.templates);
  } else {
    o.summary = motion_only_result(o.predicted);
    o.box = o.predicted;
    return o;
  }
  o.box = o.summary.success ? roi_to_image(dst, o.summary.box) : o.predicted;
  if (!o.box.valid()) o.box = o.predicted;
  o.dst = std::move(dst);
  return o;
}

struct TrackedStep {
  bool exits = false;  // TrackedToInactive: prediction left the image
  TrackedObservation obs;
  std::optional<std::size_t> matching;  // index into the detection list
  Decision decision;
};

inline TrackedStep evaluate_tracked_step(const Target& t, const GrayImage* img, int frame,
                                         std::span<const Detection> dets, const ImageExtent& extent,
                                         const TrackerConfig& cfg, const PolicySpec& spec, const LinearModel* model,
                                         const OracleContext& ctx, std::mt19937_64* rng) {
  TrackedStep s;
  const BoundingBox pred = predict_target(t, frame, cfg);
  if (inside_fraction(pred, extent) < cfg.lost.exit_inside_min) {
    s.exits = true;
    s.obs.predicted = pred;
    s.obs.box = pred;
    s.decision.action = PolicyAction::TrackedToInactive;
    return s;
  }
  s.obs = observe_tracked(t, img, frame, cfg);
  // The absolute oracle picks the matching detection from GT alone.
  const GtBox* g = spec.kind == PolicyKind::AbsoluteOracle ? ctx.target_box() : nullptr;
  s.matching = best_overlap(g ? g->box : s.obs.box, dets, cfg.match_iou);
  std::optional<Detection> md;
  if (s.matching) md = dets[*s.matching];
  s.decision = decide_tracked(spec, model, s.obs.summary, s.obs.box, md, extent, ctx, cfg.tracked, rng);
  return s;
}

inline void apply_tracked_step(Target& t, TrackedStep& s, PolicyAction action, const GrayImage* img, int frame,
                               std::span<const Detection> dets, const TrackerConfig& cfg) {
  t.transit(action);
  if (action == PolicyAction::TrackedToInactive) {
    t.tracked_streak = 0;
    return;
  }
  if (action == PolicyAction::A3) {
    BoundingBox box = s.obs.box;
    if (s.matching) {
      const BoundingBox& d = dets[*s.matching].box;
      box = {0.5 * (box.x + d.x), 0.5 * (box.y + d.y), 0.5 * (box.w + d.w), 0.5 * (box.h + d.h)};
    }
    t.record(frame, box, TrackState::Tracked, cfg.velocity_window);
    ++t.tracked_streak;
    t.lost_duration = 0;
    refresh_templates(t, img, frame, box, std::max(0.5, s.decision.probability), cfg);
    if (cfg.ctm && img && box.w >= 1.0 && box.h >= 1.0) {
      if (t.ctm.initialized) {
        ctm_commit(t.ctm, extract_roi(*img, box, cfg.roi, frame, cfg.lk.levels), frame);
      } else {
        restart_ctm(t, img, frame, box, cfg);
      }
    }
    return;
  }
  // A4
  t.record(frame, s.obs.predicted, TrackState::Lost, cfg.velocity_window);
  t.tracked_streak = 0;
  t.lost_duration = lost_duration_at(t, frame);
  ctm_reset(t.ctm);
}

// --- lost state ----------------------------------------------------------------

struct LostCandidates {
  BoundingBox predicted;
  int lost_duration = 0;
  std::vector<std::size_t> index;  // into the frame's detection list
  std::vector<Detection> dets;
  std::vector<FeatureVector> features;
};

inline bool gate_candidate(const BoundingBox& pred, const BoundingBox& det, const TrackerConfig& cfg) {
  const double d = std::hypot(pred.cx() - det.cx(), pred.cy() - det.cy());
  const double hr = std::min(pred.h, det.h) / std::max(pred.h, det.h);
  return d <= cfg.gate_distance * std::max(pred.w, pred.h) && hr >= cfg.gate_height_ratio;
}

inline TrackResult candidate_summary(const Target& t, const GrayImage* img, const Detection& det,
                                     const TrackerConfig& cfg) {
  if (!img || t.templates.empty() || det.box.w < 1.0 || det.box.h < 1.0) return motion_only_result(det.box);
  const Patch dst = extract_roi(*img, det.box, cfg.roi, det.frame, cfg.lk.levels);
  const auto results = track_templates(t.templates, dst, cfg.lk);
  return summarize(results, t.templates);
}

/// Gated candidate detections and their lost-state features. `allowed`, when
/// given, masks the frame's detection list (filtered detections are false).
inline LostCandidates gather_candidates(const Target& t, const GrayImage* img, int frame,
                                        std::span<const Detection> dets, const std::vector<char>* allowed,
                                        const ImageExtent& extent, const TrackerConfig& cfg, bool gated = true) {
  LostCandidates c;
  c.predicted = predict_target(t, frame, cfg);
  c.lost_duration = lost_duration_at(t, frame);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (allowed && !(*allowed)[i]) continue;
    if (gated && !gate_candidate(c.predicted, dets[i].box, cfg)) continue;
    c.index.push_back(i);
    c.dets.push_back(dets[i]);
    c.features.push_back(lost_features(candidate_summary(t, img, dets[i], cfg), c.predicted, dets[i], extent));
  }
  return c;
}

/// Appends the prediction as a confidence-0.5 pseudo-detection. Its index is
/// `npos`, marking it as private to this target.
inline void add_pseudo_detection(LostCandidates& c, const Target& t, const BoundingBox& box, const GrayImage* img,
                                 int frame, const ImageExtent& extent, const TrackerConfig& cfg) {
  if (!box.valid()) return;
  const Detection pseudo{frame, box, 0.5};
  c.index.push_back(static_cast<std::size_t>(-1));
  c.dets.push_back(pseudo);
  c.features.push_back(lost_features(candidate_summary(t, img, pseudo, cfg), c.predicted, pseudo, extent));
}

inline void apply_lost_step(Target& t, PolicyAction action, const std::optional<Detection>& det,
                            const BoundingBox& fallback_box, double probability, const GrayImage* img, int frame,
                            const TrackerConfig& cfg) {
  t.transit(action);
  switch (action) {
    case PolicyAction::A6: {
      const BoundingBox box = det ? det->box : fallback_box;
      t.record(frame, box, TrackState::Tracked, cfg.velocity_window);
      t.tracked_streak = 1;
      t.lost_duration = 0;
      refresh_templates(t, img, frame, box, probability, cfg);
      ctm_reset(t.ctm);
      restart_ctm(t, img, frame, box, cfg);
      break;
    }
    case PolicyAction::A5:
      t.record(frame, fallback_box, TrackState::Lost, cfg.velocity_window);
      t.lost_duration = lost_duration_at(t, frame);
      break;
    default:  // A7
      t.tracked_streak = 0;
      break;
  }
}

}  // namespace mdp
