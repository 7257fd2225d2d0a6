#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "mdp/assignment.hpp"
#include "mdp/core.hpp"
#include "mdp/ground_truth.hpp"
#include "mdp/policies.hpp"
#include "mdp/target.hpp"

namespace mdp {

using DetectionsByFrame = std::map<int, std::vector<Detection>>;

inline DetectionsByFrame group_by_frame(std::span<const Detection> dets) {
  DetectionsByFrame out;
  for (const auto& d : dets) out[d.frame].push_back(d);
  return out;
}

/// Everything the Tester and Trainer read about one sequence.
struct SequenceData {
  ImageExtent extent;
  int num_frames = 0;
  DetectionsByFrame detections;
  FrameSource frames;
  const GroundTruth* gt = nullptr;

  std::span<const Detection> dets_in(int frame) const {
    auto it = detections.find(frame);
    if (it == detections.end()) return {};
    return it->second;
  }
};

struct PolicySet {
  PolicySpec active{PolicyKind::Learned};
  PolicySpec tracked{PolicyKind::Heuristic};
  PolicySpec lost{PolicyKind::Learned};
};

struct ModelSet {
  std::optional<LinearModel> active;
  std::optional<LinearModel> tracked;
  std::optional<LinearModel> lost;

  const LinearModel* active_ptr() const { return active ? &*active : nullptr; }
  const LinearModel* lost_ptr() const { return lost ? &*lost : nullptr; }
  /// The tracked policy may borrow the lost model (same feature layout).
  const LinearModel* tracked_ptr() const { return tracked ? &*tracked : lost_ptr(); }
};

struct TesterToggles {
  bool sort_targets = true;
  bool filter_detections = true;
  bool reconnect_lost = true;
  bool resolve_conflicts = true;
  bool min_traj_len = true;
  bool lost_ratio_prune = false;
  bool pseudo_detection_reconnect = false;
};

struct TesterConfig {
  bool hungarian = false;
  TesterToggles toggles;
  std::size_t min_traj_len = 5;
  int streak_split = 10;
  double conflict_iou = 0.7;
  double filter_iou = 0.5;
  std::optional<double> lost_ratio_max;
  TrackerConfig tracker;
};

inline void validate(const TesterConfig& c) {
  expects(c.min_traj_len >= 1, "tester: min_traj_len must be >= 1");
  expects(c.streak_split >= 1, "tester: streak_split must be >= 1");
  expects(c.conflict_iou >= 0.0 && c.conflict_iou <= 1.0, "tester: conflict_iou must be in [0, 1]");
  expects(c.filter_iou >= 0.0 && c.filter_iou <= 1.0, "tester: filter_iou must be in [0, 1]");
  expects(!c.toggles.lost_ratio_prune || c.lost_ratio_max.has_value(), "tester: lost_ratio_prune needs lost_ratio_max");
}

enum class SampleMode : std::uint8_t { None, All, ErrorsOnly };

struct DecisionRecord {
  int frame = 0;
  int target_id = 0;  // 0 for rejected detections
  TrackState state = TrackState::Active;
  PolicyAction action = PolicyAction::A2;
  double probability = 0.0;

  friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

struct TesterOptions {
  std::uint64_t seed = 0;
  bool log_decisions = false;
  SampleMode samples = SampleMode::None;  // labels come from the relative oracle; needs GT
  int iteration = 0;
};

struct TesterOutput {
  std::vector<Trajectory> trajectories;
  std::vector<DecisionRecord> decisions;
  std::vector<TrainingSample> samples;
};

/// Long-streak targets first; inside each group Tracked before Lost, then by id.
inline std::vector<std::size_t> sort_targets(std::span<const Target> targets, int streak_split = 10) {
  std::vector<std::size_t> order(targets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto key = [&](std::size_t i) {
    const Target& t = targets[i];
    return std::tuple{t.tracked_streak > streak_split ? 0 : 1, t.state == TrackState::Tracked ? 0 : 1, t.id};
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  return order;
}

/// Forces the weaker target of every Tracked pair with IOU above `conflict_iou`
/// into Inactive and drops its point for `frame`. Returns the removed ids.
inline std::vector<int> resolve_conflicts(std::vector<Target>& targets, std::span<const Detection> dets, int frame,
                                          double conflict_iou = 0.7) {
  auto det_overlap = [&](const Target& t) {
    double best = 0.0;
    for (const auto& d : dets) best = std::max(best, iou(t.last().box, d.box));
    return best;
  };
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].state == TrackState::Tracked && !targets[i].trajectory.empty()) live.push_back(i);
  }
  std::sort(live.begin(), live.end(), [&](std::size_t a, std::size_t b) { return targets[a].id < targets[b].id; });
  std::vector<int> removed;
  for (std::size_t a = 0; a < live.size(); ++a) {
    for (std::size_t b = a + 1; b < live.size(); ++b) {
      Target& ta = targets[live[a]];
      Target& tb = targets[live[b]];
      if (ta.state != TrackState::Tracked || tb.state != TrackState::Tracked) continue;
      if (iou(ta.last().box, tb.last().box) <= conflict_iou) continue;
      Target* loser;
      if (ta.tracked_streak != tb.tracked_streak) {
        loser = ta.tracked_streak < tb.tracked_streak ? &ta : &tb;
      } else {
        loser = det_overlap(ta) < det_overlap(tb) ? &ta : &tb;
      }
      loser->transit(PolicyAction::TrackedToInactive);
      loser->tracked_streak = 0;
      if (loser->trajectory.back().frame == frame) loser->trajectory.pop_back();
      removed.push_back(loser->id);
    }
  }
  return removed;
}

/// While |Lost| / max(1, |Tracked|) exceeds `max_ratio`, the longest-lost
/// target is forced Inactive (ties: lowest id). Returns the removed ids.
inline std::vector<int> prune_lost_by_ratio(std::vector<Target>& targets, double max_ratio) {
  std::vector<int> removed;
  for (;;) {
    std::size_t n_lost = 0, n_tracked = 0;
    Target* oldest = nullptr;
    for (auto& t : targets) {
      if (t.state == TrackState::Tracked) ++n_tracked;
      if (t.state != TrackState::Lost) continue;
      ++n_lost;
      if (!oldest || t.lost_duration > oldest->lost_duration ||
          (t.lost_duration == oldest->lost_duration && t.id < oldest->id)) {
        oldest = &t;
      }
    }
    if (static_cast<double>(n_lost) / static_cast<double>(std::max<std::size_t>(1, n_tracked)) <= max_ratio) break;
    oldest->transit(PolicyAction::A7);
    removed.push_back(oldest->id);
  }
  return removed;
}

inline std::vector<Trajectory> finalize_trajectories(std::span<const Target> targets, std::size_t min_len) {
  std::vector<Trajectory> out;
  for (const auto& t : targets) {
    Trajectory tr = t.emit();
    if (tr.entries.empty() || tr.entries.size() < min_len) continue;
    out.push_back(std::move(tr));
  }
  std::sort(out.begin(), out.end(), [](const Trajectory& a, const Trajectory& b) { return a.id < b.id; });
  return out;
}

namespace detail {

struct LostRow {
  std::size_t target;
  LostCandidates cand;
  LostEvaluation eval;
  std::vector<int> labels;  // relative-oracle label per candidate (when sampling)
};

inline bool keep_sample(SampleMode mode, double probability, int label) {
  if (mode == SampleMode::None) return false;
  if (mode == SampleMode::All) return true;
  return (probability >= 0.5) != (label > 0);
}

}  // namespace detail

/// Relative-oracle labels for a lost target's candidates: +1 for the candidate
/// the oracle would associate, -1 for the rest.
inline std::vector<int> lost_oracle_labels(const LostCandidates& c, const ImageExtent& extent,
                                           const OracleContext& ctx, const TrackerConfig& cfg) {
  const PolicySpec oracle{PolicyKind::RelativeOracle};
  const auto ev = evaluate_lost(oracle, nullptr, c.dets, c.features, c.predicted, c.lost_duration, extent, ctx,
                                cfg.lost);
  const auto d = resolve_lost(ev);
  std::vector<int> labels(c.dets.size(), -1);
  if (d.candidate >= 0) labels[static_cast<std::size_t>(d.candidate)] = 1;
  return labels;
}

/// The Tester: runs the MDP over every frame of a sequence.
inline TesterOutput run_sequence(const SequenceData& seq, const PolicySet& policies, const ModelSet& models,
                                 const TesterConfig& cfg, const TesterOptions& opt = {}) {
  validate(cfg);
  expects(seq.extent.valid(), "run_sequence: invalid image extent");
  expects(opt.samples == SampleMode::None || seq.gt != nullptr, "run_sequence: sample collection needs ground truth");
  const TrackerConfig& tc = cfg.tracker;
  std::mt19937_64 rng(opt.seed);
  TesterOutput out;
  std::vector<Target> live;
  std::vector<Target> finished;
  int next_id = 1;

  auto log = [&](int frame, int id, TrackState s, PolicyAction a, double p) {
    if (opt.log_decisions) out.decisions.push_back({frame, id, s, a, p});
  };
  auto add_sample = [&](const FeatureVector& f, int label, FeatureKind kind, int frame, int id, double p) {
    if (!detail::keep_sample(opt.samples, p, label)) return;
    out.samples.push_back({f, label, kind, frame, id, SampleSource::Tester, opt.iteration});
  };
  auto ctx_for = [&](int frame, int gt_id) { return OracleContext{seq.gt, frame, gt_id}; };

  for (int frame = 1; frame <= seq.num_frames; ++frame) {
    const std::span<const Detection> dets = seq.dets_in(frame);
    const GrayImage* img = seq.frames.get(frame);

    std::vector<std::size_t> order;
    if (cfg.toggles.sort_targets) {
      order = sort_targets(live, cfg.streak_split);
    } else {
      order.resize(live.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    }

    std::vector<BoundingBox> tracked_boxes;  // Tracked targets processed so far
    std::vector<detail::LostRow> rows;
    std::vector<char> det_used(dets.size(), 0);

    auto evaluate_lost_target = [&](std::size_t ti, const std::optional<BoundingBox>& pseudo) {
      Target& t = live[ti];
      std::vector<char> allowed(dets.size(), 1);
      if (cfg.toggles.filter_detections) {
        for (std::size_t i = 0; i < dets.size(); ++i) {
          for (const auto& b : tracked_boxes) {
            if (iou(dets[i].box, b) > cfg.filter_iou) {
              allowed[i] = 0;
              break;
            }
          }
        }
      }
      detail::LostRow row{ti, gather_candidates(t, img, frame, dets, &allowed, seq.extent, tc,
                                                        policies.lost.kind != PolicyKind::AbsoluteOracle),
                              {}, {}};
      if (pseudo) add_pseudo_detection(row.cand, t, *pseudo, img, frame, seq.extent, tc);
      const OracleContext ctx = ctx_for(frame, t.gt_id);
      row.eval = evaluate_lost(policies.lost, models.lost_ptr(), row.cand.dets, row.cand.features, row.cand.predicted,
                               row.cand.lost_duration, seq.extent, ctx, tc.lost, &rng);
      if (row.eval.exits) {
        log(frame, t.id, TrackState::Lost, PolicyAction::A7, 0.0);
        apply_lost_step(t, PolicyAction::A7, std::nullopt, row.cand.predicted, 0.0, img, frame, tc);
        return;
      }
      if (opt.samples != SampleMode::None) {
        row.labels = lost_oracle_labels(row.cand, seq.extent, ctx, tc);
        for (std::size_t k = 0; k < row.cand.dets.size(); ++k) {
          add_sample(row.cand.features[k], row.labels[k], FeatureKind::Lost, frame, t.id, row.eval.probabilities[k]);
        }
      }
      rows.push_back(std::move(row));
    };

    for (std::size_t ti : order) {
      Target& t = live[ti];
      if (t.state == TrackState::Tracked) {
        const OracleContext ctx = ctx_for(frame, t.gt_id);
        TrackedStep step = evaluate_tracked_step(t, img, frame, dets, seq.extent, tc, policies.tracked,
                                                 models.tracked_ptr(), ctx, &rng);
        if (!step.exits && opt.samples != SampleMode::None) {
          std::optional<Detection> md;
          if (step.matching) md = dets[*step.matching];
          const auto oracle = decide_tracked(PolicySpec{PolicyKind::RelativeOracle}, nullptr, step.obs.summary,
                                             step.obs.box, md, seq.extent, ctx, tc.tracked);
          add_sample(step.decision.features, oracle.action == PolicyAction::A3 ? 1 : -1, FeatureKind::Tracked, frame,
                     t.id, step.decision.probability);
        }
        log(frame, t.id, TrackState::Tracked, step.decision.action, step.decision.probability);
        apply_tracked_step(t, step, step.decision.action, img, frame, dets, tc);
        if (t.state == TrackState::Tracked) {
          tracked_boxes.push_back(t.last().box);
        } else if (t.state == TrackState::Lost && cfg.toggles.reconnect_lost) {
          std::optional<BoundingBox> pseudo;
          if (cfg.toggles.pseudo_detection_reconnect) pseudo = step.obs.box;
          evaluate_lost_target(ti, pseudo);
        }
      } else if (t.state == TrackState::Lost) {
        evaluate_lost_target(ti, std::nullopt);
      }
    }

    // Association of Lost targets with detections (pseudo-detections are
    // private extra columns).
    if (!rows.empty()) {
      std::size_t pseudo_cols = 0;
      for (const auto& r : rows) {
        for (auto idx : r.cand.index) pseudo_cols += idx == static_cast<std::size_t>(-1) ? 1 : 0;
      }
      const std::size_t ncols = dets.size() + pseudo_cols;
      std::vector<std::vector<int>> col_to_cand(rows.size(), std::vector<int>(ncols, -1));
      Assignment assign{std::vector<int>(rows.size(), -1)};
      if (ncols > 0) {
        CostMatrix costs(rows.size(), ncols, 1.0);
        std::size_t next_pseudo = dets.size();
        for (std::size_t r = 0; r < rows.size(); ++r) {
          for (std::size_t k = 0; k < rows[r].cand.index.size(); ++k) {
            const std::size_t idx = rows[r].cand.index[k];
            const std::size_t col = idx == static_cast<std::size_t>(-1) ? next_pseudo++ : idx;
            costs(r, col) = 1.0 - rows[r].eval.probabilities[k];
            col_to_cand[r][col] = static_cast<int>(k);
          }
        }
        assign = cfg.hungarian ? hungarian(costs) : greedy_associate(costs, 0.5);
      }
      for (std::size_t r = 0; r < rows.size(); ++r) {
        auto& row = rows[r];
        Target& t = live[row.target];
        const int col = assign.row_to_col[r];
        const int k = col >= 0 ? col_to_cand[r][static_cast<std::size_t>(col)] : -1;
        const double p = k >= 0 ? row.eval.probabilities[static_cast<std::size_t>(k)] : 0.0;
        if (k >= 0 && p >= 0.5) {
          const Detection d = row.cand.dets[static_cast<std::size_t>(k)];
          if (static_cast<std::size_t>(col) < dets.size()) det_used[static_cast<std::size_t>(col)] = 1;
          log(frame, t.id, TrackState::Lost, PolicyAction::A6, p);
          apply_lost_step(t, PolicyAction::A6, d, row.cand.predicted, p, img, frame, tc);
        } else {
          double best = 0.0;
          for (double q : row.eval.probabilities) best = std::max(best, q);
          log(frame, t.id, TrackState::Lost, PolicyAction::A5, best);
          apply_lost_step(t, PolicyAction::A5, std::nullopt, row.cand.predicted, best, img, frame, tc);
        }
      }
    }

    // Active policy on detections no target claimed.
    std::set<int> owned;
    for (const auto& t : live) {
      if (t.state != TrackState::Inactive && t.gt_id >= 0) owned.insert(t.gt_id);
    }
    std::vector<Target> spawned;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (det_used[i]) continue;
      bool covered = false;
      for (const auto& t : live) {
        if (t.state == TrackState::Tracked && iou(t.last().box, dets[i].box) > cfg.filter_iou) {
          covered = true;
          break;
        }
      }
      if (covered) continue;
      const OracleContext ctx = ctx_for(frame, -1);
      const Decision d = decide_active(policies.active, models.active_ptr(), dets[i], seq.extent, ctx, &rng, &owned);
      const int gt_id = seq.gt ? match_gt_id(*seq.gt, dets[i].box, frame) : -1;
      if (opt.samples != SampleMode::None) {
        const auto oracle =
            decide_active(PolicySpec{PolicyKind::RelativeOracle}, nullptr, dets[i], seq.extent, ctx, nullptr, &owned);
        add_sample(d.features, oracle.action == PolicyAction::A1 ? 1 : -1, FeatureKind::Active, frame, 0,
                   d.probability);
      }
      if (d.action == PolicyAction::A1) {
        log(frame, next_id, TrackState::Active, PolicyAction::A1, d.probability);
        spawned.push_back(spawn_target(next_id++, dets[i], img, tc, gt_id));
        if (gt_id >= 0) owned.insert(gt_id);
      } else {
        log(frame, 0, TrackState::Active, PolicyAction::A2, d.probability);
      }
    }
    for (auto& t : spawned) live.push_back(std::move(t));

    if (cfg.toggles.resolve_conflicts) {
      for (int id : resolve_conflicts(live, dets, frame, cfg.conflict_iou)) {
        log(frame, id, TrackState::Tracked, PolicyAction::TrackedToInactive, 0.0);
      }
    }
    if (cfg.toggles.lost_ratio_prune && cfg.lost_ratio_max) {
      for (int id : prune_lost_by_ratio(live, *cfg.lost_ratio_max)) {
        log(frame, id, TrackState::Lost, PolicyAction::A7, 0.0);
      }
    }

    auto split = std::stable_partition(live.begin(), live.end(),
                                       [](const Target& t) { return t.state != TrackState::Inactive; });
    for (auto it = split; it != live.end(); ++it) finished.push_back(std::move(*it));
    live.erase(split, live.end());
  }
  for (auto& t : live) finished.push_back(std::move(t));
  out.trajectories = finalize_trajectories(finished, cfg.toggles.min_traj_len ? cfg.min_traj_len : 1);
  return out;
}

}  // namespace mdp
