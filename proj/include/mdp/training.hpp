#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdp/core.hpp"
#include "mdp/geometry.hpp"
#include "mdp/ground_truth.hpp"
#include "mdp/inference.hpp"
#include "mdp/metrics.hpp"
#include "mdp/policies.hpp"
#include "mdp/target.hpp"

namespace mdp {

// --- sample store ----------------------------------------------------------------

inline FeatureKind parse_feature_kind(std::string_view s) {
  if (s == "active") return FeatureKind::Active;
  if (s == "tracked") return FeatureKind::Tracked;
  if (s == "lost") return FeatureKind::Lost;
  throw ContractViolation("unknown state tag: " + std::string(s));
}

inline constexpr std::array<FeatureKind, 3> kPolicyStates = {FeatureKind::Active, FeatureKind::Tracked,
                                                               FeatureKind::Lost};

class SampleStore {
 public:
  void add(TrainingSample s) { of(s.state).push_back(std::move(s)); }
  void add(std::span<const TrainingSample> samples) {
    for (const auto& s : samples) add(s);
  }
  void append(const SampleStore& other) {
    for (auto k : kPolicyStates) add(other.of(k));
  }

  std::vector<TrainingSample>& of(FeatureKind k) { return per_state_[static_cast<std::size_t>(k)]; }
  const std::vector<TrainingSample>& of(FeatureKind k) const { return per_state_[static_cast<std::size_t>(k)]; }

  std::size_t size() const { return per_state_[0].size() + per_state_[1].size() + per_state_[2].size(); }

  std::pair<std::size_t, std::size_t> class_counts(FeatureKind k) const {
    std::size_t pos = 0, neg = 0;
    for (const auto& s : of(k)) (s.label > 0 ? pos : neg)++;
    return {pos, neg};
  }

  /// CSV rows: state,frame,target_id,label,f0,f1,...
  void save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write samples " + path.string());
    out << std::setprecision(17);
    for (auto k : kPolicyStates) {
      for (const auto& s : of(k)) {
        out << to_string(k) << ',' << s.frame << ',' << s.target_id << ',' << s.label;
        for (double v : s.features.values) out << ',' << v;
        out << '\n';
      }
    }
    if (!out) throw IoError("short write to " + path.string());
  }

  static SampleStore load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open samples " + path.string());
    SampleStore store;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string field;
      std::vector<std::string> fields;
      while (std::getline(ss, field, ',')) fields.push_back(field);
      if (fields.size() < 5) throw IoError(path.string() + ":" + std::to_string(lineno) + ": too few fields");
      try {
        TrainingSample s;
        s.state = parse_feature_kind(fields[0]);
        s.frame = std::stoi(fields[1]);
        s.target_id = std::stoi(fields[2]);
        s.label = std::stoi(fields[3]);
        s.features.tag = s.state;
        for (std::size_t i = 4; i < fields.size(); ++i) s.features.values.push_back(std::stod(fields[i]));
        store.add(std::move(s));
      } catch (const std::logic_error& e) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return store;
  }

 private:
  std::array<std::vector<TrainingSample>, 3> per_state_;
};

// --- trajectory filtering ----------------------------------------------------------

struct GtTrajectory {
  int id = 0;
  std::vector<GtBox> boxes;  // frame order

  int first_frame() const { return boxes.front().frame; }
  int last_frame() const { return boxes.back().frame; }
};

/// Truncates each GT trajectory to start at the first frame where it has a
/// detection with IOU > 0.5, zero overlap with every other annotation and at
/// least 95% of its area inside the image. Trajectories with no such frame are
/// dropped.
inline std::vector<GtTrajectory> filter_trajectories(const GroundTruth& gt, const DetectionsByFrame& dets,
                                                     const ImageExtent& extent) {
  std::vector<GtTrajectory> out;
  for (int id : gt.ids()) {
    std::vector<GtBox> boxes;
    for (const GtBox* b : gt.track(id)) {
      if (!b->ignore) boxes.push_back(*b);
    }
    auto suitable = [&](const GtBox& b) {
      bool detected = false;
      if (auto it = dets.find(b.frame); it != dets.end()) {
        for (const auto& d : it->second) detected = detected || iou(d.box, b.box) > 0.5;
      }
      if (!detected) return false;
      for (const GtBox* o : gt.in_frame(b.frame, true)) {
        if (o->id != b.id && iou(o->box, b.box) > 0.0) return false;
      }
      return inside_fraction(b.box, extent) > 0.95;
    };
    auto start = std::find_if(boxes.begin(), boxes.end(), suitable);
    if (start == boxes.end()) continue;
    out.push_back({id, std::vector<GtBox>(start, boxes.end())});
  }
  return out;
}

// --- incremental schedule -----------------------------------------------------------------

enum class ScheduleStop : std::uint8_t { AllUntrainable, MaxPasses, MaxIters };

inline std::string_view to_string(ScheduleStop s) {
  switch (s) {
    case ScheduleStop::AllUntrainable: return "all_untrainable";
    case ScheduleStop::MaxPasses: return "max_passes";
    case ScheduleStop::MaxIters: return "max_iters";
  }
  return "?";
}

struct ScheduleLimits {
  int max_passes = 2;
  int max_trials = 3;
  int max_iters = 500;
};

struct TrajectoryStatus {
  bool trainable = true;
  bool done = false;
  int trials = 0;

  friend bool operator==(const TrajectoryStatus&, const TrajectoryStatus&) = default;
};

struct ScheduleEvent {
  int iter = 0;
  int pass = 0;  // completed passes before this iteration's episode
  std::size_t trajectory = 0;
  int failures = 0;
  TrajectoryStatus after;

  friend bool operator==(const ScheduleEvent&, const ScheduleEvent&) = default;
};

struct ScheduleTrace {
  std::vector<ScheduleEvent> events;
  std::vector<TrajectoryStatus> status;
  int passes = 0;
  ScheduleStop stop = ScheduleStop::MaxIters;
};

/// The incremental-training outer loop over `n` trajectories. `episode(i)` tracks trajectory
/// i once and returns its failure count. A trajectory is done after a
/// failure-free episode and untrainable (and done) once its trials exceed
/// max_trials. When every trajectory is done a pass is complete: trainable
/// ones are reopened and all trial counters cleared. The next episode always
/// runs the lowest-index trajectory that is not done.
inline ScheduleTrace run_incremental_schedule(std::size_t n, const ScheduleLimits& limits,
                                              const std::function<int(std::size_t)>& episode) {
  expects(limits.max_passes >= 1 && limits.max_trials >= 0 && limits.max_iters >= 1,
          "schedule: max_passes and max_iters must be >= 1");
  ScheduleTrace trace;
  trace.status.assign(n, {});
  auto& st = trace.status;
  for (int iter = 1; iter <= limits.max_iters; ++iter) {
    if (std::none_of(st.begin(), st.end(), [](const auto& s) { return s.trainable; })) {
      trace.stop = ScheduleStop::AllUntrainable;
      return trace;
    }
    if (std::all_of(st.begin(), st.end(), [](const auto& s) { return s.done; })) {
      ++trace.passes;
      if (trace.passes >= limits.max_passes) {
        trace.stop = ScheduleStop::MaxPasses;
        return trace;
      }
      for (auto& s : st) {
        if (s.trainable) s.done = false;
        s.trials = 0;
      }
    }
    const auto next = static_cast<std::size_t>(
        std::find_if(st.begin(), st.end(), [](const auto& s) { return !s.done; }) - st.begin());
    const int failures = episode(next);
    auto& s = st[next];
    if (failures == 0) {
      s.done = true;
    } else if (++s.trials > limits.max_trials) {
      s.trainable = false;
      s.done = true;
    }
    trace.events.push_back({iter, trace.passes, next, failures, s});
  }
  trace.stop = ScheduleStop::MaxIters;
  return trace;
}

// --- Trainer episodes ------------------------------------------------------------------

struct StateTally {
  std::size_t decisions = 0;
  std::size_t correct = 0;

  double accuracy() const { return decisions ? static_cast<double>(correct) / static_cast<double>(decisions) : 0.0; }
  void add(bool ok) {
    ++decisions;
    correct += ok ? 1 : 0;
  }
};

struct EpisodeResult {
  int failures = 0;  // incorrect Lost-state decisions
  std::vector<TrainingSample> samples;
  StateTally tracked;
  StateTally lost;
};

struct EpisodeOptions {
  PolicySet policies;
  SampleMode samples = SampleMode::None;
  int iteration = 0;
  std::uint64_t seed = 0;
};

/// Learned lost policy with no model yet: a zero-weight model, which scores
/// every candidate 0.5 and so picks the first one. Its mistakes go both ways,
/// yielding positive and negative corrections.
inline const LinearModel* bootstrap_lost_model(const PolicySpec& spec, const LinearModel* model,
                                               std::span<const FeatureVector> features, LinearModel& blank) {
  if (spec.kind != PolicyKind::Learned || (model && model->trained()) || features.empty()) return model;
  blank = LinearModel{};
  blank.weights.assign(features.front().values.size(), 0.0);
  return &blank;
}

/// Tracks one GT trajectory as a single target. Tracked-state decisions come
/// from the policy, demoted to A4 when the relative oracle disagrees; Lost
/// decisions are compared with the oracle and then replaced by it, so the
/// episode follows the ground truth. On an incorrect Lost decision `on_lost_error` receives
/// the corrective samples (a negative for a wrongly chosen detection, a
/// positive for the detection the oracle picked).
inline EpisodeResult run_trainer_episode(
    const GtTrajectory& traj, const SequenceData& seq, const ModelSet& models, const TrackerConfig& tc,
    const EpisodeOptions& opt, const std::function<void(std::vector<TrainingSample>)>& on_lost_error = {}) {
  expects(seq.gt != nullptr, "trainer episode needs ground truth");
  EpisodeResult res;
  if (traj.boxes.empty()) return res;
  std::mt19937_64 rng(opt.seed ^ static_cast<std::uint64_t>(traj.id));
  const int f0 = traj.first_frame();
  const auto first = best_overlap(traj.boxes.front().box, seq.dets_in(f0), 0.5);
  if (!first) return res;
  Target t = spawn_target(traj.id, seq.dets_in(f0)[*first], seq.frames.get(f0), tc, traj.id);
  const PolicySpec oracle{PolicyKind::RelativeOracle};

  auto keep = [&](double p, int label) { return detail::keep_sample(opt.samples, p, label); };

  for (int frame = f0 + 1; frame <= traj.last_frame(); ++frame) {
    const auto dets = seq.dets_in(frame);
    const GrayImage* img = seq.frames.get(frame);
    const OracleContext ctx{seq.gt, frame, traj.id};
    if (t.state == TrackState::Tracked) {
      TrackedStep step = evaluate_tracked_step(t, img, frame, dets, seq.extent, tc, opt.policies.tracked,
                                               models.tracked_ptr(), ctx, &rng);
      if (step.exits) break;
      std::optional<Detection> md;
      if (step.matching) md = dets[*step.matching];
      const auto truth = decide_tracked(oracle, nullptr, step.obs.summary, step.obs.box, md, seq.extent, ctx, tc.tracked);
      const int label = truth.action == PolicyAction::A3 ? 1 : -1;
      res.tracked.add(step.decision.action == truth.action);
      if (keep(step.decision.probability, label)) {
        res.samples.push_back({step.decision.features, label, FeatureKind::Tracked, frame, traj.id,
                               SampleSource::Trainer, opt.iteration});
      }
      const bool keep_tracking = step.decision.action == PolicyAction::A3 && truth.action == PolicyAction::A3;
      step.decision.probability = 1.0;
      apply_tracked_step(t, step, keep_tracking ? PolicyAction::A3 : PolicyAction::A4, img, frame, dets, tc);
      continue;
    }
    if (t.state != TrackState::Lost) break;

    LostCandidates cand = gather_candidates(t, img, frame, dets, nullptr, seq.extent, tc);
    LinearModel blank;
    const LinearModel* lost_model = bootstrap_lost_model(opt.policies.lost, models.lost_ptr(), cand.features, blank);
    const auto ev = evaluate_lost(opt.policies.lost, lost_model, cand.dets, cand.features, cand.predicted,
                                  cand.lost_duration, seq.extent, ctx, tc.lost, &rng);
    if (ev.exits) break;
    const auto chosen = resolve_lost(ev);
    const auto truth_ev = evaluate_lost(oracle, nullptr, cand.dets, cand.features, cand.predicted, cand.lost_duration,
                                        seq.extent, ctx, tc.lost);
    const auto truth = resolve_lost(truth_ev);
    std::vector<int> labels(cand.dets.size(), -1);
    if (truth.candidate >= 0) labels[static_cast<std::size_t>(truth.candidate)] = 1;
    for (std::size_t k = 0; k < cand.dets.size(); ++k) {
      if (keep(ev.probabilities[k], labels[k])) {
        res.samples.push_back(
            {cand.features[k], labels[k], FeatureKind::Lost, frame, traj.id, SampleSource::Trainer, opt.iteration});
      }
    }
    const bool ok = chosen.action == truth.action && chosen.candidate == truth.candidate;
    res.lost.add(ok);
    if (!ok) {
      ++res.failures;
      std::vector<TrainingSample> fix;
      if (chosen.candidate >= 0) {
        fix.push_back({cand.features[static_cast<std::size_t>(chosen.candidate)], -1, FeatureKind::Lost, frame,
                       traj.id, SampleSource::Trainer, opt.iteration});
      }
      if (truth.candidate >= 0) {
        fix.push_back({cand.features[static_cast<std::size_t>(truth.candidate)], 1, FeatureKind::Lost, frame, traj.id,
                       SampleSource::Trainer, opt.iteration});
      }
      if (on_lost_error) on_lost_error(std::move(fix));
    }
    std::optional<Detection> det;
    if (truth.candidate >= 0) det = cand.dets[static_cast<std::size_t>(truth.candidate)];
    apply_lost_step(t, truth.action, det, cand.predicted, 1.0, img, frame, tc);
    if (t.state == TrackState::Inactive) break;
  }
  return res;
}

// --- active policy data ------------------------------------------------------------------

/// Two-level labels: +1 if the best GT overlap is >= tp_iou, -1 if below
/// fp_iou, unlabeled (nullopt) in between.
inline std::optional<int> active_label(const GroundTruth& gt, const Detection& det, double tp_iou = 0.5,
                                       double fp_iou = 0.2) {
  double best = 0.0;
  for (const GtBox* g : gt.in_frame(det.frame, false)) best = std::max(best, iou(g->box, det.box));
  if (best >= tp_iou) return 1;
  if (best < fp_iou) return -1;
  return std::nullopt;
}

struct ActiveDataOptions {
  std::size_t synthetic_per_detection = 0;  // extra jittered boxes per labeled detection
  std::uint64_t seed = 0;
};

/// Batch data for the active policy from every detection of a sequence.
inline std::vector<TrainingSample> active_samples(const SequenceData& seq, const ActiveDataOptions& opt = {}) {
  expects(seq.gt != nullptr, "active samples need ground truth");
  std::vector<TrainingSample> out;
  std::uint64_t salt = opt.seed;
  for (const auto& [frame, dets] : seq.detections) {
    std::vector<BoundingBox> gt_boxes;
    for (const GtBox* g : seq.gt->in_frame(frame, false)) gt_boxes.push_back(g->box);
    for (const auto& d : dets) {
      const auto label = active_label(*seq.gt, d);
      if (!label) continue;
      out.push_back({active_features(d, seq.extent), *label, FeatureKind::Active, frame, 0, SampleSource::Trainer, 0});
      if (opt.synthetic_per_detection == 0 || *label < 0) continue;
      // Jittered copies of a true positive: positives close to it, negatives
      // straddling it. Both keep the anchor's confidence.
      std::vector<BoundingBox> others;
      for (const auto& b : gt_boxes) {
        if (iou(b, d.box) < 0.5) others.push_back(b);
      }
      std::vector<BoundingBox> synth;
      for (auto lbl : {SampleLabel::Positive, SampleLabel::Negative}) {
        const auto boxes = synthesize_boxes(d.box, others, synth, lbl, opt.synthetic_per_detection, ++salt);
        for (const auto& b : boxes) {
          synth.push_back(b);
          if (!b.valid()) continue;
          out.push_back({active_features(Detection{frame, b, d.confidence}, seq.extent),
                         lbl == SampleLabel::Positive ? 1 : -1, FeatureKind::Active, frame, 0, SampleSource::Synthetic,
                         0});
        }
      }
    }
  }
  return out;
}

// --- incremental training ------------------------------------------------------------

struct TrainerConfig {
  ScheduleLimits limits;
  int ibt_iters = 3;
  bool data_from_tester = false;
  bool accumulative_data = true;
  bool train_from_scratch = true;
  TrainConfig learner;
  LossKind loss = LossKind::Hinge;
  double focal_gamma = 0.0;
  PolicySpec tracked_policy{PolicyKind::Heuristic};  // incremental mode
  ActiveDataOptions active_data;
  TrackerConfig tracker;
  TesterConfig tester;
  std::uint64_t seed = 1;
};

struct TrainedTrajectory {
  std::size_t sequence = 0;
  GtTrajectory trajectory;
};

inline std::vector<TrainedTrajectory> collect_trajectories(std::span<const SequenceData> seqs) {
  std::vector<TrainedTrajectory> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    expects(seqs[s].gt != nullptr, "training needs ground truth");
    for (auto& t : filter_trajectories(*seqs[s].gt, seqs[s].detections, seqs[s].extent)) out.push_back({s, std::move(t)});
  }
  return out;
}

inline LinearModel blank_model(const TrainerConfig& cfg) {
  LinearModel m;
  m.loss = cfg.loss;
  m.focal_gamma = cfg.focal_gamma;
  return m;
}

struct IncrementalResult {
  ModelSet models;
  SampleStore samples;
  ScheduleTrace schedule;
  std::vector<int> untrainable_ids;
};

/// Incremental training: the active model is trained in batch first; the lost model is
/// retrained after every incorrect Lost decision on the accumulated samples.
inline IncrementalResult incremental_train(std::span<const SequenceData> seqs, const TrainerConfig& cfg) {
  IncrementalResult res;
  std::vector<TrainingSample> active;
  for (const auto& seq : seqs) {
    auto a = active_samples(seq, cfg.active_data);
    active.insert(active.end(), a.begin(), a.end());
  }
  if (!active.empty()) {
    res.samples.add(active);
    const auto [pos, neg] = res.samples.class_counts(FeatureKind::Active);
    if (pos > 0 && neg > 0) res.models.active = train(blank_model(cfg), active, cfg.learner);
  }

  const auto trajs = collect_trajectories(seqs);
  EpisodeOptions eo;
  eo.policies.tracked = cfg.tracked_policy;
  eo.policies.lost = PolicySpec{PolicyKind::Learned};
  eo.seed = cfg.seed;
  auto& lost = res.samples.of(FeatureKind::Lost);
  auto retrain = [&](std::vector<TrainingSample> fix) {
    for (auto& s : fix) lost.push_back(std::move(s));
    const auto [pos, neg] = res.samples.class_counts(FeatureKind::Lost);
    if (pos == 0 || neg == 0) return;
    res.models.lost = train(blank_model(cfg), lost, cfg.learner);
  };
  res.schedule = run_incremental_schedule(trajs.size(), cfg.limits, [&](std::size_t i) {
    const auto& tt = trajs[i];
    return run_trainer_episode(tt.trajectory, seqs[tt.sequence], res.models, cfg.tracker, eo, retrain).failures;
  });
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (!res.schedule.status[i].trainable) res.untrainable_ids.push_back(trajs[i].trajectory.id);
  }
  return res;
}

// --- evaluation helpers ------------------------------------------------------------------

struct PolicyAccuracy {
  StateTally active;
  StateTally tracked;
  StateTally lost;

  double overall() const {
    const auto n = active.decisions + tracked.decisions + lost.decisions;
    return n ? static_cast<double>(active.correct + tracked.correct + lost.correct) / static_cast<double>(n) : 0.0;
  }
};

/// Decision accuracy against the relative oracle: the active policy on every
/// detection, tracked / lost policies along each GT trajectory.
inline PolicyAccuracy evaluate_policies(std::span<const SequenceData> seqs, const PolicySet& policies,
                                        const ModelSet& models, const TrackerConfig& tc, std::uint64_t seed) {
  PolicyAccuracy acc;
  std::mt19937_64 rng(seed);
  const PolicySpec oracle{PolicyKind::RelativeOracle};
  for (const auto& seq : seqs) {
    for (const auto& [frame, dets] : seq.detections) {
      for (const auto& d : dets) {
        const OracleContext ctx{seq.gt, frame, -1};
        const auto a = decide_active(policies.active, models.active_ptr(), d, seq.extent, ctx, &rng);
        const auto b = decide_active(oracle, nullptr, d, seq.extent, ctx);
        acc.active.add(a.action == b.action);
      }
    }
  }
  EpisodeOptions eo;
  eo.policies = policies;
  eo.seed = seed;
  for (const auto& tt : collect_trajectories(seqs)) {
    const auto r = run_trainer_episode(tt.trajectory, seqs[tt.sequence], models, tc, eo);
    acc.tracked.decisions += r.tracked.decisions;
    acc.tracked.correct += r.tracked.correct;
    acc.lost.decisions += r.lost.decisions;
    acc.lost.correct += r.lost.correct;
  }
  return acc;
}

struct SequenceScore {
  ClearReport clear;
  HotaReport hota;
};

inline std::vector<SequenceScore> test_sequences(std::span<const SequenceData> seqs, const PolicySet& policies,
                                                 const ModelSet& models, const TesterConfig& cfg, std::uint64_t seed) {
  std::vector<SequenceScore> out;
  for (const auto& seq : seqs) {
    expects(seq.gt != nullptr, "testing needs ground truth");
    const auto run = run_sequence(seq, policies, models, cfg, {seed});
    out.push_back({clear_mot(*seq.gt, run.trajectories), hota(*seq.gt, run.trajectories)});
  }
  return out;
}

// --- iterative batch training -----------------------------------------------------------

inline void save_models(const std::filesystem::path& dir, const ModelSet& m) {
  std::filesystem::create_directories(dir);
  if (m.active) save_model(dir / "active.mdpm", *m.active);
  if (m.tracked) save_model(dir / "tracked.mdpm", *m.tracked);
  if (m.lost) save_model(dir / "lost.mdpm", *m.lost);
}

inline ModelSet load_models(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("model directory not found: " + dir.string());
  ModelSet m;
  if (std::filesystem::exists(dir / "active.mdpm")) m.active = load_model(dir / "active.mdpm");
  if (std::filesystem::exists(dir / "tracked.mdpm")) m.tracked = load_model(dir / "tracked.mdpm");
  if (std::filesystem::exists(dir / "lost.mdpm")) m.lost = load_model(dir / "lost.mdpm");
  return m;
}

/// Learned policies where a model exists; otherwise the stock fallbacks
/// (accept-all active, heuristic tracked, bootstrap lost).
inline PolicySet available_policies(const ModelSet& m) {
  PolicySet p{PolicySpec{PolicyKind::Learned}, PolicySpec{PolicyKind::Learned}, PolicySpec{PolicyKind::Learned}};
  if (!m.active) p.active = PolicySpec{PolicyKind::AlwaysPositive};
  if (!m.tracked_ptr()) p.tracked = PolicySpec{PolicyKind::Heuristic};
  if (!m.lost) p.lost = PolicySpec{PolicyKind::AlwaysPositive};
  return p;
}

struct IbtIteration {
  int iteration = 0;
  std::array<std::size_t, 3> new_samples{};
  std::array<std::size_t, 3> train_samples{};
  std::vector<std::string> warnings;
  PolicyAccuracy eval;
  std::vector<SequenceScore> test;
  ModelSet models;
  SampleStore saved;  // samples generated in this iteration
};

inline nlohmann::json to_json(const IbtIteration& it) {
  nlohmann::json j;
  j["iteration"] = it.iteration;
  for (auto k : kPolicyStates) {
    const auto i = static_cast<std::size_t>(k);
    j["new_samples"][std::string(to_string(k))] = it.new_samples[i];
    j["train_samples"][std::string(to_string(k))] = it.train_samples[i];
  }
  j["warnings"] = it.warnings;
  j["eval"] = {{"active", it.eval.active.accuracy()},
               {"tracked", it.eval.tracked.accuracy()},
               {"lost", it.eval.lost.accuracy()},
               {"overall", it.eval.overall()}};
  j["test"] = nlohmann::json::array();
  for (const auto& s : it.test) j["test"].push_back({{"clear", to_json(s.clear)}, {"hota", to_json(s.hota)}});
  return j;
}

/// Iterative batch training. Iteration 1 generates data with relative-oracle policies and keeps
/// every sample; later iterations run the previous models and keep only the
/// samples those models misclassify. When `model_dir` is non-empty, models,
/// samples and a JSON report are written under model_dir/iter_N.
inline std::vector<IbtIteration> ibt_run(std::span<const SequenceData> train_seqs,
                                         std::span<const SequenceData> test_seqs, const TrainerConfig& cfg,
                                         const std::filesystem::path& model_dir = {}) {
  expects(cfg.ibt_iters >= 1, "ibt: max_iters must be >= 1");
  std::vector<IbtIteration> iterations;
  SampleStore training_data;
  ModelSet models;
  const PolicySet oracle{PolicySpec{PolicyKind::RelativeOracle}, PolicySpec{PolicyKind::RelativeOracle},
                         PolicySpec{PolicyKind::RelativeOracle}};
  const auto trajs = collect_trajectories(train_seqs);

  for (int iter = 1; iter <= cfg.ibt_iters; ++iter) {
    IbtIteration rep;
    rep.iteration = iter;
    const bool first = iter == 1;
    const PolicySet gen = first ? oracle : available_policies(models);
    const SampleMode mode = first ? SampleMode::All : SampleMode::ErrorsOnly;
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(iter);
    ModelSet current = models;  // grows state by state within the iteration

    auto generate_from_trainer = [&](FeatureKind state) {
      std::vector<TrainingSample> out;
      if (state == FeatureKind::Active) {
        std::mt19937_64 rng(seed);
        for (const auto& seq : train_seqs) {
          for (const auto& [frame, dets] : seq.detections) {
            for (const auto& d : dets) {
              const auto label = active_label(*seq.gt, d);
              if (!label) continue;
              const OracleContext ctx{seq.gt, frame, -1};
              const auto dec = decide_active(gen.active, current.active_ptr(), d, seq.extent, ctx, &rng);
              if (!detail::keep_sample(mode, dec.probability, *label)) continue;
              out.push_back({dec.features, *label, FeatureKind::Active, frame, 0, SampleSource::Trainer, iter});
            }
          }
        }
        return out;
      }
      EpisodeOptions eo{gen, mode, iter, seed};
      // A single pass over the trajectories, one attempt each.
      for (const auto& tt : trajs) {
        auto r = run_trainer_episode(tt.trajectory, train_seqs[tt.sequence], current, cfg.tracker, eo);
        for (auto& s : r.samples) {
          if (s.state == state) out.push_back(std::move(s));
        }
      }
      return out;
    };

    SampleStore fresh;
    if (cfg.data_from_tester) {
      for (std::size_t s = 0; s < train_seqs.size(); ++s) {
        TesterOptions to{seed + s, false, mode, iter};
        fresh.add(run_sequence(train_seqs[s], gen, current, cfg.tester, to).samples);
      }
    }
    for (auto state : kPolicyStates) {
      const auto si = static_cast<std::size_t>(state);
      if (!cfg.data_from_tester) fresh.add(generate_from_trainer(state));
      rep.new_samples[si] = fresh.of(state).size();
      if (cfg.accumulative_data) {
        training_data.add(fresh.of(state));
      } else {
        training_data.of(state) = fresh.of(state);
      }
      const auto [pos, neg] = training_data.class_counts(state);
      rep.train_samples[si] = pos + neg;
      if (pos == 0 || neg == 0) {
        rep.warnings.push_back(std::string(to_string(state)) + ": missing " + (pos == 0 ? "positive" : "negative") +
                               " samples; model carried over");
        continue;
      }
      std::optional<LinearModel>& slot = state == FeatureKind::Active    ? current.active
                                         : state == FeatureKind::Tracked ? current.tracked
                                                                         : current.lost;
      LinearModel init = (cfg.train_from_scratch || !slot) ? blank_model(cfg) : *slot;
      TrainConfig tcfg = cfg.learner;
      tcfg.seed = cfg.learner.seed + static_cast<std::uint64_t>(iter) * 31 + si;
      slot = train(std::move(init), training_data.of(state), tcfg);
    }
    models = current;
    rep.saved = std::move(fresh);
    rep.models = models;

    const PolicySet eval_policies = available_policies(models);
    rep.eval = evaluate_policies(test_seqs, eval_policies, models, cfg.tracker, seed);
    rep.test = test_sequences(test_seqs, eval_policies, models, cfg.tester, seed);

    if (!model_dir.empty()) {
      const auto dir = model_dir / ("iter_" + std::to_string(iter));
      save_models(dir, models);
      rep.saved.save_csv(dir / "samples.csv");
      std::ofstream out(dir / "report.json");
      if (!out) throw IoError("cannot write report in " + dir.string());
      out << to_json(rep).dump(2) << '\n';
    }
    iterations.push_back(std::move(rep));
  }
  if (!model_dir.empty()) {
    save_models(model_dir, models);
    nlohmann::json all = nlohmann::json::array();
    for (const auto& it : iterations) all.push_back(to_json(it));
    std::ofstream out(model_dir / "ibt_report.json");
    if (!out) throw IoError("cannot write report in " + model_dir.string());
    out << all.dump(2) << '\n';
  }
  return iterations;
}

}  // namespace mdp
