#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mdp/core.hpp"
#include "mdp/features.hpp"
#include "mdp/geometry.hpp"
#include "mdp/ground_truth.hpp"
#include "mdp/patch_tracking.hpp"
#include "mdp/sampling.hpp"

namespace mdp {

// --- linear classifier -------------------------------------------------------

enum class LossKind : std::uint8_t { Hinge = 0, Logistic = 1 };

struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  LossKind loss = LossKind::Hinge;
  double focal_gamma = 0.0;

  std::size_t dim() const { return weights.size(); }
  bool trained() const { return !weights.empty(); }

  friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double margin(const LinearModel& m, std::span<const double> f) {
  expects(f.size() == m.dim(), "predict: feature dimension " + std::to_string(f.size()) +
                                   " does not match model dimension " + std::to_string(m.dim()));
  return std::inner_product(f.begin(), f.end(), m.weights.begin(), m.bias);
}

/// Logistic models return sigmoid(w.f + b); hinge models use the fixed
/// calibration sigmoid(2 (w.f + b)). The decision threshold is 0.5.
inline double predict(const LinearModel& m, std::span<const double> f) {
  const double z = margin(m, f);
  return m.loss == LossKind::Logistic ? sigmoid(z) : sigmoid(2.0 * z);
}

inline double predict(const LinearModel& m, const FeatureVector& f) { return predict(m, std::span<const double>(f.values)); }

enum class SampleSource : std::uint8_t { Trainer, Tester, Synthetic };

struct TrainingSample {
  FeatureVector features;
  int label = 1;  // +1 / -1
  FeatureKind state = FeatureKind::Lost;
  int frame = 0;
  int target_id = -1;
  SampleSource source = SampleSource::Trainer;
  int iteration = 0;
};

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 0.1;
  double l2 = 1e-4;
  std::size_t batch_size = 16;
  double ohem_ratio = 1.0;  // fraction of each batch (highest loss first) kept
  std::uint64_t seed = 1;
  bool allow_single_class = false;
  RebalanceStrategy rebalance = RebalanceStrategy::None;
};

namespace detail {

struct LossGrad {
  double loss;
  double dz;  // dL/dz
};

inline LossGrad sample_loss(const LinearModel& m, double z, int y) {
  const double yz = static_cast<double>(y) * z;
  if (m.loss == LossKind::Hinge) {
    return yz < 1.0 ? LossGrad{1.0 - yz, -static_cast<double>(y)} : LossGrad{0.0, 0.0};
  }
  const double p = sigmoid(yz);  // probability assigned to the correct class
  const double logp = yz >= 0 ? -std::log1p(std::exp(-yz)) : yz - std::log1p(std::exp(yz));
  if (m.focal_gamma == 0.0) return {-logp, -static_cast<double>(y) * (1.0 - p)};
  const double g = m.focal_gamma;
  const double w = std::pow(1.0 - p, g);
  const double dz = static_cast<double>(y) * (g * w * p * logp - w * (1.0 - p));
  return {-w * logp, dz};
}

}  // namespace detail

/// Mini-batch stochastic (sub)gradient descent with L2 regularization. An
/// untrained model starts from zero weights; a trained one is warm-started.
inline LinearModel train(LinearModel model, std::span<const TrainingSample> samples, const TrainConfig& cfg = {}) {
  expects(!samples.empty(), "train: no samples");
  const std::size_t dim = samples.front().features.size();
  std::vector<int> labels;
  labels.reserve(samples.size());
  bool has_pos = false, has_neg = false;
  for (const auto& s : samples) {
    expects(s.features.size() == dim, "train: inconsistent feature dimension");
    expects(s.label == 1 || s.label == -1, "train: labels must be +1 or -1");
    labels.push_back(s.label);
    (s.label > 0 ? has_pos : has_neg) = true;
  }
  if (!cfg.allow_single_class) {
    if (!has_pos) throw ContractViolation("train: no positive samples (missing class +1)");
    if (!has_neg) throw ContractViolation("train: no negative samples (missing class -1)");
  }
  expects(cfg.ohem_ratio > 0.0 && cfg.ohem_ratio <= 1.0, "train: ohem ratio must be in (0, 1]");
  if (!model.trained()) {
    model.weights.assign(dim, 0.0);
    model.bias = 0.0;
  }
  expects(model.dim() == dim, "train: warm-start model dimension mismatch");

  const bool balance = cfg.rebalance != RebalanceStrategy::None && has_pos && has_neg;
  Rebalancer rebalancer(labels, balance ? cfg.rebalance : RebalanceStrategy::None, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 rng(cfg.seed);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  std::vector<double> grad(dim);
  std::vector<std::pair<double, std::size_t>> scored;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = rebalancer.epoch();
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.learning_rate / (1.0 + 0.02 * epoch);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      scored.clear();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& s = samples[order[k]];
        const double z = std::inner_product(s.features.values.begin(), s.features.values.end(), model.weights.begin(),
                                            model.bias);
        const auto lg = detail::sample_loss(model, z, s.label);
        scored.emplace_back(lg.loss, k);
      }
      std::size_t keep = scored.size();
      if (cfg.ohem_ratio < 1.0) {
        keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.ohem_ratio * scored.size())));
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      double gbias = 0.0;
      for (std::size_t j = 0; j < keep; ++j) {
        const auto& s = samples[order[scored[j].second]];
        const double z = std::inner_product(s.features.values.begin(), s.features.values.end(), model.weights.begin(),
                                            model.bias);
        const double dz = detail::sample_loss(model, z, s.label).dz;
        for (std::size_t d = 0; d < dim; ++d) grad[d] += dz * s.features.values[d];
        gbias += dz;
      }
      const double inv = 1.0 / static_cast<double>(keep);
      for (std::size_t d = 0; d < dim; ++d) model.weights[d] -= lr * (grad[d] * inv + cfg.l2 * model.weights[d]);
      model.bias -= lr * gbias * inv;
    }
  }
  return model;
}

inline double accuracy(const LinearModel& m, std::span<const TrainingSample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& s : samples) ok += ((predict(m, s.features) >= 0.5) == (s.label > 0)) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(samples.size());
}

// --- persistence: "MDPM" little-endian binary --------------------------------

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(std::span<const unsigned char> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("model file truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline std::vector<unsigned char> serialize_model(const LinearModel& m) {
  std::vector<unsigned char> out = {'M', 'D', 'P', 'M'};
  detail::put_le<std::uint32_t>(out, kModelFormatVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(m.loss));
  detail::put_le<double>(out, m.focal_gamma);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  detail::put_le<double>(out, m.bias);
  for (double w : m.weights) detail::put_le<double>(out, w);
  return out;
}

inline LinearModel deserialize_model(std::span<const unsigned char> in) {
  if (in.size() < 4 || std::memcmp(in.data(), "MDPM", 4) != 0) throw IoError("bad model magic");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(in, pos);
  if (version != kModelFormatVersion) throw IoError("unsupported model version " + std::to_string(version));
  LinearModel m;
  const auto loss = detail::get_le<std::uint8_t>(in, pos);
  if (loss > 1) throw IoError("bad loss kind in model file");
  m.loss = static_cast<LossKind>(loss);
  m.focal_gamma = detail::get_le<double>(in, pos);
  const auto dim = detail::get_le<std::uint32_t>(in, pos);
  m.bias = detail::get_le<double>(in, pos);
  m.weights.resize(dim);
  for (auto& w : m.weights) w = detail::get_le<double>(in, pos);
  if (pos != in.size()) throw IoError("trailing bytes in model file");
  return m;
}

inline void save_model(const std::filesystem::path& path, const LinearModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model " + path.string());
  const auto bytes = serialize_model(m);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

// --- policies ------------------------------------------------------------------

/// Heuristic is the stock rule of the tracked state (tracking success plus a
/// matching detection); the rest apply to every state.
enum class PolicyKind : std::uint8_t { Learned, Heuristic, RelativeOracle, AbsoluteOracle, AlwaysPositive, Random };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Learned: return "learned";
    case PolicyKind::Heuristic: return "heuristic";
    case PolicyKind::RelativeOracle: return "relative";
    case PolicyKind::AbsoluteOracle: return "absolute";
    case PolicyKind::AlwaysPositive: return "positive";
    case PolicyKind::Random: return "random";
  }
  return "?";
}

struct PolicySpec {
  PolicyKind kind = PolicyKind::Learned;
  std::uint64_t seed = 0;  // Random only

  bool is_oracle() const { return kind == PolicyKind::RelativeOracle || kind == PolicyKind::AbsoluteOracle; }
};

/// "learned", "heuristic", "relative", "absolute", "positive", "random" or "random:SEED".
inline PolicySpec parse_policy(std::string_view s) {
  PolicySpec spec;
  std::string_view name = s;
  if (auto colon = s.find(':'); colon != std::string_view::npos) {
    name = s.substr(0, colon);
    spec.seed = std::stoull(std::string(s.substr(colon + 1)));
  }
  if (name == "learned") spec.kind = PolicyKind::Learned;
  else if (name == "heuristic") spec.kind = PolicyKind::Heuristic;
  else if (name == "relative") spec.kind = PolicyKind::RelativeOracle;
  else if (name == "absolute") spec.kind = PolicyKind::AbsoluteOracle;
  else if (name == "positive") spec.kind = PolicyKind::AlwaysPositive;
  else if (name == "random") spec.kind = PolicyKind::Random;
  else throw ContractViolation("unknown policy kind: " + std::string(s));
  return spec;
}

struct Decision {
  PolicyAction action = PolicyAction::A2;
  double probability = 0.0;
  FeatureVector features;
};

/// Ground truth view for the oracles: the current frame and the GT identity
/// the target was spawned from (-1 for targets created from false positives).
struct OracleContext {
  const GroundTruth* gt = nullptr;
  int frame = 1;
  int target_gt_id = -1;

  const GtBox* target_box() const {
    if (!gt || target_gt_id < 0) return nullptr;
    const GtBox* b = gt->find(target_gt_id, frame);
    return (b && !b->ignore) ? b : nullptr;
  }
};

inline void require_gt(const PolicySpec& spec, const OracleContext& ctx) {
  if (spec.is_oracle() && !ctx.gt) {
    throw ContractViolation("oracle policy '" + std::string(to_string(spec.kind)) + "' needs ground truth");
  }
}

/// GT id of the best-overlapping annotation in the detection's frame, if that
/// overlap exceeds `min_iou`.
inline int match_gt_id(const GroundTruth& gt, const BoundingBox& box, int frame, double min_iou = 0.5) {
  int best = -1;
  double best_iou = min_iou;
  for (const GtBox* g : gt.in_frame(frame, false)) {
    const double o = iou(g->box, box);
    if (o > best_iou) {
      best_iou = o;
      best = g->id;
    }
  }
  return best;
}

inline bool coin(std::mt19937_64* rng) {
  expects(rng != nullptr, "random policy needs an RNG");
  return std::bernoulli_distribution(0.5)(*rng);
}

/// A1 (start tracking) or A2 (discard) for a detection no target claimed.
/// Oracles accept a detection iff it overlaps a GT box by > 0.5 whose identity
/// is not already held by a live target (`owned_gt`).
inline Decision decide_active(const PolicySpec& spec, const LinearModel* model, const Detection& det,
                              const ImageExtent& img, const OracleContext& ctx, std::mt19937_64* rng = nullptr,
                              const std::set<int>* owned_gt = nullptr) {
  require_gt(spec, ctx);
  Decision d;
  d.features = active_features(det, img);
  switch (spec.kind) {
    case PolicyKind::Learned:
      expects(model && model->trained(), "learned active policy has no model");
      d.probability = predict(*model, d.features);
      break;
    case PolicyKind::Heuristic:
    case PolicyKind::AlwaysPositive:
      d.probability = 1.0;
      break;
    case PolicyKind::Random:
      d.probability = coin(rng) ? 1.0 : 0.0;
      break;
    case PolicyKind::RelativeOracle:
    case PolicyKind::AbsoluteOracle: {
      const int id = match_gt_id(*ctx.gt, det.box, det.frame);
      d.probability = (id >= 0 && !(owned_gt && owned_gt->contains(id))) ? 1.0 : 0.0;
      break;
    }
  }
  d.action = d.probability >= 0.5 ? PolicyAction::A1 : PolicyAction::A2;
  return d;
}

struct TrackedPolicyConfig {
  bool ignore_detections = false;
};

/// Features for the tracked decision: the lost-state layout evaluated against
/// the matching detection, or against the tracked box itself when there is none.
inline FeatureVector tracked_features(const TrackResult& summary, const BoundingBox& tracked_box,
                                      const std::optional<Detection>& matching_det, const ImageExtent& img,
                                      int frame) {
  const Detection probe = matching_det.value_or(Detection{frame, tracked_box, 0.5});
  return lost_features(summary, tracked_box, probe, img, FeatureKind::Tracked);
}

/// A3 (keep tracking) or A4 (lose). Without `ignore_detections`, a missing
/// matching detection always yields A4 for the non-oracle kinds.
inline Decision decide_tracked(const PolicySpec& spec, const LinearModel* model, const TrackResult& summary,
                               const BoundingBox& tracked_box, const std::optional<Detection>& matching_det,
                               const ImageExtent& img, const OracleContext& ctx,
                               const TrackedPolicyConfig& cfg = {}, std::mt19937_64* rng = nullptr) {
  require_gt(spec, ctx);
  Decision d;
  d.features = tracked_features(summary, tracked_box, matching_det, img, ctx.frame);
  const bool det_ok = cfg.ignore_detections || matching_det.has_value();
  bool keep = false;
  switch (spec.kind) {
    case PolicyKind::Heuristic:
      keep = summary.success && det_ok;
      d.probability = keep ? 1.0 : 0.0;
      break;
    case PolicyKind::AlwaysPositive:
      keep = det_ok;
      d.probability = 1.0;
      break;
    case PolicyKind::Random:
      d.probability = coin(rng) ? 1.0 : 0.0;
      keep = det_ok && d.probability >= 0.5;
      break;
    case PolicyKind::Learned:
      if (!model || !model->trained()) throw ContractViolation("learned tracked policy has no model");
      d.probability = predict(*model, d.features);
      keep = det_ok && d.probability >= 0.5;
      break;
    case PolicyKind::AbsoluteOracle:
      keep = ctx.target_box() != nullptr;
      d.probability = keep ? 1.0 : 0.0;
      break;
    case PolicyKind::RelativeOracle: {
      const GtBox* g = ctx.target_box();
      keep = g && ((summary.success && iou(tracked_box, g->box) > 0.5) ||
                   (matching_det && iou(matching_det->box, g->box) > 0.5));
      d.probability = keep ? 1.0 : 0.0;
      break;
    }
  }
  d.action = keep ? PolicyAction::A3 : PolicyAction::A4;
  return d;
}

struct LostPolicyConfig {
  double exit_inside_min = 0.5;
  int max_lost = 50;
};

/// Per-candidate match probabilities for one Lost target. The association
/// across targets is resolved by the caller.
struct LostEvaluation {
  bool exits = false;                 // A7
  std::vector<double> probabilities;  // aligned with candidates
};

inline LostEvaluation evaluate_lost(const PolicySpec& spec, const LinearModel* model,
                                    std::span<const Detection> candidates, std::span<const FeatureVector> features,
                                    const BoundingBox& predicted, int lost_duration, const ImageExtent& img,
                                    const OracleContext& ctx, const LostPolicyConfig& cfg = {},
                                    std::mt19937_64* rng = nullptr) {
  require_gt(spec, ctx);
  expects(candidates.size() == features.size(), "evaluate_lost: candidates and features misaligned");
  LostEvaluation ev;
  if (spec.kind == PolicyKind::AbsoluteOracle) {
    ev.exits = ctx.target_gt_id < 0 || ctx.frame > ctx.gt->last_frame(ctx.target_gt_id);
  } else if (inside_fraction(predicted, img) < cfg.exit_inside_min || lost_duration > cfg.max_lost) {
    ev.exits = true;
  }
  if (ev.exits) return ev;
  ev.probabilities.resize(candidates.size(), 0.0);
  switch (spec.kind) {
    case PolicyKind::Learned:
      if (candidates.empty()) break;
      if (!model || !model->trained()) throw ContractViolation("learned lost policy has no model");
      for (std::size_t i = 0; i < candidates.size(); ++i) ev.probabilities[i] = predict(*model, features[i]);
      break;
    case PolicyKind::Heuristic:
    case PolicyKind::AlwaysPositive:
      // Every candidate is positive; overlap with the prediction ranks them.
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        ev.probabilities[i] = 0.5 + 0.5 * iou(predicted, candidates[i].box);
      }
      break;
    case PolicyKind::Random: {
      expects(rng != nullptr, "random policy needs an RNG");
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (auto& p : ev.probabilities) p = u(*rng);
      break;
    }
    case PolicyKind::RelativeOracle:
    case PolicyKind::AbsoluteOracle: {
      const GtBox* g = ctx.target_box();
      if (g) {
        for (std::size_t i = 0; i < candidates.size(); ++i) {
          const double o = iou(candidates[i].box, g->box);
          ev.probabilities[i] = o > 0.5 ? o : 0.0;
        }
      }
      break;
    }
  }
  return ev;
}

struct LostDecision {
  PolicyAction action = PolicyAction::A5;
  int candidate = -1;  // index of the associated detection for A6, -1 otherwise
  double probability = 0.0;
};

/// Single-target resolution: A7 on exit, otherwise A6 with the most probable
/// candidate if it reaches 0.5 (lowest index on ties), otherwise A5.
inline LostDecision resolve_lost(const LostEvaluation& ev) {
  if (ev.exits) return {PolicyAction::A7, -1, 0.0};
  int best = -1;
  for (std::size_t i = 0; i < ev.probabilities.size(); ++i) {
    if (best < 0 || ev.probabilities[i] > ev.probabilities[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  if (best >= 0 && ev.probabilities[static_cast<std::size_t>(best)] >= 0.5) {
    return {PolicyAction::A6, best, ev.probabilities[static_cast<std::size_t>(best)]};
  }
  return {PolicyAction::A5, -1, best >= 0 ? ev.probabilities[static_cast<std::size_t>(best)] : 0.0};
}

inline LostDecision decide_lost(const PolicySpec& spec, const LinearModel* model,
                                std::span<const Detection> candidates, std::span<const FeatureVector> features,
                                const BoundingBox& predicted, int lost_duration, const ImageExtent& img,
                                const OracleContext& ctx, const LostPolicyConfig& cfg = {},
                                std::mt19937_64* rng = nullptr) {
  return resolve_lost(evaluate_lost(spec, model, candidates, features, predicted, lost_duration, img, ctx, cfg, rng));
}

}  // namespace mdp
