#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mdp {

/// Thrown when a caller breaks an operation's precondition (CLI exit code 2).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown on unreadable / unwritable files (CLI exit code 1).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void expects(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

/// Axis-aligned box, top-left corner plus size, in (continuous) pixels.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }

  bool valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 && h > 0.0;
  }

  BoundingBox translated(double dx, double dy) const { return {x + dx, y + dy, w, h}; }

  static BoundingBox from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Detection {
  int frame = 1;
  BoundingBox box;
  double confidence = 1.0;

  bool valid() const { return frame >= 1 && box.valid() && confidence >= 0.0 && confidence <= 1.0; }

  friend bool operator==(const Detection&, const Detection&) = default;
};

enum class TrackState : std::uint8_t { Active, Tracked, Lost, Inactive };

// A1/A2 leave Active, A3/A4/TrackedToInactive leave Tracked, A5/A6/A7 leave Lost.
enum class PolicyAction : std::uint8_t { A1, A2, A3, A4, A5, A6, A7, TrackedToInactive };

inline std::string_view to_string(TrackState s) {
  switch (s) {
    case TrackState::Active: return "active";
    case TrackState::Tracked: return "tracked";
    case TrackState::Lost: return "lost";
    case TrackState::Inactive: return "inactive";
  }
  return "?";
}

inline std::string_view to_string(PolicyAction a) {
  switch (a) {
    case PolicyAction::A1: return "A1";
    case PolicyAction::A2: return "A2";
    case PolicyAction::A3: return "A3";
    case PolicyAction::A4: return "A4";
    case PolicyAction::A5: return "A5";
    case PolicyAction::A6: return "A6";
    case PolicyAction::A7: return "A7";
    case PolicyAction::TrackedToInactive: return "TrackedToInactive";
  }
  return "?";
}

inline TrackState source_state(PolicyAction a) {
  switch (a) {
    case PolicyAction::A1:
    case PolicyAction::A2: return TrackState::Active;
    case PolicyAction::A3:
    case PolicyAction::A4:
    case PolicyAction::TrackedToInactive: return TrackState::Tracked;
    case PolicyAction::A5:
    case PolicyAction::A6:
    case PolicyAction::A7: return TrackState::Lost;
  }
  return TrackState::Inactive;
}

/// The MDP transition table. Inactive is a sink: every action from it is illegal.
inline TrackState apply_transition(TrackState state, PolicyAction action) {
  if (state == TrackState::Inactive || source_state(action) != state) {
    throw ContractViolation("illegal transition: action " + std::string(to_string(action)) + " from state " +
                            std::string(to_string(state)));
  }
  switch (action) {
    case PolicyAction::A1: return TrackState::Tracked;
    case PolicyAction::A2: return TrackState::Inactive;
    case PolicyAction::A3: return TrackState::Tracked;
    case PolicyAction::A4: return TrackState::Lost;
    case PolicyAction::A5: return TrackState::Lost;
    case PolicyAction::A6: return TrackState::Tracked;
    case PolicyAction::A7: return TrackState::Inactive;
    case PolicyAction::TrackedToInactive: return TrackState::Inactive;
  }
  return state;
}

struct TrajectoryPoint {
  int frame = 1;
  BoundingBox box;
  TrackState state = TrackState::Tracked;
};

struct TrajectoryEntry {
  int frame = 1;
  BoundingBox box;

  friend bool operator==(const TrajectoryEntry&, const TrajectoryEntry&) = default;
};

/// Emitted output of one target: only frames in which it was Tracked.
struct Trajectory {
  int id = 0;
  std::vector<TrajectoryEntry> entries;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Velocity {
  double dx = 0.0;
  double dy = 0.0;
};

/// Mean per-frame displacement of box centers over the last `window` Tracked
/// observations. Fewer than two observations give zero velocity.
inline Velocity estimate_velocity(std::span<const TrajectoryPoint> record, std::size_t window = 5) {
  std::vector<const TrajectoryPoint*> obs;
  for (auto it = record.rbegin(); it != record.rend() && obs.size() < window; ++it) {
    if (it->state == TrackState::Tracked) obs.push_back(&*it);
  }
  if (obs.size() < 2) return {};
  const TrajectoryPoint& last = *obs.front();
  const TrajectoryPoint& first = *obs.back();
  const double frames = static_cast<double>(last.frame - first.frame);
  if (frames <= 0.0) return {};
  return {(last.box.cx() - first.box.cx()) / frames, (last.box.cy() - first.box.cy()) / frames};
}

/// Constant-velocity extrapolation from the last Tracked observation.
inline BoundingBox predict_location(std::span<const TrajectoryPoint> record, int frame, std::size_t window = 5) {
  auto last = std::find_if(record.rbegin(), record.rend(),
                           [](const TrajectoryPoint& p) { return p.state == TrackState::Tracked; });
  expects(last != record.rend(), "predict_location: empty trajectory");
  expects(frame > last->frame, "predict_location: frame must follow the last tracked observation");
  const Velocity v = estimate_velocity(record, window);
  const double gap = static_cast<double>(frame - last->frame);
  return last->box.translated(v.dx * gap, v.dy * gap);
}

}  // namespace mdp
