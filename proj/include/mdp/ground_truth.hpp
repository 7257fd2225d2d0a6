#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mdp/core.hpp"

namespace mdp {

struct GtBox {
  int frame = 1;
  int id = 0;
  BoundingBox box;
  bool ignore = false;    // MOT flag column 0: parsed but excluded from evaluation
  bool occluded = false;  // simulator-only annotation
  double visibility = 1.0;
};

/// Ground-truth annotations indexed by frame and by track id. (frame, id)
/// pairs are unique.
class GroundTruth {
 public:
  void add(const GtBox& b) {
    expects(b.frame >= 1, "GroundTruth: frame must be >= 1");
    expects(b.box.valid(), "GroundTruth: invalid box for id " + std::to_string(b.id));
    auto& track = by_id_[b.id];
    expects(!track.contains(b.frame),
            "GroundTruth: duplicate (frame, id) = (" + std::to_string(b.frame) + ", " + std::to_string(b.id) + ")");
    track[b.frame] = boxes_.size();
    by_frame_[b.frame].push_back(boxes_.size());
    boxes_.push_back(b);
  }

  std::span<const GtBox> boxes() const { return boxes_; }
  bool empty() const { return boxes_.empty(); }

  std::vector<const GtBox*> in_frame(int frame, bool include_ignored = true) const {
    std::vector<const GtBox*> out;
    auto it = by_frame_.find(frame);
    if (it == by_frame_.end()) return out;
    for (auto i : it->second) {
      if (include_ignored || !boxes_[i].ignore) out.push_back(&boxes_[i]);
    }
    return out;
  }

  const GtBox* find(int id, int frame) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return nullptr;
    auto jt = it->second.find(frame);
    return jt == it->second.end() ? nullptr : &boxes_[jt->second];
  }

  /// Boxes of one track in frame order.
  std::vector<const GtBox*> track(int id) const {
    std::vector<const GtBox*> out;
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return out;
    for (const auto& [frame, idx] : it->second) out.push_back(&boxes_[idx]);
    return out;
  }

  std::vector<int> ids() const {
    std::vector<int> out;
    for (const auto& [id, _] : by_id_) out.push_back(id);
    return out;
  }

  int max_frame() const { return by_frame_.empty() ? 0 : by_frame_.rbegin()->first; }

  int last_frame(int id) const {
    auto it = by_id_.find(id);
    return (it == by_id_.end() || it->second.empty()) ? 0 : it->second.rbegin()->first;
  }

  /// Evaluation view: all non-ignored boxes.
  std::size_t evaluable_count() const {
    std::size_t n = 0;
    for (const auto& b : boxes_) n += b.ignore ? 0 : 1;
    return n;
  }

 private:
  std::vector<GtBox> boxes_;
  std::map<int, std::vector<std::size_t>> by_frame_;
  std::map<int, std::map<int, std::size_t>> by_id_;
};

}  // namespace mdp
