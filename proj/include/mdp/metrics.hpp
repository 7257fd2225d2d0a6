#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdp/assignment.hpp"
#include "mdp/core.hpp"
#include "mdp/geometry.hpp"
#include "mdp/ground_truth.hpp"

namespace mdp {

struct ClearReport {
  double mota = 0.0;
  double motp = 0.0;  // mean IOU of matches, percent
  double mt = 0.0;
  double ml = 0.0;
  std::size_t ids = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tp = 0;
  std::size_t gt_count = 0;
  std::size_t gt_tracks = 0;
};

struct HotaReport {
  std::vector<double> alphas;
  std::vector<double> hota;
  std::vector<double> deta;
  std::vector<double> assa;
  double hota_avg = 0.0;
  double deta_avg = 0.0;
  double assa_avg = 0.0;
};

inline std::vector<double> default_alphas() {
  std::vector<double> a;
  for (int i = 1; i <= 19; ++i) a.push_back(0.05 * i);
  return a;
}

namespace detail {

struct FrameBox {
  int id;
  BoundingBox box;
};

struct EvalFrames {
  std::map<int, std::vector<FrameBox>> gt;
  std::map<int, std::vector<FrameBox>> pred;
  std::map<int, std::size_t> gt_len;    // per GT id
  std::map<int, std::size_t> pred_len;  // per prediction id
  std::size_t gt_total = 0;
  std::size_t pred_total = 0;
};

/// Evaluable GT plus predictions. Predictions that only cover an ignored GT
/// region (IOU >= 0.5 with it, < 0.5 with every evaluable box) are dropped.
inline EvalFrames prepare(const GroundTruth& gt, std::span<const Trajectory> results) {
  EvalFrames ev;
  for (const auto& b : gt.boxes()) {
    if (b.ignore) continue;
    ev.gt[b.frame].push_back({b.id, b.box});
    ++ev.gt_len[b.id];
    ++ev.gt_total;
  }
  for (const auto& tr : results) {
    for (const auto& e : tr.entries) {
      bool ignored = false;
      for (const GtBox* g : gt.in_frame(e.frame, true)) {
        if (g->ignore && iou(g->box, e.box) >= 0.5) ignored = true;
      }
      if (ignored) {
        for (const GtBox* g : gt.in_frame(e.frame, false)) {
          if (iou(g->box, e.box) >= 0.5) ignored = false;
        }
      }
      if (ignored) continue;
      ev.pred[e.frame].push_back({tr.id, e.box});
      ++ev.pred_len[tr.id];
      ++ev.pred_total;
    }
  }
  return ev;
}

/// Maximum-IOU one-to-one matching restricted to pairs with IOU >= thr.
/// Returns (gt index, pred index) pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> match_frame(const std::vector<FrameBox>& g,
                                                                    const std::vector<FrameBox>& p,
                                                                    const std::vector<char>& g_free,
                                                                    const std::vector<char>& p_free, double thr) {
  std::vector<std::size_t> gi, pi;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g_free[i]) gi.push_back(i);
  }
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p_free[j]) pi.push_back(j);
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (gi.empty() || pi.empty()) return out;
  constexpr double kInvalid = 1e3;
  CostMatrix c(gi.size(), pi.size(), kInvalid);
  bool any = false;
  for (std::size_t a = 0; a < gi.size(); ++a) {
    for (std::size_t b = 0; b < pi.size(); ++b) {
      const double o = iou(g[gi[a]].box, p[pi[b]].box);
      if (o >= thr && o > 0.0) {
        c(a, b) = 1.0 - o;
        any = true;
      }
    }
  }
  if (!any) return out;
  const Assignment asg = hungarian(c);
  for (std::size_t a = 0; a < gi.size(); ++a) {
    const int b = asg.row_to_col[a];
    if (b >= 0 && c(a, static_cast<std::size_t>(b)) < kInvalid) out.emplace_back(gi[a], pi[static_cast<std::size_t>(b)]);
  }
  return out;
}

}  // namespace detail

/// CLEAR MOT. Correspondences of the previous frame are kept while they still
/// overlap by >= iou_min; the remainder is matched by maximum IOU. An identity
/// switch is a GT track matched to a different prediction id than at its last
/// match.
inline ClearReport clear_mot(const GroundTruth& gt, std::span<const Trajectory> results, double iou_min = 0.5) {
  const auto ev = detail::prepare(gt, results);
  expects(ev.gt_total > 0, "clear_mot: empty ground truth (MOTA undefined)");
  ClearReport r;
  r.gt_count = ev.gt_total;
  r.gt_tracks = ev.gt_len.size();
  std::map<int, int> prev;        // GT id -> pred id matched in the previous frame
  std::map<int, int> last_match;  // GT id -> pred id at its latest match
  std::map<int, std::size_t> matched_per_gt;
  double iou_sum = 0.0;

  std::vector<int> frames;
  for (const auto& [f, _] : ev.gt) frames.push_back(f);
  for (const auto& [f, _] : ev.pred) frames.push_back(f);
  std::sort(frames.begin(), frames.end());
  frames.erase(std::unique(frames.begin(), frames.end()), frames.end());

  static const std::vector<detail::FrameBox> kNone;
  for (int f : frames) {
    const auto git = ev.gt.find(f);
    const auto pit = ev.pred.find(f);
    const auto& g = git == ev.gt.end() ? kNone : git->second;
    const auto& p = pit == ev.pred.end() ? kNone : pit->second;
    std::vector<char> g_free(g.size(), 1), p_free(p.size(), 1);
    std::vector<std::pair<std::size_t, std::size_t>> matches;
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto it = prev.find(g[i].id);
      if (it == prev.end()) continue;
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p_free[j] && p[j].id == it->second && iou(g[i].box, p[j].box) >= iou_min) {
          matches.emplace_back(i, j);
          g_free[i] = p_free[j] = 0;
          break;
        }
      }
    }
    for (const auto& m : detail::match_frame(g, p, g_free, p_free, iou_min)) matches.push_back(m);

    std::map<int, int> current;
    for (const auto& [i, j] : matches) {
      const int gid = g[i].id;
      const int pid = p[j].id;
      if (auto it = last_match.find(gid); it != last_match.end() && it->second != pid) ++r.ids;
      last_match[gid] = pid;
      current[gid] = pid;
      ++matched_per_gt[gid];
      iou_sum += iou(g[i].box, p[j].box);
    }
    prev = std::move(current);
    r.tp += matches.size();
    r.fn += g.size() - matches.size();
    r.fp += p.size() - matches.size();
  }
  r.mota = 1.0 - static_cast<double>(r.fn + r.fp + r.ids) / static_cast<double>(r.gt_count);
  r.motp = r.tp ? 100.0 * iou_sum / static_cast<double>(r.tp) : 0.0;
  std::size_t mt = 0, ml = 0;
  for (const auto& [gid, len] : ev.gt_len) {
    const double frac = static_cast<double>(matched_per_gt[gid]) / static_cast<double>(len);
    if (frac > 0.8) ++mt;
    if (frac < 0.2) ++ml;
  }
  r.mt = static_cast<double>(mt) / static_cast<double>(r.gt_tracks);
  r.ml = static_cast<double>(ml) / static_cast<double>(r.gt_tracks);
  return r;
}

/// HOTA with plain per-frame IOU matching at each alpha.
inline HotaReport hota(const GroundTruth& gt, std::span<const Trajectory> results,
                       std::span<const double> alphas = {}) {
  const auto ev = detail::prepare(gt, results);
  expects(ev.gt_total > 0, "hota: empty ground truth");
  HotaReport r;
  r.alphas = alphas.empty() ? default_alphas() : std::vector<double>(alphas.begin(), alphas.end());
  for (double a : r.alphas) expects(a > 0.0 && a <= 1.0, "hota: alpha must be in (0, 1]");
  static const std::vector<detail::FrameBox> kNone;
  for (double alpha : r.alphas) {
    std::map<std::pair<int, int>, std::size_t> pair_count;
    std::vector<std::pair<int, int>> tps;
    for (const auto& [f, g] : ev.gt) {
      const auto pit = ev.pred.find(f);
      const auto& p = pit == ev.pred.end() ? kNone : pit->second;
      const std::vector<char> g_free(g.size(), 1), p_free(p.size(), 1);
      for (const auto& [i, j] : detail::match_frame(g, p, g_free, p_free, alpha)) {
        tps.emplace_back(g[i].id, p[j].id);
        ++pair_count[{g[i].id, p[j].id}];
      }
    }
    const double tp = static_cast<double>(tps.size());
    const double fn = static_cast<double>(ev.gt_total) - tp;
    const double fp = static_cast<double>(ev.pred_total) - tp;
    const double deta = tp > 0 ? tp / (tp + fn + fp) : 0.0;
    double assa = 0.0;
    for (const auto& key : tps) {
      const double tpa = static_cast<double>(pair_count[key]);
      const double fna = static_cast<double>(ev.gt_len.at(key.first)) - tpa;
      const double fpa = static_cast<double>(ev.pred_len.at(key.second)) - tpa;
      assa += tpa / (tpa + fna + fpa);
    }
    assa = tp > 0 ? assa / tp : 0.0;
    r.deta.push_back(deta);
    r.assa.push_back(assa);
    r.hota.push_back(std::sqrt(deta * assa));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  r.hota_avg = mean(r.hota);
  r.deta_avg = mean(r.deta);
  r.assa_avg = mean(r.assa);
  return r;
}

inline nlohmann::json to_json(const ClearReport& r) {
  return {{"mota", r.mota}, {"motp", r.motp}, {"mt", r.mt},   {"ml", r.ml},
          {"ids", r.ids},   {"fp", r.fp},     {"fn", r.fn},   {"tp", r.tp},
          {"gt", r.gt_count}, {"gt_tracks", r.gt_tracks}};
}

inline nlohmann::json to_json(const HotaReport& r) {
  return {{"alphas", r.alphas}, {"hota", r.hota},         {"deta", r.deta},        {"assa", r.assa},
          {"hota_avg", r.hota_avg}, {"deta_avg", r.deta_avg}, {"assa_avg", r.assa_avg}};
}

}  // namespace mdp
