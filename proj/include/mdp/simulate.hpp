#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdp/core.hpp"
#include "mdp/geometry.hpp"
#include "mdp/ground_truth.hpp"
#include "mdp/image.hpp"
#include "mdp/metrics.hpp"

namespace mdp {

enum class Layout : std::uint8_t { Random, Lanes, Crossing };

inline std::string_view to_string(Layout l) {
  switch (l) {
    case Layout::Random: return "random";
    case Layout::Lanes: return "lanes";
    case Layout::Crossing: return "crossing";
  }
  return "?";
}

inline Layout parse_layout(std::string_view s) {
  if (s == "random") return Layout::Random;
  if (s == "lanes") return Layout::Lanes;
  if (s == "crossing") return Layout::Crossing;
  throw ContractViolation("unknown layout: " + std::string(s));
}

/// Frames [first, last] in which `occluded_id` is hidden, either behind
/// another target (`occluder_id`) or behind a static block (-1).
struct OcclusionEvent {
  int occluded_id = 0;
  int occluder_id = -1;
  int first = 1;
  int last = 1;

  friend bool operator==(const OcclusionEvent&, const OcclusionEvent&) = default;
};

struct ScenarioConfig {
  ImageExtent extent{640, 480};
  int frames = 100;
  int targets = 5;
  Layout layout = Layout::Random;
  int spawn_min = 1;
  int spawn_max = 1;
  int exit_min = 0;  // 0: tracks run until they leave the image or the sequence ends
  int exit_max = 0;
  bool require_exit = false;  // every target must leave the image before the last frame
  double speed_min = 1.0;
  double speed_max = 3.0;
  double height_min = 60.0;
  double height_max = 100.0;
  double aspect_min = 0.4;  // width / height
  double aspect_max = 0.6;
  double turn_noise = 0.0;  // heading noise, radians per frame
  bool occlude_on_overlap = false;  // overlapping pairs mark the rear target occluded
  double occlusion_iou = 0.3;
  std::vector<OcclusionEvent> occlusions;

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

inline void validate(const ScenarioConfig& c) {
  expects(c.extent.valid(), "scenario: invalid image extent");
  expects(c.frames >= 1, "scenario: frames must be >= 1");
  expects(c.targets >= 0, "scenario: targets must be >= 0");
  expects(c.spawn_min >= 1 && c.spawn_min <= c.spawn_max && c.spawn_max <= c.frames,
          "scenario: spawn range must satisfy 1 <= min <= max <= frames");
  expects((c.exit_min == 0 && c.exit_max == 0) || (c.exit_min >= 1 && c.exit_min <= c.exit_max),
          "scenario: exit range must be empty or 1 <= min <= max");
  expects(c.speed_min >= 0.0 && c.speed_min <= c.speed_max, "scenario: invalid speed range");
  expects(c.height_min >= 2.0 && c.height_min <= c.height_max, "scenario: invalid height range");
  expects(c.aspect_min > 0.0 && c.aspect_min <= c.aspect_max, "scenario: invalid aspect range");
  expects(c.turn_noise >= 0.0, "scenario: turn noise must be >= 0");
  expects(!(c.require_exit && c.speed_max <= 0.0), "scenario: infeasible, zero speed cannot satisfy require_exit");
  for (const auto& e : c.occlusions) {
    expects(e.first >= 1 && e.first <= e.last, "scenario: occlusion span must satisfy 1 <= first <= last");
  }
}

struct SimTrack {
  int id = 0;
  std::vector<std::pair<int, BoundingBox>> boxes;  // unclipped, frame order
};

struct Scenario {
  ScenarioConfig config;
  std::uint64_t seed = 0;
  std::vector<SimTrack> tracks;
  std::vector<OcclusionEvent> occlusions;  // configured plus overlap-derived
  GroundTruth gt;                          // boxes clipped to the image
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Kinematics {
  double cx, cy, heading, speed, w, h;
  int spawn, exit;
};

inline Kinematics initial_state(const ScenarioConfig& c, int index, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto lerp = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };
  Kinematics k{};
  k.h = lerp(c.height_min, c.height_max);
  k.w = k.h * lerp(c.aspect_min, c.aspect_max);
  k.speed = lerp(c.speed_min, c.speed_max);
  k.spawn = std::uniform_int_distribution<int>(c.spawn_min, c.spawn_max)(rng);
  k.exit = c.exit_max > 0 ? std::uniform_int_distribution<int>(c.exit_min, c.exit_max)(rng) : c.frames;
  const double W = c.extent.width, H = c.extent.height;
  switch (c.layout) {
    case Layout::Random:
      k.cx = lerp(0.5 * k.w, W - 0.5 * k.w);
      k.cy = lerp(0.5 * k.h, H - 0.5 * k.h);
      k.heading = lerp(-std::numbers::pi, std::numbers::pi);
      break;
    case Layout::Lanes: {
      const int lanes = std::max(1, c.targets);
      const bool rightward = index % 2 == 0;
      k.cy = H * (index + 0.5) / lanes;
      k.cx = rightward ? lerp(0.5 * k.w, 0.3 * W) : lerp(0.7 * W, W - 0.5 * k.w);
      k.heading = rightward ? 0.0 : std::numbers::pi;
      break;
    }
    case Layout::Crossing: {
      // Pairs start on opposite sides of a shared row and meet mid-image.
      const int pairs = std::max(1, (c.targets + 1) / 2);
      const int pair = index / 2;
      const bool left = index % 2 == 0;
      k.cy = H * (pair + 0.5) / pairs + lerp(-0.05, 0.05) * k.h;
      k.cx = left ? 0.15 * W : 0.85 * W;
      k.heading = left ? 0.0 : std::numbers::pi;
      break;
    }
  }
  return k;
}

}  // namespace detail

/// Constant-velocity tracks with heading noise. Boxes are clipped to the image;
/// a track ends once it is fully outside or at its exit frame.
inline Scenario generate_gt(const ScenarioConfig& config, std::uint64_t seed) {
  validate(config);
  Scenario sc;
  sc.config = config;
  sc.seed = seed;
  const ImageExtent& ext = config.extent;
  for (int i = 0; i < config.targets; ++i) {
    std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(i)));
    auto k = detail::initial_state(config, i, rng);
    std::normal_distribution<double> turn(0.0, config.turn_noise);
    SimTrack tr{i + 1, {}};
    for (int f = k.spawn; f <= std::min(config.frames, k.exit); ++f) {
      if (f > k.spawn) {
        if (config.turn_noise > 0.0) k.heading += turn(rng);
        k.cx += k.speed * std::cos(k.heading);
        k.cy += k.speed * std::sin(k.heading);
      }
      const BoundingBox box = BoundingBox::from_center(k.cx, k.cy, k.w, k.h);
      if (!clip_to_image(box, ext).valid()) break;
      tr.boxes.emplace_back(f, box);
    }
    if (config.require_exit) {
      const bool left = !tr.boxes.empty() && tr.boxes.back().first < config.frames;
      expects(left, "scenario: infeasible, target " + std::to_string(tr.id) + " never leaves the image");
    }
    if (!tr.boxes.empty()) sc.tracks.push_back(std::move(tr));
  }

  sc.occlusions = config.occlusions;
  if (config.occlude_on_overlap) {
    // The target whose box bottom is higher in the image is behind.
    std::map<int, std::vector<std::pair<int, BoundingBox>>> by_frame;
    for (const auto& t : sc.tracks) {
      for (const auto& [f, b] : t.boxes) by_frame[f].emplace_back(t.id, b);
    }
    std::map<std::pair<int, int>, OcclusionEvent> open;
    for (const auto& [f, items] : by_frame) {
      for (std::size_t a = 0; a < items.size(); ++a) {
        for (std::size_t b = a + 1; b < items.size(); ++b) {
          if (iou(items[a].second, items[b].second) <= config.occlusion_iou) continue;
          const bool a_behind = items[a].second.bottom() < items[b].second.bottom() ||
                                (items[a].second.bottom() == items[b].second.bottom() && items[a].first > items[b].first);
          const int back = a_behind ? items[a].first : items[b].first;
          const int front = a_behind ? items[b].first : items[a].first;
          auto it = open.find({back, front});
          if (it != open.end() && it->second.last == f - 1) {
            it->second.last = f;
          } else {
            if (it != open.end()) sc.occlusions.push_back(it->second);
            open[{back, front}] = {back, front, f, f};
          }
        }
      }
    }
    for (const auto& [_, e] : open) sc.occlusions.push_back(e);
  }

  for (const auto& t : sc.tracks) {
    for (const auto& [f, b] : t.boxes) {
      GtBox g;
      g.frame = f;
      g.id = t.id;
      g.box = clip_to_image(b, ext);
      for (const auto& e : sc.occlusions) {
        if (e.occluded_id == t.id && f >= e.first && f <= e.last) g.occluded = true;
      }
      g.visibility = g.occluded ? 0.3 : inside_fraction(b, ext);
      sc.gt.add(g);
    }
  }
  return sc;
}

// --- detector corruption ------------------------------------------------------------

struct CorruptionConfig {
  double fn_rate = 0.0;
  double fp_per_frame = 0.0;
  double position_sigma = 0.0;  // pixels
  double scale_sigma = 0.0;     // log-scale
  double tp_conf_mean = 0.8;
  double tp_conf_sd = 0.1;
  double fp_conf_mean = 0.3;
  double fp_conf_sd = 0.15;
  std::uint64_t seed = 1;

  friend bool operator==(const CorruptionConfig&, const CorruptionConfig&) = default;
};

inline void validate(const CorruptionConfig& c) {
  expects(c.fn_rate >= 0.0 && c.fn_rate <= 1.0, "corruption: fn_rate must be in [0, 1]");
  expects(c.fp_per_frame >= 0.0, "corruption: fp_per_frame must be >= 0");
  expects(c.position_sigma >= 0.0 && c.scale_sigma >= 0.0, "corruption: noise sigmas must be >= 0");
  expects(c.tp_conf_sd >= 0.0 && c.fp_conf_sd >= 0.0, "corruption: confidence sd must be >= 0");
}

/// Detections plus, in a separate channel, the GT (frame, id) each one came
/// from (id -1 for false positives).
struct SimDetections {
  std::vector<Detection> dets;
  std::vector<int> source_id;
};

inline SimDetections corrupt(const GroundTruth& gt, const ImageExtent& extent, int num_frames,
                             const CorruptionConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  std::poisson_distribution<int> n_fp(cfg.fp_per_frame > 0.0 ? cfg.fp_per_frame : 1.0);
  auto conf = [&](double mean, double sd) { return std::clamp(mean + sd * N(rng), 0.0, 1.0); };

  std::vector<BoundingBox> sizes;
  for (const auto& b : gt.boxes()) sizes.push_back(b.box);

  SimDetections out;
  for (int f = 1; f <= num_frames; ++f) {
    auto boxes = gt.in_frame(f, true);
    std::sort(boxes.begin(), boxes.end(), [](const GtBox* a, const GtBox* b) { return a->id < b->id; });
    for (const GtBox* g : boxes) {
      const double p_drop = std::min(1.0, g->occluded ? 2.0 * cfg.fn_rate : cfg.fn_rate);
      const double u = U(rng);
      const double dx = cfg.position_sigma * N(rng), dy = cfg.position_sigma * N(rng);
      const double sw = std::exp(cfg.scale_sigma * N(rng)), sh = std::exp(cfg.scale_sigma * N(rng));
      const double c = conf(cfg.tp_conf_mean, cfg.tp_conf_sd);
      if (u < p_drop) continue;
      const BoundingBox b =
          BoundingBox::from_center(g->box.cx() + dx, g->box.cy() + dy, g->box.w * sw, g->box.h * sh);
      if (!b.valid()) continue;
      out.dets.push_back({f, b, c});
      out.source_id.push_back(g->id);
    }
    if (cfg.fp_per_frame > 0.0 && !sizes.empty()) {
      const int k = n_fp(rng);
      for (int i = 0; i < k; ++i) {
        const BoundingBox& s = sizes[std::uniform_int_distribution<std::size_t>(0, sizes.size() - 1)(rng)];
        const double x = U(rng) * std::max(1.0, extent.width - s.w);
        const double y = U(rng) * std::max(1.0, extent.height - s.h);
        out.dets.push_back({f, {x, y, s.w, s.h}, conf(cfg.fp_conf_mean, cfg.fp_conf_sd)});
        out.source_id.push_back(-1);
      }
    }
  }
  return out;
}

// --- rendering ---------------------------------------------------------------------------

namespace detail {

struct Blob {
  double u, v, inv2s2, amp;
};

/// Deterministic per-id appearance in normalized object coordinates.
struct Texture {
  double base = 0.5;
  std::vector<Blob> blobs;

  double at(double u, double v) const {
    double val = base;
    for (const auto& b : blobs) {
      const double du = u - b.u, dv = v - b.v;
      val += b.amp * std::exp(-(du * du + dv * dv) * b.inv2s2);
    }
    return std::clamp(val, 0.0, 1.0);
  }
};

inline Texture make_texture(int id, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x7e47u + static_cast<std::uint64_t>(id)));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Texture t;
  t.base = 0.25 + 0.5 * U(rng);
  for (int i = 0; i < 14; ++i) {
    const double s = 0.06 + 0.12 * U(rng);
    t.blobs.push_back({U(rng), U(rng), 1.0 / (2.0 * s * s), (U(rng) < 0.5 ? -1.0 : 1.0) * (0.25 + 0.35 * U(rng))});
  }
  return t;
}

inline double pixel_coverage(const BoundingBox& b, int x, int y) {
  const double ix = std::min<double>(x + 1, b.right()) - std::max<double>(x, b.x);
  const double iy = std::min<double>(y + 1, b.bottom()) - std::max<double>(y, b.y);
  return (ix > 0.0 && iy > 0.0) ? ix * iy : 0.0;
}

inline void paint(GrayImage& img, const BoundingBox& b, const auto& shade) {
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(b.right())));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(b.bottom())));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double a = pixel_coverage(b, x, y);
      if (a <= 0.0) continue;
      const double u = (x + 0.5 - b.x) / b.w;
      const double v = (y + 0.5 - b.y) / b.h;
      img.at(x, y) = static_cast<float>((1.0 - a) * img.at(x, y) + a * shade(u, v));
    }
  }
}

}  // namespace detail

/// 8-bit-range grayscale frames: a faint noise background, each target a box
/// filled with its own rigidly attached texture, drawn back to front. Static
/// occluders (events with occluder -1) are flat blocks over the occluded box.
inline std::map<int, GrayImage> render(const Scenario& sc, std::uint64_t seed) {
  const ImageExtent& ext = sc.config.extent;
  std::map<int, detail::Texture> textures;
  for (const auto& t : sc.tracks) textures.emplace(t.id, detail::make_texture(t.id, seed));
  std::map<int, std::vector<std::pair<int, BoundingBox>>> by_frame;
  for (const auto& t : sc.tracks) {
    for (const auto& [f, b] : t.boxes) by_frame[f].emplace_back(t.id, b);
  }
  std::map<int, GrayImage> frames;
  for (int f = 1; f <= sc.config.frames; ++f) {
    std::mt19937_64 rng(detail::mix_seed(seed, 0xb00000u + static_cast<std::uint64_t>(f)));
    std::uniform_real_distribution<float> noise(-0.02f, 0.02f);
    GrayImage img(ext.width, ext.height);
    for (auto& p : img.data()) p = 0.5f + noise(rng);
    auto items = by_frame[f];
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second.bottom() < b.second.bottom(); });
    for (const auto& [id, box] : items) {
      const auto& tex = textures.at(id);
      detail::paint(img, box, [&](double u, double v) { return tex.at(u, v); });
    }
    for (const auto& e : sc.occlusions) {
      if (e.occluder_id >= 0 || f < e.first || f > e.last) continue;
      for (const auto& [id, box] : items) {
        if (id != e.occluded_id) continue;
        const BoundingBox block = BoundingBox::from_center(box.cx(), box.cy(), box.w * 1.3, box.h * 1.1);
        detail::paint(img, block, [](double, double) { return 0.15; });
      }
    }
    for (auto& p : img.data()) p = std::clamp(p, 0.0f, 1.0f);
    frames.emplace(f, std::move(img));
  }
  return frames;
}

// --- threshold sweep ---------------------------------------------------------------------

struct SweepRow {
  double threshold = 0.0;
  std::size_t detections = 0;
  std::size_t tp = 0;
  double recall = 0.0;
  double precision = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ascending threshold
  double crossover = 0.0;      // where recall and precision meet
};

inline std::vector<Detection> filter_by_confidence(std::span<const Detection> dets, double threshold) {
  std::vector<Detection> out;
  for (const auto& d : dets) {
    if (d.confidence >= threshold) out.push_back(d);
  }
  return out;
}

inline SweepRow score_detections(std::span<const Detection> dets, const GroundTruth& gt, double threshold) {
  SweepRow row;
  row.threshold = threshold;
  std::map<int, std::vector<detail::FrameBox>> pred;
  for (const auto& d : dets) {
    if (d.confidence >= threshold) pred[d.frame].push_back({0, d.box});
  }
  std::size_t n_gt = 0;
  std::map<int, std::vector<detail::FrameBox>> truth;
  for (const auto& b : gt.boxes()) {
    if (b.ignore) continue;
    truth[b.frame].push_back({b.id, b.box});
    ++n_gt;
  }
  for (const auto& [f, p] : pred) {
    row.detections += p.size();
    auto it = truth.find(f);
    if (it == truth.end()) continue;
    const std::vector<char> gf(it->second.size(), 1), pf(p.size(), 1);
    row.tp += detail::match_frame(it->second, p, gf, pf, 0.5).size();
  }
  row.recall = n_gt ? static_cast<double>(row.tp) / static_cast<double>(n_gt) : 0.0;
  row.precision = row.detections ? static_cast<double>(row.tp) / static_cast<double>(row.detections) : 0.0;
  return row;
}

/// Recall/precision per threshold (IOU-0.5 matching). The crossover is the
/// linearly interpolated threshold where precision - recall changes sign, or
/// the row with the smallest gap when it never does.
inline SweepResult threshold_sweep(std::span<const Detection> dets, const GroundTruth& gt,
                                   std::vector<double> thresholds) {
  std::sort(thresholds.begin(), thresholds.end());
  SweepResult r;
  for (double t : thresholds) r.rows.push_back(score_detections(dets, gt, t));
  if (r.rows.empty()) return r;
  std::size_t best = 0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const double gap = std::abs(r.rows[i].precision - r.rows[i].recall);
    if (gap < std::abs(r.rows[best].precision - r.rows[best].recall)) best = i;
  }
  r.crossover = r.rows[best].threshold;
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    const double g0 = r.rows[i - 1].precision - r.rows[i - 1].recall;
    const double g1 = r.rows[i].precision - r.rows[i].recall;
    if (g0 < 0.0 && g1 >= 0.0) {
      const double t0 = r.rows[i - 1].threshold, t1 = r.rows[i].threshold;
      r.crossover = g1 == g0 ? t1 : t0 + (t1 - t0) * (-g0) / (g1 - g0);
      break;
    }
  }
  return r;
}

inline std::vector<double> threshold_range(double lo, double hi, double step) {
  expects(step > 0.0 && hi >= lo, "threshold range must satisfy lo <= hi and step > 0");
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

// --- JSON echo ------------------------------------------------------------------------------

inline nlohmann::json to_json(const ScenarioConfig& c) {
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& e : c.occlusions) occ.push_back({e.occluded_id, e.occluder_id, e.first, e.last});
  return {{"width", c.extent.width},
          {"height", c.extent.height},
          {"frames", c.frames},
          {"targets", c.targets},
          {"layout", std::string(to_string(c.layout))},
          {"spawn_min", c.spawn_min},
          {"spawn_max", c.spawn_max},
          {"exit_min", c.exit_min},
          {"exit_max", c.exit_max},
          {"require_exit", c.require_exit},
          {"speed_min", c.speed_min},
          {"speed_max", c.speed_max},
          {"height_min", c.height_min},
          {"height_max", c.height_max},
          {"aspect_min", c.aspect_min},
          {"aspect_max", c.aspect_max},
          {"turn_noise", c.turn_noise},
          {"occlude_on_overlap", c.occlude_on_overlap},
          {"occlusion_iou", c.occlusion_iou},
          {"occlusions", occ}};
}

inline nlohmann::json to_json(const CorruptionConfig& c) {
  return {{"fn_rate", c.fn_rate},           {"fp_per_frame", c.fp_per_frame}, {"position_sigma", c.position_sigma},
          {"scale_sigma", c.scale_sigma},   {"tp_conf_mean", c.tp_conf_mean}, {"tp_conf_sd", c.tp_conf_sd},
          {"fp_conf_mean", c.fp_conf_mean}, {"fp_conf_sd", c.fp_conf_sd},     {"seed", c.seed}};
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  try {
    c.extent = {j.value("width", c.extent.width), j.value("height", c.extent.height)};
    c.frames = j.value("frames", c.frames);
    c.targets = j.value("targets", c.targets);
    c.layout = parse_layout(j.value("layout", std::string(to_string(c.layout))));
    c.spawn_min = j.value("spawn_min", c.spawn_min);
    c.spawn_max = j.value("spawn_max", c.spawn_max);
    c.exit_min = j.value("exit_min", c.exit_min);
    c.exit_max = j.value("exit_max", c.exit_max);
    c.require_exit = j.value("require_exit", c.require_exit);
    c.speed_min = j.value("speed_min", c.speed_min);
    c.speed_max = j.value("speed_max", c.speed_max);
    c.height_min = j.value("height_min", c.height_min);
    c.height_max = j.value("height_max", c.height_max);
    c.aspect_min = j.value("aspect_min", c.aspect_min);
    c.aspect_max = j.value("aspect_max", c.aspect_max);
    c.turn_noise = j.value("turn_noise", c.turn_noise);
    c.occlude_on_overlap = j.value("occlude_on_overlap", c.occlude_on_overlap);
    c.occlusion_iou = j.value("occlusion_iou", c.occlusion_iou);
    if (j.contains("occlusions")) {
      for (const auto& e : j.at("occlusions")) {
        c.occlusions.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>(), e.at(3).get<int>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("scenario json: ") + e.what());
  }
  return c;
}

}  // namespace mdp
