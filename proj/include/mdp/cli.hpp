#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mdp/inference.hpp"
#include "mdp/io.hpp"
#include "mdp/metrics.hpp"
#include "mdp/simulate.hpp"
#include "mdp/training.hpp"

namespace mdp::cli {

namespace fs = std::filesystem;

// --- shared helpers ------------------------------------------------------------------------

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    out.emplace_back(detail::trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline double to_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw ContractViolation("invalid " + what + ": '" + s + "'");
  }
  return v;
}

inline int to_int(const std::string& s, const std::string& what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw ContractViolation("invalid " + what + ": '" + s + "'");
  }
  return v;
}

/// "id:occluder:first:last"
inline OcclusionEvent parse_occlusion(const std::string& s) {
  const auto f = split(s, ':');
  if (f.size() != 4) throw ContractViolation("occlusion must be id:occluder:first:last, got '" + s + "'");
  return {to_int(f[0], "occlusion id"), to_int(f[1], "occluder id"), to_int(f[2], "occlusion first"),
          to_int(f[3], "occlusion last")};
}

/// "active=KIND,tracked=KIND,lost=KIND"; omitted states keep `base`.
inline PolicySet parse_policy_set(const std::string& s, PolicySet base) {
  for (const auto& item : split(s, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ContractViolation("policy entry must be STATE=KIND, got '" + item + "'");
    const auto state = item.substr(0, eq);
    const auto spec = parse_policy(item.substr(eq + 1));
    if (state == "active") base.active = spec;
    else if (state == "tracked") base.tracked = spec;
    else if (state == "lost") base.lost = spec;
    else throw ContractViolation("unknown policy state: " + state);
  }
  return base;
}

inline void apply_toggle(TesterToggles& t, const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw ContractViolation("toggle must be NAME=on|off, got '" + s + "'");
  const auto name = s.substr(0, eq);
  const auto value = s.substr(eq + 1);
  if (value != "on" && value != "off") throw ContractViolation("toggle value must be on or off, got '" + value + "'");
  const bool on = value == "on";
  if (name == "sort") t.sort_targets = on;
  else if (name == "filter") t.filter_detections = on;
  else if (name == "reconnect") t.reconnect_lost = on;
  else if (name == "conflicts") t.resolve_conflicts = on;
  else if (name == "min_len") t.min_traj_len = on;
  else if (name == "lost_ratio") t.lost_ratio_prune = on;
  else if (name == "pseudo_reconnect") t.pseudo_detection_reconnect = on;
  else throw ContractViolation("unknown toggle: " + name);
}

inline void require_models(const PolicySet& p, const ModelSet& m) {
  expects(p.active.kind != PolicyKind::Learned || m.active, "learned active policy needs active.mdpm");
  expects(p.tracked.kind != PolicyKind::Learned || m.tracked_ptr(), "learned tracked policy needs tracked.mdpm");
  expects(p.lost.kind != PolicyKind::Learned || m.lost, "learned lost policy needs lost.mdpm");
}

inline bool needs_gt(const PolicySet& p) { return p.active.is_oracle() || p.tracked.is_oracle() || p.lost.is_oracle(); }

inline SequenceData make_sequence(const SequenceBundle& b) {
  SequenceData s;
  s.extent = b.extent;
  s.num_frames = b.num_frames;
  s.detections = group_by_frame(b.detections);
  if (b.frames_dir) s.frames = FrameSource::from_directory(*b.frames_dir);
  s.gt = b.gt ? &*b.gt : nullptr;
  return s;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// --- subcommands ------------------------------------------------------------------------------

struct SimulateArgs {
  ScenarioConfig scenario;
  CorruptionConfig corruption;
  std::vector<std::string> occlusions;
  std::string layout = "random";
  std::string out;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> corrupt_seed;
  bool render = true;
};

inline void add_simulate(CLI::App& app, SimulateArgs& a) {
  auto& s = a.scenario;
  auto& c = a.corruption;
  app.add_option("--out", a.out, "output sequence directory")->required();
  app.add_option("--seed", a.seed, "scenario and rendering seed");
  app.add_option("--width", s.extent.width);
  app.add_option("--height", s.extent.height);
  app.add_option("--frames", s.frames);
  app.add_option("--targets", s.targets);
  app.add_option("--layout", a.layout, "random|lanes|crossing");
  app.add_option("--spawn-min", s.spawn_min);
  app.add_option("--spawn-max", s.spawn_max);
  app.add_option("--exit-min", s.exit_min);
  app.add_option("--exit-max", s.exit_max);
  app.add_flag("--require-exit", s.require_exit);
  app.add_option("--speed-min", s.speed_min);
  app.add_option("--speed-max", s.speed_max);
  app.add_option("--height-min", s.height_min);
  app.add_option("--height-max", s.height_max);
  app.add_option("--aspect-min", s.aspect_min);
  app.add_option("--aspect-max", s.aspect_max);
  app.add_option("--turn-noise", s.turn_noise);
  app.add_flag("--occlude-on-overlap", s.occlude_on_overlap);
  app.add_option("--occlusion-iou", s.occlusion_iou);
  app.add_option("--occlusion", a.occlusions, "id:occluder:first:last (occluder -1 for a static block)");
  app.add_option("--fn-rate", c.fn_rate);
  app.add_option("--fp-per-frame", c.fp_per_frame);
  app.add_option("--position-sigma", c.position_sigma);
  app.add_option("--scale-sigma", c.scale_sigma);
  app.add_option("--tp-conf-mean", c.tp_conf_mean);
  app.add_option("--tp-conf-sd", c.tp_conf_sd);
  app.add_option("--fp-conf-mean", c.fp_conf_mean);
  app.add_option("--fp-conf-sd", c.fp_conf_sd);
  app.add_option("--corrupt-seed", a.corrupt_seed, "detection noise seed (default: --seed)");
  app.add_flag("--render,!--no-render", a.render, "write frames/frame%06d.pgm");
}

inline std::string run_simulate(SimulateArgs a) {
  a.scenario.layout = parse_layout(a.layout);
  for (const auto& o : a.occlusions) a.scenario.occlusions.push_back(parse_occlusion(o));
  a.corruption.seed = a.corrupt_seed.value_or(a.seed);
  const Scenario sc = generate_gt(a.scenario, a.seed);
  const auto dets = corrupt(sc.gt, a.scenario.extent, a.scenario.frames, a.corruption);
  const fs::path out = a.out;
  fs::create_directories(out);
  write_gt(out / "gt.txt", sc.gt);
  write_detections(out / "det.txt", dets.dets);
  {
    // Provenance sidecar: GT id per det.txt row (-1 for false positives).
    auto prov = detail::open_out(out / "det_provenance.txt");
    for (int id : dets.source_id) prov << id << '\n';
  }
  if (a.render) {
    fs::create_directories(out / "frames");
    for (const auto& [f, img] : render(sc, a.seed)) write_pgm(out / "frames" / frame_filename(f), img);
  }
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& e : sc.occlusions) occ.push_back({e.occluded_id, e.occluder_id, e.first, e.last});
  write_json(out / "scenario.json",
             {{"config", to_json(a.scenario)}, {"corruption", to_json(a.corruption)}, {"seed", a.seed},
              {"occlusion_events", occ}});
  return "simulated " + std::to_string(sc.tracks.size()) + " tracks, " + std::to_string(sc.gt.boxes().size()) +
         " gt boxes, " + std::to_string(dets.dets.size()) + " detections -> " + out.string();
}

struct TrackArgs {
  std::string dets, out, frames, model_dir, policy, gt, log;
  std::vector<std::string> toggles;
  bool hungarian = false;
  bool ctm = false;
  std::uint64_t seed = 1;
  std::size_t min_traj_len = 5;
  std::optional<double> lost_ratio_max;
  std::optional<int> width, height;
};

inline void add_track(CLI::App& app, TrackArgs& a) {
  app.add_option("--dets", a.dets, "MOT detection file")->required();
  app.add_option("--out", a.out, "MOT results file")->required();
  app.add_option("--frames", a.frames, "directory of frame%06d.pgm");
  app.add_option("--model-dir", a.model_dir, "directory with active/tracked/lost.mdpm");
  app.add_option("--policy", a.policy, "active=KIND,tracked=KIND,lost=KIND");
  app.add_option("--gt", a.gt, "ground truth, required by oracle policies");
  app.add_flag("--hungarian", a.hungarian, "Hungarian association instead of greedy");
  app.add_flag("--ctm", a.ctm, "continuous tracking mode");
  app.add_option("--toggle", a.toggles, "NAME=on|off; names: sort filter reconnect conflicts min_len lost_ratio pseudo_reconnect");
  app.add_option("--min-traj-len", a.min_traj_len);
  app.add_option("--lost-ratio-max", a.lost_ratio_max);
  app.add_option("--width", a.width, "image width (default: inferred)");
  app.add_option("--height", a.height, "image height (default: inferred)");
  app.add_option("--log", a.log, "decision log (frame,target_id,state,action,probability)");
  app.add_option("--seed", a.seed);
}

inline std::string run_track(const TrackArgs& a) {
  SequenceBundle b;
  b.detections = parse_detections(fs::path(a.dets));
  if (!a.gt.empty()) b.gt = parse_gt(fs::path(a.gt));
  if (!a.frames.empty()) {
    if (!fs::is_directory(a.frames)) throw IoError("frame directory not found: " + a.frames);
    b.frames_dir = fs::path(a.frames);
  }
  double max_x = 1.0, max_y = 1.0;
  for (const auto& d : b.detections) {
    b.num_frames = std::max(b.num_frames, d.frame);
    max_x = std::max(max_x, d.box.right());
    max_y = std::max(max_y, d.box.bottom());
  }
  if (b.gt) b.num_frames = std::max(b.num_frames, b.gt->max_frame());
  b.extent = {static_cast<int>(std::ceil(max_x)), static_cast<int>(std::ceil(max_y))};
  const auto scenario = fs::path(a.dets).parent_path() / "scenario.json";
  if (b.frames_dir && fs::exists(*b.frames_dir / frame_filename(1))) {
    const auto img = read_pgm(*b.frames_dir / frame_filename(1));
    b.extent = {img.width(), img.height()};
  } else if (fs::exists(scenario)) {
    b.extent = load_bundle(scenario.parent_path()).extent;
  }
  if (a.width) b.extent.width = *a.width;
  if (a.height) b.extent.height = *a.height;
  expects(b.extent.valid(), "track: invalid image extent");

  ModelSet models;
  PolicySet policies{PolicySpec{PolicyKind::AlwaysPositive}, PolicySpec{PolicyKind::Heuristic},
                     PolicySpec{PolicyKind::AlwaysPositive}};
  if (!a.model_dir.empty()) {
    models = load_models(a.model_dir);
    policies = available_policies(models);
  }
  policies = parse_policy_set(a.policy, policies);
  require_models(policies, models);
  expects(!needs_gt(policies) || b.gt.has_value(), "oracle policies need --gt");

  TesterConfig cfg;
  cfg.hungarian = a.hungarian;
  cfg.tracker.ctm = a.ctm;
  cfg.min_traj_len = a.min_traj_len;
  cfg.lost_ratio_max = a.lost_ratio_max;
  for (const auto& t : a.toggles) apply_toggle(cfg.toggles, t);

  const SequenceData seq = make_sequence(b);
  TesterOptions opt;
  opt.seed = a.seed;
  opt.log_decisions = !a.log.empty();
  const auto res = run_sequence(seq, policies, models, cfg, opt);
  write_results(fs::path(a.out), res.trajectories);
  if (!a.log.empty()) {
    auto log = detail::open_out(a.log);
    for (const auto& d : res.decisions) {
      log << d.frame << ',' << d.target_id << ',' << to_string(d.state) << ',' << to_string(d.action) << ','
          << fmt(d.probability) << '\n';
    }
  }
  return "tracked " + std::to_string(res.trajectories.size()) + " trajectories -> " + a.out;
}

struct TrainArgs {
  std::string data, test, out;
  std::string mode = "incremental";
  std::optional<int> max_iters;
  int max_passes = ScheduleLimits{}.max_passes;
  int max_trials = ScheduleLimits{}.max_trials;
  bool data_from_tester = false;
  bool accumulative = TrainerConfig{}.accumulative_data;
  bool from_scratch = TrainerConfig{}.train_from_scratch;
  std::string rebalance = "none";
  std::string loss = "hinge";
  double focal_gamma = 0.0;
  int epochs = TrainConfig{}.epochs;
  double learning_rate = TrainConfig{}.learning_rate;
  double l2 = TrainConfig{}.l2;
  double ohem = TrainConfig{}.ohem_ratio;
  bool hungarian = false;
  bool ctm = false;
  std::uint64_t seed = 1;
};

inline void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--data", a.data, "sequence directory or directory of sequences")->required();
  app.add_option("--out-model-dir", a.out, "output model directory")->required();
  app.add_option("--test", a.test, "evaluation sequences (default: --data)");
  app.add_option("--mode", a.mode, "incremental|ibt");
  app.add_option("--max-iters", a.max_iters, "incremental: schedule iterations; ibt: training iterations");
  app.add_option("--max-passes", a.max_passes);
  app.add_option("--max-trials", a.max_trials);
  app.add_flag("--data-from-tester", a.data_from_tester);
  app.add_flag("--accumulative,!--no-accumulative", a.accumulative);
  app.add_flag("--from-scratch,!--warm-start", a.from_scratch);
  app.add_option("--rebalance", a.rebalance, "none|undersample|oversample|probabilistic");
  app.add_option("--loss", a.loss, "hinge|logistic");
  app.add_option("--focal-gamma", a.focal_gamma);
  app.add_option("--epochs", a.epochs);
  app.add_option("--learning-rate", a.learning_rate);
  app.add_option("--l2", a.l2);
  app.add_option("--ohem", a.ohem, "fraction of each batch kept by loss");
  app.add_flag("--hungarian", a.hungarian);
  app.add_flag("--ctm", a.ctm);
  app.add_option("--seed", a.seed);
}

inline std::string run_train(const TrainArgs& a) {
  expects(a.mode == "incremental" || a.mode == "ibt", "train: mode must be incremental or ibt");
  TrainerConfig cfg;
  cfg.seed = a.seed;
  cfg.limits.max_passes = a.max_passes;
  cfg.limits.max_trials = a.max_trials;
  if (a.mode == "incremental" && a.max_iters) cfg.limits.max_iters = *a.max_iters;
  if (a.mode == "ibt" && a.max_iters) cfg.ibt_iters = *a.max_iters;
  cfg.data_from_tester = a.data_from_tester;
  cfg.accumulative_data = a.accumulative;
  cfg.train_from_scratch = a.from_scratch;
  cfg.learner.rebalance = parse_rebalance(a.rebalance);
  cfg.learner.epochs = a.epochs;
  cfg.learner.learning_rate = a.learning_rate;
  cfg.learner.l2 = a.l2;
  cfg.learner.ohem_ratio = a.ohem;
  cfg.learner.seed = a.seed;
  expects(a.loss == "hinge" || a.loss == "logistic", "train: loss must be hinge or logistic");
  cfg.loss = a.loss == "hinge" ? LossKind::Hinge : LossKind::Logistic;
  cfg.focal_gamma = a.focal_gamma;
  cfg.tester.hungarian = a.hungarian;
  cfg.tracker.ctm = cfg.tester.tracker.ctm = a.ctm;

  const auto train_bundles = load_bundles(a.data);
  const auto test_bundles = a.test.empty() ? std::vector<SequenceBundle>{} : load_bundles(a.test);
  for (const auto& b : train_bundles) expects(b.gt.has_value(), "train: sequence without gt.txt: " + b.dir.string());
  for (const auto& b : test_bundles) expects(b.gt.has_value(), "train: test sequence without gt.txt: " + b.dir.string());
  std::vector<SequenceData> train_seqs, test_seqs;
  for (const auto& b : train_bundles) train_seqs.push_back(make_sequence(b));
  for (const auto& b : test_bundles) test_seqs.push_back(make_sequence(b));
  const std::span<const SequenceData> tests = test_seqs.empty() ? std::span<const SequenceData>(train_seqs) : test_seqs;

  const fs::path out = a.out;
  if (a.mode == "ibt") {
    const auto iters = ibt_run(train_seqs, tests, cfg, out);
    return "ibt: " + std::to_string(iters.size()) + " iterations -> " + out.string();
  }
  const auto res = incremental_train(train_seqs, cfg);
  save_models(out, res.models);
  res.samples.save_csv(out / "samples.csv");
  const auto policies = available_policies(res.models);
  const auto acc = evaluate_policies(tests, policies, res.models, cfg.tracker, cfg.seed);
  const auto scores = test_sequences(tests, policies, res.models, cfg.tester, cfg.seed);
  nlohmann::json j;
  j["passes"] = res.schedule.passes;
  j["stop"] = std::string(to_string(res.schedule.stop));
  j["episodes"] = res.schedule.events.size();
  j["untrainable_ids"] = res.untrainable_ids;
  for (auto k : kPolicyStates) {
    const auto [pos, neg] = res.samples.class_counts(k);
    j["samples"][std::string(to_string(k))] = {{"positive", pos}, {"negative", neg}};
  }
  j["eval"] = {{"active", acc.active.accuracy()},
               {"tracked", acc.tracked.accuracy()},
               {"lost", acc.lost.accuracy()},
               {"overall", acc.overall()}};
  j["test"] = nlohmann::json::array();
  for (const auto& s : scores) j["test"].push_back({{"clear", to_json(s.clear)}, {"hota", to_json(s.hota)}});
  write_json(out / "train_report.json", j);
  return "incremental: " + std::to_string(res.schedule.events.size()) + " episodes, " +
         std::to_string(res.schedule.passes) + " passes -> " + out.string();
}

struct EvalArgs {
  std::vector<std::string> gt, res;
  std::string metrics = "clearmot,hota";
  std::string alphas;
  std::string out;
  double iou = 0.5;
};

inline void add_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--gt", a.gt, "ground truth file (repeat with --res for several sequences)")->required();
  app.add_option("--res", a.res, "tracker results file")->required();
  app.add_option("--metrics", a.metrics, "clearmot,hota");
  app.add_option("--alphas", a.alphas, "comma-separated HOTA thresholds (default 0.05..0.95)");
  app.add_option("--iou", a.iou, "CLEAR MOT match threshold");
  app.add_option("--out", a.out, "report path (.json for JSON, otherwise CSV)")->required();
}

inline std::string run_eval(const EvalArgs& a) {
  expects(a.gt.size() == a.res.size(), "eval: --gt and --res must be given the same number of times");
  bool want_clear = false, want_hota = false;
  for (const auto& m : split(a.metrics, ',')) {
    if (m == "clearmot") want_clear = true;
    else if (m == "hota") want_hota = true;
    else throw ContractViolation("unknown metric: " + m);
  }
  std::vector<double> alphas;
  if (!a.alphas.empty()) {
    for (const auto& s : split(a.alphas, ',')) alphas.push_back(to_double(s, "alpha"));
  }

  struct Row {
    std::string name;
    ClearReport clear;
    HotaReport hota;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < a.gt.size(); ++i) {
    const auto gt = parse_gt(fs::path(a.gt[i]));
    const auto res = parse_results(fs::path(a.res[i]));
    const fs::path rp(a.res[i]);
    const auto parent = rp.parent_path().filename().string();
    Row r{parent.empty() ? rp.stem().string() : parent + "/" + rp.stem().string(), {}, {}};
    if (want_clear) r.clear = clear_mot(gt, res, a.iou);
    if (want_hota) r.hota = hota(gt, res, alphas);
    rows.push_back(std::move(r));
  }
  // Aggregate: CLEAR counts summed, HOTA averaged over sequences.
  Row agg{"aggregate", {}, {}};
  double mt = 0.0, ml = 0.0, iou_sum = 0.0;
  for (const auto& r : rows) {
    agg.clear.tp += r.clear.tp;
    agg.clear.fp += r.clear.fp;
    agg.clear.fn += r.clear.fn;
    agg.clear.ids += r.clear.ids;
    agg.clear.gt_count += r.clear.gt_count;
    agg.clear.gt_tracks += r.clear.gt_tracks;
    mt += r.clear.mt * static_cast<double>(r.clear.gt_tracks);
    ml += r.clear.ml * static_cast<double>(r.clear.gt_tracks);
    iou_sum += r.clear.motp * static_cast<double>(r.clear.tp);
    agg.hota.hota_avg += r.hota.hota_avg / static_cast<double>(rows.size());
    agg.hota.deta_avg += r.hota.deta_avg / static_cast<double>(rows.size());
    agg.hota.assa_avg += r.hota.assa_avg / static_cast<double>(rows.size());
  }
  if (agg.clear.gt_count) {
    agg.clear.mota = 1.0 - static_cast<double>(agg.clear.fn + agg.clear.fp + agg.clear.ids) /
                               static_cast<double>(agg.clear.gt_count);
    agg.clear.motp = agg.clear.tp ? iou_sum / static_cast<double>(agg.clear.tp) : 0.0;
    agg.clear.mt = mt / static_cast<double>(agg.clear.gt_tracks);
    agg.clear.ml = ml / static_cast<double>(agg.clear.gt_tracks);
  }

  const fs::path out = a.out;
  if (out.extension() == ".json") {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json e{{"sequence", r.name}};
      if (want_clear) e["clear"] = to_json(r.clear);
      if (want_hota) e["hota"] = to_json(r.hota);
      j.push_back(e);
    }
    nlohmann::json e{{"sequence", agg.name}};
    if (want_clear) e["clear"] = to_json(agg.clear);
    if (want_hota) e["hota"] = {{"hota_avg", agg.hota.hota_avg}, {"deta_avg", agg.hota.deta_avg}, {"assa_avg", agg.hota.assa_avg}};
    j.push_back(e);
    write_json(out, j);
  } else {
    auto f = detail::open_out(out);
    f << "sequence";
    if (want_clear) f << ",mota,motp,mt,ml,ids,fp,fn,tp,gt";
    if (want_hota) f << ",hota,deta,assa";
    f << '\n';
    rows.push_back(agg);
    for (const auto& r : rows) {
      f << r.name;
      if (want_clear) {
        f << ',' << fmt(r.clear.mota) << ',' << fmt(r.clear.motp) << ',' << fmt(r.clear.mt) << ',' << fmt(r.clear.ml)
          << ',' << r.clear.ids << ',' << r.clear.fp << ',' << r.clear.fn << ',' << r.clear.tp << ',' << r.clear.gt_count;
      }
      if (want_hota) f << ',' << fmt(r.hota.hota_avg) << ',' << fmt(r.hota.deta_avg) << ',' << fmt(r.hota.assa_avg);
      f << '\n';
    }
    rows.pop_back();
  }
  std::string summary = "eval: " + std::to_string(rows.size()) + " sequences";
  if (want_clear) summary += ", MOTA " + fmt(agg.clear.mota);
  if (want_hota) summary += ", HOTA " + fmt(agg.hota.hota_avg);
  return summary;
}

struct SweepArgs {
  std::string dets, gt, thresholds, out, frames;
  bool track_each = false;
  std::uint64_t seed = 1;
};

inline void add_sweep(CLI::App& app, SweepArgs& a) {
  app.add_option("--dets", a.dets, "MOT detection file")->required();
  app.add_option("--gt", a.gt, "ground truth file")->required();
  app.add_option("--thresholds", a.thresholds, "LO:HI:STEP")->required();
  app.add_option("--out", a.out, "CSV table")->required();
  app.add_option("--frames", a.frames, "frames for --track-each");
  app.add_flag("--track-each", a.track_each, "train and track on each thresholded detection set");
  app.add_option("--seed", a.seed);
}

inline std::string run_sweep(const SweepArgs& a) {
  const auto parts = split(a.thresholds, ':');
  expects(parts.size() == 3, "sweep: thresholds must be LO:HI:STEP");
  const auto ts = threshold_range(to_double(parts[0], "threshold"), to_double(parts[1], "threshold"),
                                  to_double(parts[2], "threshold step"));
  SequenceBundle b;
  b.detections = parse_detections(fs::path(a.dets));
  b.gt = parse_gt(fs::path(a.gt));
  const auto sweep = threshold_sweep(b.detections, *b.gt, ts);

  std::vector<std::pair<double, double>> tracked;  // MOTA, HOTA per threshold
  if (a.track_each) {
    const auto base = fs::path(a.dets).parent_path();
    SequenceBundle full = fs::exists(base / "scenario.json") ? load_bundle(base) : SequenceBundle{};
    if (!a.frames.empty()) b.frames_dir = fs::path(a.frames);
    b.num_frames = std::max(full.num_frames, b.gt->max_frame());
    b.extent = full.extent;
    if (!b.extent.valid()) {
      double mx = 1.0, my = 1.0;
      for (const auto& d : b.detections) {
        mx = std::max(mx, d.box.right());
        my = std::max(my, d.box.bottom());
      }
      b.extent = {static_cast<int>(std::ceil(mx)), static_cast<int>(std::ceil(my))};
    }
    const auto all = b.detections;
    for (const auto& row : sweep.rows) {
      b.detections = filter_by_confidence(all, row.threshold);
      const SequenceData seq = make_sequence(b);
      TrainerConfig cfg;
      cfg.seed = a.seed;
      const std::array<SequenceData, 1> seqs{seq};
      const auto trained = incremental_train(seqs, cfg);
      const auto run = run_sequence(seq, available_policies(trained.models), trained.models, cfg.tester, {a.seed});
      tracked.emplace_back(clear_mot(*b.gt, run.trajectories).mota, hota(*b.gt, run.trajectories).hota_avg);
    }
  }
  auto f = detail::open_out(a.out);
  f << "threshold,detections,tp,recall,precision" << (a.track_each ? ",mota,hota" : "") << '\n';
  for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
    const auto& r = sweep.rows[i];
    f << fmt(r.threshold) << ',' << r.detections << ',' << r.tp << ',' << fmt(r.recall) << ',' << fmt(r.precision);
    if (a.track_each) f << ',' << fmt(tracked[i].first) << ',' << fmt(tracked[i].second);
    f << '\n';
  }
  f << "# crossover," << fmt(sweep.crossover) << '\n';
  return "sweep: " + std::to_string(sweep.rows.size()) + " thresholds, crossover " + fmt(sweep.crossover);
}

struct ReportArgs {
  std::string in, out;
};

inline void add_report(CLI::App& app, ReportArgs& a) {
  app.add_option("--in", a.in, "directory holding iter_N/report.json and sweep CSVs")->required();
  app.add_option("--out", a.out, "aggregated CSV")->required();
}

/// Two gnuplot data blocks separated by blank lines: IBT iterations, then sweep rows.
inline std::string run_report(const ReportArgs& a) {
  if (!fs::is_directory(a.in)) throw IoError("report input directory not found: " + a.in);
  std::vector<fs::path> reports, sweeps;
  for (const auto& e : fs::recursive_directory_iterator(a.in)) {
    if (!e.is_regular_file()) continue;
    const auto& p = e.path();
    if (p.filename() == "report.json" && p.parent_path().filename().string().rfind("iter_", 0) == 0) {
      reports.push_back(p);
    } else if (p.extension() == ".csv") {
      std::ifstream in(p);
      std::string header;
      std::getline(in, header);
      if (header.rfind("threshold,", 0) == 0) sweeps.push_back(p);
    }
  }
  std::sort(reports.begin(), reports.end());
  std::sort(sweeps.begin(), sweeps.end());
  if (reports.empty() && sweeps.empty()) throw IoError("no iteration reports or sweep tables under " + a.in);

  struct IterRow {
    std::string source;
    nlohmann::json j;
  };
  std::vector<IterRow> iters;
  for (const auto& p : reports) {
    auto in = detail::open_in(p);
    try {
      iters.push_back({fs::relative(p.parent_path().parent_path(), a.in).generic_string(), nlohmann::json::parse(in)});
    } catch (const nlohmann::json::exception& e) {
      throw IoError(p.string() + ": " + e.what());
    }
  }
  std::sort(iters.begin(), iters.end(), [](const IterRow& x, const IterRow& y) {
    return x.source != y.source ? x.source < y.source : x.j.value("iteration", 0) < y.j.value("iteration", 0);
  });

  auto f = detail::open_out(a.out);
  f << "# iterations\n# source,iteration,new_active,new_tracked,new_lost,acc_active,acc_tracked,acc_lost,mota,hota\n";
  for (const auto& r : iters) {
    const auto& j = r.j;
    double mota = 0.0, h = 0.0;
    const auto& test = j.at("test");
    for (const auto& t : test) {
      mota += t.at("clear").at("mota").get<double>();
      h += t.at("hota").at("hota_avg").get<double>();
    }
    if (!test.empty()) {
      mota /= static_cast<double>(test.size());
      h /= static_cast<double>(test.size());
    }
    f << (r.source.empty() || r.source == "." ? "." : r.source) << ',' << j.at("iteration").get<int>() << ','
      << j.at("new_samples").at("active").get<std::size_t>() << ','
      << j.at("new_samples").at("tracked").get<std::size_t>() << ','
      << j.at("new_samples").at("lost").get<std::size_t>() << ',' << fmt(j.at("eval").at("active").get<double>())
      << ',' << fmt(j.at("eval").at("tracked").get<double>()) << ',' << fmt(j.at("eval").at("lost").get<double>())
      << ',' << fmt(mota) << ',' << fmt(h) << '\n';
  }
  f << "\n\n# sweep\n# source,threshold,detections,tp,recall,precision,mota,hota\n";
  for (const auto& p : sweeps) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty() || line.front() == '#') continue;
      auto cols = split(line, ',');
      while (cols.size() < 7) cols.emplace_back("nan");
      f << fs::relative(p, a.in).generic_string();
      for (const auto& c : cols) f << ',' << c;
      f << '\n';
    }
  }
  return "report: " + std::to_string(iters.size()) + " iterations, " + std::to_string(sweeps.size()) +
         " sweep tables -> " + a.out;
}

// --- entry point -----------------------------------------------------------------------------

namespace args {

/// Expands "--config FILE" of the chosen subcommand into leading
/// "--key value" arguments so explicit flags, parsed later, win.
inline std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands({})) {
    if (s->get_name() == args.front()) sub = s;
  }
  if (!sub) return args;
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  const auto cfg = KeyValueConfig::load(*path);
  std::vector<std::string> prefix;
  for (const auto& key : cfg.keys()) {
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (!opt || flag == "--config") throw ContractViolation(*path + ": unknown key '" + key + "'");
    for (const auto& v : cfg.all(key)) {
      if (opt->get_expected_min() == 0) {
        prefix.push_back(flag + "=" + v);
      } else {
        prefix.push_back(flag);
        prefix.push_back(v);
      }
    }
  }
  args.insert(args.begin() + 1, prefix.begin(), prefix.end());
  return args;
}

}  // namespace args

/// Exit codes: 0 success, 1 I/O error, 2 contract violation or bad usage.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"MDP multi-object tracker: simulate, track, train, evaluate"};
  app.require_subcommand(1);
  SimulateArgs sim;
  TrackArgs trk;
  TrainArgs trn;
  EvalArgs evl;
  SweepArgs swp;
  ReportArgs rep;
  std::string config_path;
  auto setup = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    s->add_option("--config", config_path, "flat key=value file; explicit flags override its keys");
    return s;
  };
  CLI::App* s_sim = setup("simulate", "generate a synthetic sequence");
  CLI::App* s_trk = setup("track", "run the tracker on a detection file");
  CLI::App* s_trn = setup("train", "train policies");
  CLI::App* s_evl = setup("eval", "CLEAR MOT and HOTA evaluation");
  CLI::App* s_swp = setup("sweep", "detector confidence threshold sweep");
  CLI::App* s_rep = setup("report", "aggregate iteration and sweep outputs");
  add_simulate(*s_sim, sim);
  add_track(*s_trk, trk);
  add_train(*s_trn, trn);
  add_eval(*s_evl, evl);
  add_sweep(*s_swp, swp);
  add_report(*s_rep, rep);
  // Repeatable list options accumulate.
  for (auto* o : {s_sim->get_option("--occlusion"), s_trk->get_option("--toggle"), s_evl->get_option("--gt"),
                  s_evl->get_option("--res")}) {
    o->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = cli::args::expand_config(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
    std::string summary;
    if (s_sim->parsed()) summary = run_simulate(sim);
    else if (s_trk->parsed()) summary = run_track(trk);
    else if (s_trn->parsed()) summary = run_train(trn);
    else if (s_evl->parsed()) summary = run_eval(evl);
    else if (s_swp->parsed()) summary = run_sweep(swp);
    else summary = run_report(rep);
    out << summary << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mdp::cli
