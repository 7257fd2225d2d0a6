#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdp/core.hpp"
#include "mdp/geometry.hpp"
#include "mdp/ground_truth.hpp"
#include "mdp/image.hpp"

namespace mdp {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

class LineError {
 public:
  LineError(std::string source, std::size_t line) : source_(std::move(source)), line_(line) {}
  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(source_ + ":" + std::to_string(line_) + ": " + msg);
  }

 private:
  std::string source_;
  std::size_t line_;
};

inline double parse_double(std::string_view s, const LineError& where, std::string_view field) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) where.fail("unparseable " + std::string(field) + " '" + std::string(s) + "'");
  return v;
}

inline int parse_int(std::string_view s, const LineError& where, std::string_view field) {
  // Integers written as floats ("3.0") are accepted when integral.
  const double v = parse_double(s, where, field);
  if (v != static_cast<double>(static_cast<int>(v))) where.fail("non-integer " + std::string(field) + " '" + std::string(s) + "'");
  return static_cast<int>(v);
}

template <typename F>
void for_each_row(std::istream& in, const std::string& source, std::size_t min_fields, F&& row) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split_csv(t);
    const LineError where(source, n);
    if (fields.size() < min_fields) {
      where.fail("expected at least " + std::to_string(min_fields) + " fields, got " + std::to_string(fields.size()));
    }
    row(fields, where);
  }
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline BoundingBox parse_box(const std::vector<std::string_view>& f, const LineError& where) {
  const BoundingBox b{parse_double(f[2], where, "x"), parse_double(f[3], where, "y"), parse_double(f[4], where, "w"),
                      parse_double(f[5], where, "h")};
  if (!(b.w > 0.0) || !(b.h > 0.0)) where.fail("box width and height must be > 0");
  return b;
}

inline int parse_frame(std::string_view s, const LineError& where) {
  const int f = parse_int(s, where, "frame");
  if (f < 1) where.fail("frame must be >= 1");
  return f;
}

}  // namespace detail

// --- MOT text format ---------------------------------------------------------------------

/// Rows "frame,-1,x,y,w,h,conf,..." (trailing columns ignored).
inline std::vector<Detection> parse_detections(std::istream& in, const std::string& source = "<detections>") {
  std::vector<Detection> out;
  detail::for_each_row(in, source, 7, [&](const auto& f, const detail::LineError& where) {
    out.push_back({detail::parse_frame(f[0], where), detail::parse_box(f, where),
                   detail::parse_double(f[6], where, "confidence")});
  });
  return out;
}

inline std::vector<Detection> parse_detections(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_detections(in, path.string());
}

/// Rows "frame,id,x,y,w,h,flag[,class[,visibility]]". Flag 0 marks the box as
/// ignored; visibility below 0.5 marks it occluded.
inline GroundTruth parse_gt(std::istream& in, const std::string& source = "<gt>") {
  GroundTruth gt;
  detail::for_each_row(in, source, 7, [&](const auto& f, const detail::LineError& where) {
    GtBox b;
    b.frame = detail::parse_frame(f[0], where);
    b.id = detail::parse_int(f[1], where, "id");
    b.box = detail::parse_box(f, where);
    b.ignore = detail::parse_double(f[6], where, "flag") == 0.0;
    if (f.size() >= 9) b.visibility = detail::parse_double(f[8], where, "visibility");
    b.occluded = b.visibility < 0.5;
    if (gt.find(b.id, b.frame)) {
      where.fail("duplicate (frame, id) = (" + std::to_string(b.frame) + ", " + std::to_string(b.id) + ")");
    }
    gt.add(b);
  });
  return gt;
}

inline GroundTruth parse_gt(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_gt(in, path.string());
}

/// Tracker output rows "frame,id,x,y,w,h,..." grouped into trajectories by id.
inline std::vector<Trajectory> parse_results(std::istream& in, const std::string& source = "<results>") {
  std::map<int, Trajectory> by_id;
  detail::for_each_row(in, source, 6, [&](const auto& f, const detail::LineError& where) {
    const int frame = detail::parse_frame(f[0], where);
    const int id = detail::parse_int(f[1], where, "id");
    auto& tr = by_id[id];
    tr.id = id;
    for (const auto& e : tr.entries) {
      if (e.frame == frame) where.fail("duplicate (frame, id) = (" + std::to_string(frame) + ", " + std::to_string(id) + ")");
    }
    tr.entries.push_back({frame, detail::parse_box(f, where)});
  });
  std::vector<Trajectory> out;
  for (auto& [_, tr] : by_id) {
    std::sort(tr.entries.begin(), tr.entries.end(), [](const auto& a, const auto& b) { return a.frame < b.frame; });
    out.push_back(std::move(tr));
  }
  return out;
}

inline std::vector<Trajectory> parse_results(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_results(in, path.string());
}

inline void write_results(std::ostream& out, std::span<const Trajectory> trajectories) {
  struct Row {
    int frame, id;
    const BoundingBox* box;
  };
  std::vector<Row> rows;
  for (const auto& t : trajectories) {
    for (const auto& e : t.entries) rows.push_back({e.frame, t.id, &e.box});
  }
  std::sort(rows.begin(), rows.end(),
            [](const Row& a, const Row& b) { return a.frame != b.frame ? a.frame < b.frame : a.id < b.id; });
  for (const auto& r : rows) {
    out << r.frame << ',' << r.id << ',' << detail::fixed2(r.box->x) << ',' << detail::fixed2(r.box->y) << ','
        << detail::fixed2(r.box->w) << ',' << detail::fixed2(r.box->h) << ",1,-1,-1,-1\n";
  }
}

inline void write_results(const std::filesystem::path& path, std::span<const Trajectory> trajectories) {
  auto out = detail::open_out(path);
  write_results(out, trajectories);
}

inline void write_detections(const std::filesystem::path& path, std::span<const Detection> dets) {
  std::vector<const Detection*> rows;
  for (const auto& d : dets) rows.push_back(&d);
  std::stable_sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) { return a->frame < b->frame; });
  auto out = detail::open_out(path);
  for (const auto* d : rows) {
    out << d->frame << ",-1," << detail::fixed2(d->box.x) << ',' << detail::fixed2(d->box.y) << ','
        << detail::fixed2(d->box.w) << ',' << detail::fixed2(d->box.h) << ',' << detail::fixed2(d->confidence)
        << ",-1,-1,-1\n";
  }
}

inline void write_gt(const std::filesystem::path& path, const GroundTruth& gt) {
  std::vector<const GtBox*> rows;
  for (const auto& b : gt.boxes()) rows.push_back(&b);
  std::sort(rows.begin(), rows.end(),
            [](const auto* a, const auto* b) { return a->frame != b->frame ? a->frame < b->frame : a->id < b->id; });
  auto out = detail::open_out(path);
  for (const auto* b : rows) {
    out << b->frame << ',' << b->id << ',' << detail::fixed2(b->box.x) << ',' << detail::fixed2(b->box.y) << ','
        << detail::fixed2(b->box.w) << ',' << detail::fixed2(b->box.h) << ',' << (b->ignore ? 0 : 1) << ",1,"
        << detail::fixed2(b->visibility) << '\n';
  }
}

// --- key=value configuration ----------------------------------------------------------------

/// Flat "key = value" text; '#' starts a comment line. Repeated keys keep
/// every value in order.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>") {
    KeyValueConfig c;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      const auto t = detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      const auto key = eq == std::string_view::npos ? std::string_view{} : detail::trim(t.substr(0, eq));
      if (key.empty()) detail::LineError(source, n).fail("expected key = value");
      c.values_[std::string(key)].emplace_back(detail::trim(t.substr(eq + 1)));
    }
    return c;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  void set(const std::string& key, std::string value) { values_[key] = {std::move(value)}; }

  std::vector<std::string> all(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? std::vector<std::string>{} : it->second;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second.back();
  }

  double get(const std::string& key, double fallback) const { return number(key).value_or(fallback); }

  int get(const std::string& key, int fallback) const {
    const auto v = number(key);
    if (!v) return fallback;
    if (*v != static_cast<double>(static_cast<int>(*v))) throw ContractViolation("config: " + key + " must be an integer");
    return static_cast<int>(*v);
  }

  bool get(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second.back();
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw ContractViolation("config: " + key + " must be a boolean, got '" + s + "'");
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : values_) out.push_back(k);
    return out;
  }

 private:
  std::optional<double> number(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    const auto& s = it->second.back();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw ContractViolation("config: " + key + " must be a number, got '" + s + "'");
    }
    return v;
  }

  std::map<std::string, std::vector<std::string>> values_;
};

// --- sequence bundles ------------------------------------------------------------------------

/// One sequence directory: gt.txt, det.txt, optional frames/ and scenario.json.
struct SequenceBundle {
  std::string name;
  std::filesystem::path dir;
  ImageExtent extent;
  int num_frames = 0;
  std::vector<Detection> detections;
  std::optional<GroundTruth> gt;
  std::optional<std::filesystem::path> frames_dir;
};

/// Image extent from scenario.json, else the first frame, else the box extents.
inline SequenceBundle load_bundle(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("sequence directory not found: " + dir.string());
  SequenceBundle b;
  b.dir = dir;
  b.name = dir.filename().string();
  if (fs::exists(dir / "det.txt")) b.detections = parse_detections(dir / "det.txt");
  if (fs::exists(dir / "gt.txt")) b.gt = parse_gt(dir / "gt.txt");
  if (fs::is_directory(dir / "frames")) b.frames_dir = dir / "frames";
  if (!b.gt && b.detections.empty()) throw IoError("sequence has neither gt.txt nor det.txt: " + dir.string());

  double max_x = 1.0, max_y = 1.0;
  for (const auto& d : b.detections) {
    b.num_frames = std::max(b.num_frames, d.frame);
    max_x = std::max(max_x, d.box.right());
    max_y = std::max(max_y, d.box.bottom());
  }
  if (b.gt) {
    b.num_frames = std::max(b.num_frames, b.gt->max_frame());
    for (const auto& g : b.gt->boxes()) {
      max_x = std::max(max_x, g.box.right());
      max_y = std::max(max_y, g.box.bottom());
    }
  }
  b.extent = {static_cast<int>(std::ceil(max_x)), static_cast<int>(std::ceil(max_y))};
  if (fs::exists(dir / "scenario.json")) {
    auto in = detail::open_in(dir / "scenario.json");
    try {
      const auto j = nlohmann::json::parse(in);
      const auto& c = j.at("config");
      b.extent = {c.at("width").get<int>(), c.at("height").get<int>()};
      b.num_frames = std::max(b.num_frames, c.at("frames").get<int>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError("scenario.json in " + dir.string() + ": " + e.what());
    }
  } else if (b.frames_dir && fs::exists(*b.frames_dir / frame_filename(1))) {
    const auto img = read_pgm(*b.frames_dir / frame_filename(1));
    b.extent = {img.width(), img.height()};
  }
  return b;
}

/// A directory holding sequence subdirectories, or a single sequence itself.
inline std::vector<SequenceBundle> load_bundles(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  if (fs::exists(dir / "gt.txt") || fs::exists(dir / "det.txt")) return {load_bundle(dir)};
  std::vector<fs::path> subs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && (fs::exists(e.path() / "gt.txt") || fs::exists(e.path() / "det.txt"))) {
      subs.push_back(e.path());
    }
  }
  std::sort(subs.begin(), subs.end());
  if (subs.empty()) throw IoError("no sequences found in " + dir.string());
  std::vector<SequenceBundle> out;
  for (const auto& s : subs) out.push_back(load_bundle(s));
  return out;
}

}  // namespace mdp
