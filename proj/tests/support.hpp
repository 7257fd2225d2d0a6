#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mdp/mdp.hpp"

namespace mdp::testing {

/// A simulated sequence. `data()` points into this object, so keep it in
/// place (e.g. in a std::deque) while the SequenceData is in use.
struct SimSequence {
  Scenario scenario;
  SimDetections dets;
  FrameSource frames;

  SequenceData data() const {
    SequenceData s;
    s.extent = scenario.config.extent;
    s.num_frames = scenario.config.frames;
    s.detections = group_by_frame(dets.dets);
    s.frames = frames;
    s.gt = &scenario.gt;
    return s;
  }
};

inline SimSequence simulate(const ScenarioConfig& sc, CorruptionConfig cc, std::uint64_t seed, bool pixels = false) {
  SimSequence s;
  s.scenario = generate_gt(sc, seed);
  cc.seed = seed;
  s.dets = corrupt(s.scenario.gt, sc.extent, sc.frames, cc);
  if (pixels) s.frames = FrameSource::from_images(render(s.scenario, seed));
  return s;
}

/// Minimum total cost over all maximal injections, by exhaustive permutation.
inline double brute_force_min_cost(const CostMatrix& c) {
  const std::size_t n = std::max(c.rows(), c.cols());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double sum = 0.0;
    for (std::size_t r = 0; r < c.rows(); ++r) {
      if (perm[r] < c.cols()) sum += c(r, perm[r]);
    }
    best = std::min(best, sum);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline CostMatrix random_costs(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 10.0);
  CostMatrix c(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < cols; ++k) c(r, k) = u(rng);
  }
  return c;
}

/// GT track `id` with identical boxes over [first, last].
inline void add_track(GroundTruth& gt, int id, int first, int last, BoundingBox box, double dx = 0.0) {
  for (int f = first; f <= last; ++f) gt.add({f, id, box.translated(dx * (f - first), 0.0)});
}

/// Result trajectory covering `gt` track `gt_id` over [first, last].
inline Trajectory copy_track(const GroundTruth& gt, int gt_id, int out_id, int first, int last) {
  Trajectory t{out_id, {}};
  for (const GtBox* b : gt.track(gt_id)) {
    if (b->frame >= first && b->frame <= last) t.entries.push_back({b->frame, b->box});
  }
  return t;
}

/// Detections identical to every GT box, confidence 1.
inline std::vector<Detection> perfect_detections(const GroundTruth& gt) {
  std::vector<Detection> out;
  for (const auto& b : gt.boxes()) out.push_back({b.frame, b.box, 1.0});
  return out;
}

/// Smooth texture: a sum of Gaussian blobs on a mid-gray base, evaluated at
/// continuous coordinates so sub-pixel shifts are exact.
struct BlobField {
  struct Blob {
    double x, y, sigma, amp;
  };
  std::vector<Blob> blobs;

  static BlobField random(int width, int height, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, height), us(2.5, 6.0), ua(-0.35, 0.35);
    BlobField f;
    for (int i = 0; i < count; ++i) f.blobs.push_back({ux(rng), uy(rng), us(rng), ua(rng)});
    return f;
  }

  double at(double x, double y) const {
    double v = 0.5;
    for (const auto& b : blobs) {
      const double dx = x - b.x, dy = y - b.y;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 16.0 * b.sigma * b.sigma) continue;
      v += b.amp * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
    }
    return std::clamp(v, 0.0, 1.0);
  }

  /// Raster with content moved by (dx, dy).
  GrayImage raster(int width, int height, double dx = 0.0, double dy = 0.0) const {
    std::vector<double> acc(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0.5);
    for (const auto& b : blobs) {
      const double reach = 4.0 * b.sigma;
      const double bx = b.x + dx, by = b.y + dy;
      const int x0 = std::max(0, static_cast<int>(std::floor(bx - reach)));
      const int x1 = std::min(width - 1, static_cast<int>(std::ceil(bx + reach)));
      const int y0 = std::max(0, static_cast<int>(std::floor(by - reach)));
      const int y1 = std::min(height - 1, static_cast<int>(std::ceil(by + reach)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double ex = x - bx, ey = y - by;
          const double r2 = ex * ex + ey * ey;
          if (r2 > reach * reach) continue;
          acc[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] +=
              b.amp * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
        }
      }
    }
    GrayImage img(width, height);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        img.at(x, y) = static_cast<float>(
            std::clamp(acc[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)],
                       0.0, 1.0));
      }
    }
    return img;
  }
};

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mdp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mdp::testing
