#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mdp/core.hpp"

namespace mdp {

enum class RebalanceStrategy : std::uint8_t { None, Undersample, Oversample, Probabilistic };

inline std::string_view to_string(RebalanceStrategy s) {
  switch (s) {
    case RebalanceStrategy::None: return "none";
    case RebalanceStrategy::Undersample: return "undersample";
    case RebalanceStrategy::Oversample: return "oversample";
    case RebalanceStrategy::Probabilistic: return "probabilistic";
  }
  return "?";
}

inline RebalanceStrategy parse_rebalance(std::string_view s) {
  if (s == "none") return RebalanceStrategy::None;
  if (s == "undersample") return RebalanceStrategy::Undersample;
  if (s == "oversample") return RebalanceStrategy::Oversample;
  if (s == "probabilistic") return RebalanceStrategy::Probabilistic;
  throw ContractViolation("unknown rebalance strategy: " + std::string(s));
}

/// Produces per-epoch index streams over a binary-labelled (+1 / -1) sample
/// set so that both classes are drawn equally often in expectation.
class Rebalancer {
 public:
  Rebalancer(std::span<const int> labels, RebalanceStrategy strategy, std::uint64_t seed)
      : strategy_(strategy), rng_(seed) {
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] > 0 ? pos_ : neg_).push_back(i);
    if (strategy_ != RebalanceStrategy::None) {
      if (pos_.empty()) throw ContractViolation("rebalance: no positive samples");
      if (neg_.empty()) throw ContractViolation("rebalance: no negative samples");
    }
    total_ = labels.size();
    if (strategy_ == RebalanceStrategy::Probabilistic) {
      std::vector<double> w(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        w[i] = 1.0 / static_cast<double>(labels[i] > 0 ? pos_.size() : neg_.size());
      }
      weighted_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
    }
  }

  /// Index stream for one epoch.
  std::vector<std::size_t> epoch() {
    std::vector<std::size_t> out;
    switch (strategy_) {
      case RebalanceStrategy::None:
        out.resize(total_);
        for (std::size_t i = 0; i < total_; ++i) out[i] = i;
        break;
      case RebalanceStrategy::Undersample: {
        const auto& minority = pos_.size() <= neg_.size() ? pos_ : neg_;
        auto majority = pos_.size() <= neg_.size() ? neg_ : pos_;
        std::shuffle(majority.begin(), majority.end(), rng_);
        out = minority;
        out.insert(out.end(), majority.begin(), majority.begin() + static_cast<std::ptrdiff_t>(minority.size()));
        break;
      }
      case RebalanceStrategy::Oversample: {
        const auto& minority = pos_.size() <= neg_.size() ? pos_ : neg_;
        const auto& majority = pos_.size() <= neg_.size() ? neg_ : pos_;
        out = majority;
        out.insert(out.end(), minority.begin(), minority.end());
        std::uniform_int_distribution<std::size_t> pick(0, minority.size() - 1);
        for (std::size_t i = minority.size(); i < majority.size(); ++i) out.push_back(minority[pick(rng_)]);
        break;
      }
      case RebalanceStrategy::Probabilistic:
        out.reserve(total_);
        for (std::size_t i = 0; i < total_; ++i) out.push_back(draw());
        break;
    }
    return out;
  }

  /// One draw with probability inversely proportional to the class frequency.
  std::size_t draw() {
    expects(strategy_ == RebalanceStrategy::Probabilistic, "Rebalancer::draw requires probabilistic strategy");
    return weighted_(rng_);
  }

 private:
  RebalanceStrategy strategy_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> pos_;
  std::vector<std::size_t> neg_;
  std::size_t total_ = 0;
  std::discrete_distribution<std::size_t> weighted_;
};

/// One-shot form: the index stream of a single epoch.
inline std::vector<std::size_t> rebalance(std::span<const int> labels, RebalanceStrategy strategy,
                                          std::uint64_t seed) {
  Rebalancer r(labels, strategy, seed);
  return r.epoch();
}

}  // namespace mdp
