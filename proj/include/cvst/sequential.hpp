#pragma once

// Open (Wald) and closed (Spicer) sequential tests on binary top/flop traces,
// plus the safety-zone and worst-case error-bound calculators built on them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvst/error.hpp"

namespace cvst {

using TraceBit = std::uint8_t;

/// Smallest S for which the open test can accept H1 within S steps.
inline int min_steps(double alpha_l, double beta_l) {
  detail::require(alpha_l > 0.0 && alpha_l < 1.0, "min_steps: alpha_l must lie in (0, 1)");
  detail::require(beta_l > 0.0 && beta_l < 1.0, "min_steps: beta_l must lie in (0, 1)");
  const double steps = std::ceil(std::log((1.0 - beta_l) / alpha_l) / std::log(2.0));
  return std::max(1, static_cast<int>(steps));
}

/// Wald test with pi0 = 1/2 and pi1 tuned so that a constant winner reaches
/// the upper line after exactly S steps on average.
struct WaldTestPlan {
  int steps_S = 0;
  double alpha_l = 0.0;
  double beta_l = 0.0;
  double pi0 = 0.5;
  double pi1 = 0.0;
  double intercept_a = 0.0;  // L0 intercept
  double slope_b = 0.0;      // shared slope of L0 and L1
  double upper_intercept = 0.0;

  double lower_boundary(double s) const { return intercept_a + slope_b * s; }
  double upper_boundary(double s) const { return upper_intercept + slope_b * s; }
};

inline WaldTestPlan plan_wald_test(int steps_S, double alpha_l, double beta_l) {
  detail::require(alpha_l > 0.0 && alpha_l < 1.0, "plan_wald_test: alpha_l must lie in (0, 1)");
  detail::require(beta_l > 0.0 && beta_l < 1.0, "plan_wald_test: beta_l must lie in (0, 1)");
  detail::require(steps_S >= 1, "plan_wald_test: steps_S must be positive");
  const int floor_steps = min_steps(alpha_l, beta_l);
  const double log_ratio = std::log((1.0 - beta_l) / alpha_l);
  // pi1 = exp(log_ratio / S) / 2 reaches 1 once log_ratio / S >= log 2.
  if (steps_S < floor_steps || log_ratio / steps_S >= std::log(2.0) - 1e-12 ||
      log_ratio <= 0.0) {
    throw InfeasiblePlan("steps " + std::to_string(steps_S) +
                         " below the minimum of " + std::to_string(floor_steps) +
                         " for alpha_l=" + std::to_string(alpha_l) +
                         ", beta_l=" + std::to_string(beta_l));
  }
  WaldTestPlan plan;
  plan.steps_S = steps_S;
  plan.alpha_l = alpha_l;
  plan.beta_l = beta_l;
  plan.pi0 = 0.5;
  plan.pi1 = 0.5 * std::exp(log_ratio / steps_S);
  const double d = std::log(plan.pi1 / plan.pi0) - std::log((1.0 - plan.pi1) / (1.0 - plan.pi0));
  plan.intercept_a = std::log(beta_l / (1.0 - alpha_l)) / d;
  plan.slope_b = std::log((1.0 - plan.pi0) / (1.0 - plan.pi1)) / d;
  plan.upper_intercept = log_ratio / d;
  return plan;
}

/// Earliest (real-valued) step at which an all-zeros trace is dropped.
inline double safety_zone(const WaldTestPlan& plan) { return -plan.intercept_a / plan.slope_b; }

/// Integer safety zone: the number of leading steps in which nothing can drop.
inline int integer_safety_zone(const WaldTestPlan& plan) {
  return static_cast<int>(std::floor(safety_zone(plan)));
}

inline bool is_flop_configuration(std::span<const TraceBit> trace, int s,
                                  const WaldTestPlan& plan) {
  detail::require(s >= 1 && s <= plan.steps_S, "is_flop_configuration: step out of range");
  detail::require(static_cast<int>(trace.size()) == s,
                  "is_flop_configuration: trace length must equal the step");
  int sum = 0;
  for (TraceBit bit : trace) {
    detail::require(bit <= 1, "is_flop_configuration: trace entries must be 0 or 1");
    sum += bit;
  }
  return sum <= plan.lower_boundary(s);
}

/// Number of worst-case paths (zeros through the integer safety zone, free
/// afterwards) reaching cumulative sum `row` at step `col` without touching
/// the loser region. Tables are built once per plan in O(S^2).
class PathCounter {
 public:
  explicit PathCounter(const WaldTestPlan& plan)
      : plan_(plan),
        safe_(std::min(integer_safety_zone(plan), plan.steps_S)),
        size_(plan.steps_S + 1),
        table_(static_cast<std::size_t>(size_ * size_), 0) {
    for (int col = 0; col < size_; ++col) {
      for (int row = 0; row <= col; ++row) at(row, col) = evaluate(row, col);
    }
  }

  int safe_steps() const { return safe_; }
  int steps() const { return plan_.steps_S; }

  std::uint64_t operator()(int row, int col) const {
    detail::require(row >= 0 && col >= 0 && row <= col && col <= plan_.steps_S,
                    "path_count: indices out of range");
    return table_[static_cast<std::size_t>(row * size_ + col)];
  }

 private:
  std::uint64_t& at(int row, int col) { return table_[static_cast<std::size_t>(row * size_ + col)]; }

  std::uint64_t evaluate(int row, int col) const {
    if (row == 0 && col <= safe_) return 1;
    if (col > safe_ && row == col - safe_) return 1;
    if (col >= 1 && row > plan_.lower_boundary(col) && row < col - safe_) {
      const std::uint64_t left = table_[static_cast<std::size_t>(row * size_ + col - 1)];
      const std::uint64_t diag =
          row >= 1 ? table_[static_cast<std::size_t>((row - 1) * size_ + col - 1)] : 0;
      if (left > std::numeric_limits<std::uint64_t>::max() - diag)
        throw InvalidArgument("path_count: count overflows 64 bits");
      return left + diag;
    }
    return 0;
  }

  WaldTestPlan plan_;
  int safe_;
  int size_;
  std::vector<std::uint64_t> table_;
};

inline std::uint64_t path_count(int row, int col, const WaldTestPlan& plan) {
  return PathCounter(plan)(row, col);
}

/// Probability that a configuration which loses through the safety zone and
/// then wins each step with probability `pi` is dropped by step S.
inline double cvst_error_bound(const WaldTestPlan& plan, double pi) {
  detail::require(pi >= 0.0 && pi <= 1.0, "cvst_error_bound: pi must lie in [0, 1]");
  const PathCounter paths(plan);
  const int S = plan.steps_S;
  const int post_safety_trials = S - paths.safe_steps();
  const int first = std::max(0, static_cast<int>(std::floor(plan.lower_boundary(S))) + 1);

  const double log_pi = std::log(pi);
  const double log_miss = std::log1p(-pi);
  std::vector<double> logs;
  for (int i = first; i <= post_safety_trials; ++i) {
    const std::uint64_t count = paths(i, S);
    if (count == 0) continue;
    const int misses = post_safety_trials - i;
    // 0^0 = 1: with pi at an endpoint only the all-hit or all-miss path survives.
    if ((i > 0 && pi == 0.0) || (misses > 0 && pi == 1.0)) continue;
    double term = std::log(static_cast<double>(count));
    if (i > 0) term += i * log_pi;
    if (misses > 0) term += misses * log_miss;
    logs.push_back(term);
  }
  if (logs.empty()) return 1.0;
  const double peak = *std::max_element(logs.begin(), logs.end());
  double acc = 0.0;
  for (double l : logs) acc += std::exp(l - peak);
  const double survival = std::exp(peak) * acc;
  return std::clamp(1.0 - survival, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Closed test after Spicer: a gambler's-ruin game between the configuration
// (fortune F_a, winning 1 per top step, losing `stake` per flop step) and an
// opponent with fortune F_b.

/// Probability f(n, pi, F_a, F_b) that the player with fortune `fortune_a`
/// ruins the opponent after `n` games under the three-case recurrence.
inline double spicer_ruin_probability(int n, double pi, int fortune_a, int fortune_b,
                                      int stake = 1) {
  detail::require(n >= 0, "spicer_ruin_probability: n must be >= 0");
  detail::require(pi >= 0.0 && pi <= 1.0, "spicer_ruin_probability: pi must lie in [0, 1]");
  detail::require(stake >= 1, "spicer_ruin_probability: stake must be positive");

  // F_a + F_b is conserved, so (games left, F_a) identifies a state.
  const std::int64_t total = static_cast<std::int64_t>(fortune_a) + fortune_b;
  std::unordered_map<std::int64_t, double> memo;
  auto key = [](int games, std::int64_t fa) { return (fa << 20) ^ games; };

  auto rec = [&](auto&& self, int games, std::int64_t fa) -> double {
    const std::int64_t fb = total - fa;
    if (fa < 0 || (games == 0 && fb > 0)) return 0.0;
    if (games == 0) return fa > 0 ? 1.0 : 0.0;  // fb <= 0 here
    const auto k = key(games, fa);
    if (auto it = memo.find(k); it != memo.end()) return it->second;
    const double v = pi * self(self, games - 1, fa + 1) +
                     (1.0 - pi) * self(self, games - 1, fa - stake);
    memo.emplace(k, v);
    return v;
  };
  return rec(rec, n, fortune_a);
}

struct SpicerTestPlan {
  int games_n = 0;
  int fortune_a = 0;
  int fortune_b = 0;
  int stake = 1;
  double ruin_prob_at_half = 0.0;     // f(n, 1/2, F_a, F_b): opponent ruined
  double lower_ruin_at_half = 0.0;    // f(n, 1/2, F_b, F_a): configuration ruined

  double lower_boundary(double s) const {
    return static_cast<double>(stake) / (1.0 + stake) * s -
           static_cast<double>(fortune_a) / (1.0 + stake);
  }
  double upper_boundary(double s) const {
    return static_cast<double>(stake) / (1.0 + stake) * s +
           static_cast<double>(fortune_b) / (1.0 + stake);
  }
};

/// Smallest fortunes (F_a first, then F_b, stake 1) such that at pi = 1/2 the
/// configuration ruins its opponent with probability <= alpha_l and is itself
/// ruined with probability <= beta_l over `steps_S` games.
inline SpicerTestPlan plan_spicer_test(int steps_S, double alpha_l, double beta_l = 0.1) {
  detail::require(steps_S >= 2, "plan_spicer_test: steps_S must be >= 2");
  detail::require(alpha_l > 0.0 && alpha_l < 1.0, "plan_spicer_test: alpha_l must lie in (0, 1)");
  detail::require(beta_l > 0.0 && beta_l < 1.0, "plan_spicer_test: beta_l must lie in (0, 1)");
  for (int fa = 1; fa <= steps_S; ++fa) {
    for (int fb = 1; fb <= steps_S; ++fb) {
      const double up = spicer_ruin_probability(steps_S, 0.5, fa, fb);
      if (up > alpha_l) continue;
      const double down = spicer_ruin_probability(steps_S, 0.5, fb, fa);
      if (down > beta_l) continue;
      return SpicerTestPlan{steps_S, fa, fb, 1, up, down};
    }
  }
  throw InfeasiblePlan("no Spicer fortunes up to " + std::to_string(steps_S) +
                       " satisfy alpha_l=" + std::to_string(alpha_l) +
                       ", beta_l=" + std::to_string(beta_l));
}

inline bool is_flop_configuration(std::span<const TraceBit> trace, int s,
                                  const SpicerTestPlan& plan) {
  detail::require(s >= 1 && s <= plan.games_n, "is_flop_configuration: step out of range");
  detail::require(static_cast<int>(trace.size()) == s,
                  "is_flop_configuration: trace length must equal the step");
  int sum = 0;
  for (TraceBit bit : trace) {
    detail::require(bit <= 1, "is_flop_configuration: trace entries must be 0 or 1");
    sum += bit;
  }
  return sum <= plan.lower_boundary(s);
}

}  // namespace cvst
