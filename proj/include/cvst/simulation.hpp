#pragma once

// Monte Carlo harnesses for the sequential tests and the compute-budget
// planner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "cvst/error.hpp"
#include "cvst/random.hpp"
#include "cvst/sequential.hpp"

namespace cvst {

enum class SequentialTest { wald, spicer };

inline std::string_view to_string(SequentialTest kind) {
  return kind == SequentialTest::wald ? "wald" : "spicer";
}

inline SequentialTest parse_sequential_test(std::string_view name) {
  if (name == "wald") return SequentialTest::wald;
  if (name == "spicer") return SequentialTest::spicer;
  throw InvalidArgument("unknown sequential test '" + std::string(name) + "'");
}

/// A configuration whose success probability switches from `pi_before` to
/// `pi_after` after `change_point` steps.
struct SwitchingBernoulliSpec {
  double pi_before = 0.0;
  double pi_after = 1.0;
  int change_point = 0;
  int steps_S = 10;
  int trials = 10000;
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(pi_before >= 0.0 && pi_before <= 1.0, "pi_before must lie in [0, 1]");
    detail::require(pi_after >= 0.0 && pi_after <= 1.0, "pi_after must lie in [0, 1]");
    detail::require(steps_S >= 1, "steps_S must be positive");
    detail::require(change_point >= 0 && change_point <= steps_S,
                    "change_point must lie in [0, steps_S]");
    detail::require(trials >= 1, "trials must be positive");
  }
};

struct RateEstimate {
  double rate = 0.0;
  double std_error = 0.0;
  long long hits = 0;
  long long trials = 0;
};

inline RateEstimate make_rate(long long hits, long long trials) {
  RateEstimate e;
  e.hits = hits;
  e.trials = trials;
  e.rate = static_cast<double>(hits) / static_cast<double>(trials);
  e.std_error = std::sqrt(e.rate * (1.0 - e.rate) / static_cast<double>(trials));
  return e;
}

namespace detail {

// Returns true when the trace is flagged at some step. `flop` sees the
// running sum and the step index.
template <class Plan>
bool ever_dropped(const SwitchingBernoulliSpec& spec, const Plan& plan, Rng& rng) {
  int sum = 0;
  for (int s = 1; s <= spec.steps_S; ++s) {
    const double p = s <= spec.change_point ? spec.pi_before : spec.pi_after;
    sum += rng.bernoulli(p) ? 1 : 0;
    if (sum <= plan.lower_boundary(s)) return true;
  }
  return false;
}

}  // namespace detail

/// Fraction of switching traces the test ever drops. Trial i uses its own
/// generator seeded from (seed, i).
template <class Plan>
RateEstimate simulate_false_negatives(const SwitchingBernoulliSpec& spec, const Plan& plan) {
  spec.validate();
  long long drops = 0;
  for (int t = 0; t < spec.trials; ++t) {
    Rng rng(child_seed(spec.seed, static_cast<std::uint64_t>(t)));
    if (detail::ever_dropped(spec, plan, rng)) ++drops;
  }
  return make_rate(drops, spec.trials);
}

inline RateEstimate simulate_false_negatives(const SwitchingBernoulliSpec& spec,
                                             SequentialTest kind, double alpha_l,
                                             double beta_l) {
  if (kind == SequentialTest::wald)
    return simulate_false_negatives(spec, plan_wald_test(spec.steps_S, alpha_l, beta_l));
  return simulate_false_negatives(spec, plan_spicer_test(spec.steps_S, alpha_l, beta_l));
}

/// Monte Carlo of the worst case behind the error bound: zeros through the
/// integer safety zone, then Bernoulli(pi) steps.
inline RateEstimate simulate_worst_case_drops(const WaldTestPlan& plan, double pi, int trials,
                                              std::uint64_t seed) {
  SwitchingBernoulliSpec spec;
  spec.pi_before = 0.0;
  spec.pi_after = pi;
  spec.change_point = std::min(integer_safety_zone(plan), plan.steps_S);
  spec.steps_S = plan.steps_S;
  spec.trials = trials;
  spec.seed = seed;
  return simulate_false_negatives(spec, plan);
}

struct SpeedGainSpec {
  int steps_S = 10;
  int configs_K = 100;
  int winner_weight = 1;  // winners : losers
  int loser_weight = 1;
  double pi_winner_lo = 0.9, pi_winner_hi = 1.0;
  double pi_loser_lo = 0.0, pi_loser_hi = 0.1;
  int folds = 10;
  int complexity_m = 3;
  int resamples = 200;
  std::uint64_t seed = 1;
  SequentialTest test = SequentialTest::wald;
  double alpha_l = 0.01;
  double beta_l = 0.1;

  int winners() const {
    const double share = static_cast<double>(winner_weight) / (winner_weight + loser_weight);
    return static_cast<int>(std::lround(share * configs_K));
  }

  void validate() const {
    detail::require(steps_S >= 1, "steps_S must be positive");
    detail::require(configs_K >= 1, "configs_K must be positive");
    detail::require(winner_weight >= 0 && loser_weight >= 0 && winner_weight + loser_weight > 0,
                    "winner/loser weights must be non-negative and not both zero");
    detail::require(0.0 <= pi_winner_lo && pi_winner_lo <= pi_winner_hi && pi_winner_hi <= 1.0,
                    "winner probability range must lie in [0, 1]");
    detail::require(0.0 <= pi_loser_lo && pi_loser_lo <= pi_loser_hi && pi_loser_hi <= 1.0,
                    "loser probability range must lie in [0, 1]");
    detail::require(folds >= 2, "folds must be >= 2");
    detail::require(complexity_m >= 1, "complexity_m must be positive");
    detail::require(resamples >= 1, "resamples must be positive");
  }
};

/// Normalized cost of k-fold CV over K configurations: each fit sees
/// (folds-1)/folds of the data and costs that fraction to the m-th power.
inline double full_cv_cost(int configs_K, int folds, int m) {
  return static_cast<double>(folds) * configs_K *
         std::pow(static_cast<double>(folds - 1) / folds, m);
}

/// CVST cost for the given active count at each step s = 1..S.
inline double cvst_cost(const std::vector<int>& active_per_step, int m) {
  const double steps = static_cast<double>(active_per_step.size());
  double cost = 0.0;
  for (std::size_t s = 1; s <= active_per_step.size(); ++s)
    cost += active_per_step[s - 1] * std::pow(static_cast<double>(s) / (steps + 1.0), m);
  return cost;
}

namespace detail {

template <class Plan>
std::vector<double> speed_gain_resamples(const SpeedGainSpec& spec, const Plan& plan) {
  const int K = spec.configs_K;
  const int winners = spec.winners();
  const double full = full_cv_cost(K, spec.folds, spec.complexity_m);
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(spec.resamples));
  std::vector<double> pi(static_cast<std::size_t>(K));
  std::vector<int> sums(static_cast<std::size_t>(K));
  std::vector<bool> active(static_cast<std::size_t>(K));
  std::vector<int> active_per_step(static_cast<std::size_t>(spec.steps_S));
  for (int rs = 0; rs < spec.resamples; ++rs) {
    Rng rng(child_seed(spec.seed, static_cast<std::uint64_t>(rs)));
    for (int c = 0; c < K; ++c) {
      pi[c] = c < winners ? rng.uniform(spec.pi_winner_lo, spec.pi_winner_hi)
                          : rng.uniform(spec.pi_loser_lo, spec.pi_loser_hi);
      sums[c] = 0;
      active[c] = true;
    }
    int alive = K;
    for (int s = 1; s <= spec.steps_S; ++s) {
      active_per_step[s - 1] = alive;
      std::vector<int> flops;
      int best = -1;
      for (int c = 0; c < K; ++c) {
        if (!active[c]) continue;
        sums[c] += rng.bernoulli(pi[c]) ? 1 : 0;
        if (sums[c] <= plan.lower_boundary(s)) flops.push_back(c);
        if (best < 0 || sums[c] > sums[best]) best = c;
      }
      // Like the search loop, never eliminate every configuration.
      const bool wipe_out = static_cast<int>(flops.size()) == alive;
      for (int c : flops) {
        if (wipe_out && c == best) continue;
        active[c] = false;
        --alive;
      }
    }
    ratios.push_back(full / cvst_cost(active_per_step, spec.complexity_m));
  }
  return ratios;
}

}  // namespace detail

/// Per-resample speed-up full-CV cost / CVST cost under the power-law cost
/// model.
inline std::vector<double> simulate_speed_gain(const SpeedGainSpec& spec) {
  spec.validate();
  if (spec.test == SequentialTest::wald)
    return detail::speed_gain_resamples(spec,
                                        plan_wald_test(spec.steps_S, spec.alpha_l, spec.beta_l));
  return detail::speed_gain_resamples(spec,
                                      plan_spicer_test(spec.steps_S, spec.alpha_l, spec.beta_l));
}

inline double median(std::vector<double> values) {
  detail::require(!values.empty(), "median of an empty sample");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower =
      *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

// ---------------------------------------------------------------------------
// Budget planning

struct BudgetSpec {
  double budget_T = 0.0;
  double full_fit_time_t = 0.0;
  int configs_K = 1;
  double keep_fraction_r = 0.5;
  double safety_fraction_s_r = 0.3;
  int complexity_m = 3;

  void validate() const {
    detail::require(budget_T > 0.0 && std::isfinite(budget_T), "budget_T must be positive");
    detail::require(full_fit_time_t > 0.0 && std::isfinite(full_fit_time_t),
                    "full_fit_time_t must be positive");
    detail::require(configs_K >= 1, "configs_K must be positive");
    detail::require(keep_fraction_r > 0.0 && keep_fraction_r < 1.0,
                    "keep_fraction_r must lie in (0, 1)");
    detail::require(safety_fraction_s_r > 0.0 && safety_fraction_s_r < 1.0,
                    "safety_fraction_s_r must lie in (0, 1)");
    detail::require(complexity_m >= 1, "complexity_m must be positive");
  }
};

enum class BudgetConstraint { budget = 1, discriminant = 2, safety_fraction = 3 };

class BudgetError : public InfeasiblePlan {
 public:
  BudgetError(BudgetConstraint which, const std::string& what)
      : InfeasiblePlan(what), constraint_(which) {}
  BudgetConstraint constraint() const { return constraint_; }

 private:
  BudgetConstraint constraint_;
};

struct BudgetPlan {
  int steps_S = 0;
  double coef_a = 0.0;
  double coef_b = 0.0;
  double root = 0.0;        // real-valued larger root
  double bound_cost = 0.0;  // asymptotic cost bound at steps_S
  double exact_cost = 0.0;  // exact power-sum cost at steps_S
};

/// Exact modeled run time with S steps: all K configurations are trained
/// through the first floor(s_r * S) steps, a fraction r of them afterwards.
inline double budget_exact_cost(const BudgetSpec& spec, int steps_S) {
  if (steps_S <= 0) return 0.0;
  const double S = steps_S;
  const double tk = spec.full_fit_time_t * spec.configs_K;
  const int safe = static_cast<int>(std::floor(spec.safety_fraction_s_r * S + 1e-9));
  double head = 0.0, all = 0.0;
  for (int i = 1; i <= steps_S; ++i) {
    const double term = std::pow(i / S, spec.complexity_m);
    all += term;
    if (i <= safe) head += term;
  }
  return tk * (1.0 - spec.keep_fraction_r) * head + tk * spec.keep_fraction_r * all;
}

/// The same cost with each power sum replaced by its asymptotic upper bound.
inline double budget_bound_cost(const BudgetSpec& spec, double S) {
  const double m = spec.complexity_m, r = spec.keep_fraction_r, sr = spec.safety_fraction_s_r;
  const double tk = spec.full_fit_time_t * spec.configs_K;
  auto part = [&](double frac) {
    return std::pow(frac, m + 1) * S / (m + 1) + std::pow(frac, m) / 2 +
           m * std::pow(frac, m - 1) / (12 * S);
  };
  return tk * (1.0 - r) * part(sr) + tk * r * part(1.0);
}

/// Largest S whose asymptotic cost bound fits into the budget; the bound
/// reduces to S^2 + 2aS + b <= 0.
inline BudgetPlan plan_budget(const BudgetSpec& spec) {
  spec.validate();
  const double T = spec.budget_T, t = spec.full_fit_time_t, K = spec.configs_K;
  const double r = spec.keep_fraction_r, sr = spec.safety_fraction_s_r;
  const double m = spec.complexity_m;
  const double tk = t * K;

  const double floor_cost = tk * (1.0 - r) * std::pow(sr, m) + tk * r;
  if (2.0 * T < floor_cost)
    throw BudgetError(BudgetConstraint::budget,
                      "constraint (1) violated: budget T=" + std::to_string(T) +
                          " is below half the minimal cost " + std::to_string(floor_cost));

  const double head = (1.0 - r) * std::pow(sr, m + 1) + r;
  BudgetPlan plan;
  plan.coef_a = (m + 1) / 4.0 * (floor_cost - 2.0 * T) / (head * tk);
  plan.coef_b = m * (m + 1) / 12.0 * ((1.0 - r) * std::pow(sr, m - 1) + r) / head;
  const double disc = plan.coef_a * plan.coef_a - plan.coef_b;
  if (disc < 0.0)
    throw BudgetError(BudgetConstraint::discriminant,
                      "constraint (2) violated: a^2 < b, the budget admits no real step count");
  plan.root = -plan.coef_a + std::sqrt(disc);
  plan.steps_S = static_cast<int>(std::floor(plan.root));
  if (!(sr * plan.steps_S > m / (2.0 * std::numbers::pi)))
    throw BudgetError(BudgetConstraint::safety_fraction,
                      "constraint (3) violated: s_r*S = " + std::to_string(sr * plan.steps_S) +
                          " does not exceed m/(2 pi) = " +
                          std::to_string(m / (2.0 * std::numbers::pi)));
  plan.bound_cost = budget_bound_cost(spec, plan.steps_S);
  plan.exact_cost = budget_exact_cost(spec, plan.steps_S);
  return plan;
}

/// Largest beta_l (to 1e-6) whose plan still has a safety zone of at least
/// `target_safety`. The safety zone shrinks as beta_l grows.
inline double max_beta_for_safety(double alpha_l, int steps_S, double target_safety) {
  detail::require(alpha_l > 0.0 && alpha_l < 1.0, "alpha_l must lie in (0, 1)");
  detail::require(target_safety > 0.0 && target_safety < steps_S,
                  "target_safety must lie in (0, steps_S)");
  auto satisfied = [&](double beta) {
    try {
      return safety_zone(plan_wald_test(steps_S, alpha_l, beta)) >= target_safety;
    } catch (const InfeasiblePlan&) {
      return false;
    }
  };
  // Coarse log-spaced scan for a feasible starting point, then bisection on
  // the boundary above it.
  double lo = -1.0;
  for (int k = 0; k <= 240; ++k) {
    const double beta = std::pow(10.0, -12.0 + 12.0 * k / 240.0);
    if (beta >= 1.0) break;
    if (satisfied(beta)) lo = beta;
    else if (lo > 0.0) break;
  }
  if (lo < 0.0)
    throw InfeasiblePlan("no beta_l in (0, 1) gives a safety zone of " +
                         std::to_string(target_safety) + " with S=" + std::to_string(steps_S));
  double hi = lo;
  while (hi < 1.0 && satisfied(hi)) hi = std::min(1.0, hi * 1.5 + 1e-12);
  if (hi >= 1.0 && satisfied(std::nextafter(1.0, 0.0))) return std::nextafter(1.0, 0.0);
  while (hi - lo > 1e-8) {
    const double mid = 0.5 * (lo + hi);
    (satisfied(mid) ? lo : hi) = mid;
  }
  return lo;
}

/// (exact, bound) for the normalized power sum n^(1-m) * sum_{i<=n} i^m.
inline std::pair<double, double> power_sum_bound_check(int n, int m) {
  detail::require(n >= 1 && m >= 1, "power_sum_bound_check: n and m must be positive");
  double exact = 0.0;
  for (int i = 1; i <= n; ++i) exact += std::pow(static_cast<double>(i) / n, m) * n;
  const double dn = n;
  return {exact, dn * dn / (m + 1) + dn / 2 + m / 12.0};
}

}  // namespace cvst
