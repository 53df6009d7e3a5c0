#pragma once

// Fast cross-validation via sequential testing: grow the training subset
// step by step, turn per-point held-out losses into a binary top/flop trace,
// drop configurations whose trace falls into the Wald loser region, stop once
// the survivors' recent traces are indistinguishable, and pick the survivor
// with the best mean rank over the last steps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cvst/configuration.hpp"
#include "cvst/dataset.hpp"
#include "cvst/evaluation.hpp"
#include "cvst/learners.hpp"
#include "cvst/sequential.hpp"
#include "cvst/stat_tests.hpp"

namespace cvst {

enum class SimilarityMode { residual, outlier };

inline std::string_view to_string(SimilarityMode mode) {
  return mode == SimilarityMode::residual ? "residual" : "outlier";
}

inline SimilarityMode parse_similarity(std::string_view name) {
  if (name == "residual") return SimilarityMode::residual;
  if (name == "outlier") return SimilarityMode::outlier;
  throw InvalidArgument("unknown similarity mode '" + std::string(name) + "'");
}

/// Omnibus test used to split ranked configurations into top and flop.
enum class OmnibusTest { cochran_q, friedman };

struct CVSTParams {
  int steps_S = 10;
  double alpha = 0.05;
  double alpha_l = 0.01;
  double beta_l = 0.1;
  int w_stop = 3;
  SimilarityMode similarity_mode = SimilarityMode::residual;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    detail::require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    detail::require(w_stop >= 1 && w_stop < steps_S, "w_stop must satisfy 1 <= w_stop < steps");
  }
};

/// Indices (into the rows of `losses`) of the top configurations. Rows are
/// ranked by mean loss, best first; the omnibus test runs on the leading k
/// rows of `test_table` for k = 2..K at level alpha / (K - 1) and the first
/// significant k marks rows k..K as flops.
inline std::vector<std::size_t> top_configurations(const Eigen::MatrixXd& losses,
                                                   const Eigen::MatrixXd& test_table,
                                                   double alpha, OmnibusTest test) {
  const Eigen::Index K = losses.rows();
  detail::require(K >= 1, "top_configurations: no configurations");
  detail::require(test_table.rows() == K && test_table.cols() == losses.cols(),
                  "top_configurations: test table does not match the loss matrix");
  detail::require(losses.allFinite(), "top_configurations: missing entries in an active row");
  detail::require(alpha > 0.0 && alpha < 1.0, "top_configurations: alpha must lie in (0, 1)");

  std::vector<std::size_t> order(static_cast<std::size_t>(K));
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (K == 1) return order;

  const Eigen::VectorXd means = losses.rowwise().mean();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return means[a] < means[b]; });
  Eigen::MatrixXd sorted(K, test_table.cols());
  for (Eigen::Index i = 0; i < K; ++i) sorted.row(i) = test_table.row(order[i]);

  const double corrected = alpha / static_cast<double>(K - 1);
  Eigen::Index cut = K;
  auto scan = [&](auto& incremental) {
    incremental.push();
    for (Eigen::Index k = 2; k <= K; ++k) {
      incremental.push();
      if (incremental.test().p_value <= corrected) {
        cut = k - 1;
        return;
      }
    }
  };
  if (test == OmnibusTest::friedman) {
    IncrementalFriedman inc(sorted);
    scan(inc);
  } else {
    IncrementalCochran inc(sorted);
    scan(inc);
  }
  order.resize(static_cast<std::size_t>(cut));
  return order;
}

inline std::vector<std::size_t> top_configurations(const Eigen::MatrixXd& pointwise,
                                                   double alpha, Task task) {
  return top_configurations(pointwise, pointwise, alpha,
                            task == Task::classification ? OmnibusTest::cochran_q
                                                         : OmnibusTest::friedman);
}

/// Marks residuals outside the two-sided (1 - alpha) normal interval around
/// zero, with the spread estimated per row. Rows without spread stay 0.
inline Eigen::MatrixXd outlier_binarize(const Eigen::MatrixXd& residuals, double alpha) {
  detail::require(alpha > 0.0 && alpha < 1.0, "outlier_binarize: alpha must lie in (0, 1)");
  detail::require(residuals.allFinite(), "outlier_binarize: residuals must be finite");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(residuals.rows(), residuals.cols());
  const Eigen::Index r = residuals.cols();
  if (r < 2) return out;
  for (Eigen::Index c = 0; c < residuals.rows(); ++c) {
    const auto row = residuals.row(c).array();
    const double mean = row.mean();
    const double sd = std::sqrt((row - mean).square().sum() / static_cast<double>(r - 1));
    // Spread at rounding level (a constant row) counts as none.
    if (!(sd > 1e-12 * row.abs().maxCoeff())) continue;
    out.row(c) = (row.abs() > z * sd).cast<double>().matrix();
  }
  return out;
}

/// True (stop) when Cochran's Q finds no significant difference between the
/// survivors' traces over the last w_stop steps.
inline bool similar_performance(const Eigen::MatrixXd& trace_window, double alpha, int w_stop) {
  detail::require(trace_window.rows() >= 1, "similar_performance: empty window");
  detail::require(trace_window.cols() == w_stop,
                  "similar_performance: window must span exactly w_stop steps");
  if (trace_window.rows() < 2) return true;
  return cochran_q(trace_window).p_value > alpha;
}

/// Index of the active configuration with minimal mean rank over the last
/// min(w_stop, s) steps. Ranks are taken against every recorded entry of a
/// step (NaN marks "not computed"); ties go to the lowest index.
inline std::size_t select_winner(const Eigen::MatrixXd& per_step, const std::vector<bool>& active,
                                 int w_stop, int s) {
  detail::require(static_cast<Eigen::Index>(active.size()) == per_step.rows(),
                  "select_winner: activity flags do not match the performance matrix");
  detail::require(s >= 1 && s <= per_step.cols(), "select_winner: step out of range");
  detail::require(w_stop >= 1, "select_winner: w_stop must be positive");
  const Eigen::Index C = per_step.rows();
  std::vector<double> rank_sum(static_cast<std::size_t>(C), 0.0);
  std::vector<int> rank_count(static_cast<std::size_t>(C), 0);
  const int first = std::max(1, s - w_stop + 1);
  std::vector<double> column, ranks;
  std::vector<std::size_t> order, members;
  for (int step = first; step <= s; ++step) {
    column.clear();
    members.clear();
    for (Eigen::Index c = 0; c < C; ++c) {
      const double v = per_step(c, step - 1);
      if (std::isnan(v)) continue;
      column.push_back(v);
      members.push_back(static_cast<std::size_t>(c));
    }
    if (column.empty()) continue;
    detail::mid_ranks(column, ranks, order);
    for (std::size_t k = 0; k < members.size(); ++k) {
      rank_sum[members[k]] += ranks[k];
      rank_count[members[k]] += 1;
    }
  }
  std::optional<std::size_t> best;
  double best_rank = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < active.size(); ++c) {
    if (!active[c]) continue;
    const double mean_rank = rank_count[c] > 0 ? rank_sum[c] / rank_count[c]
                                               : std::numeric_limits<double>::infinity();
    if (!best || mean_rank < best_rank) {
      best = c;
      best_rank = mean_rank;
    }
  }
  if (!best) throw InvalidArgument("select_winner: no active configuration");
  return *best;
}

struct LearnerFailureRecord {
  int configuration_id = 0;
  int step = 0;
  std::string reason;
};

struct CVSTResult {
  Configuration winner;
  std::size_t winner_index = 0;
  std::optional<int> stopped_early_at;
  int steps_run = 0;
  std::vector<Eigen::Index> training_sizes;
  Eigen::MatrixXd per_step;                              // |C| x S, NaN = missing
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> trace;  // |C| x S
  std::vector<int> survivors_per_step;
  std::vector<int> dropped_at;  // step at which a configuration was dropped, 0 = never
  std::vector<bool> active;     // flags at termination
  std::vector<double> timing;   // wall-clock seconds per step
  std::vector<LearnerFailureRecord> failures;
  WaldTestPlan plan;
};

inline CVSTResult run_cvst(const Dataset& data, LearnerKind learner,
                           const std::vector<Configuration>& grid, const CVSTParams& params) {
  if (grid.empty()) throw InvalidArgument("run_cvst: empty grid");
  params.validate();
  validate(data);
  if (data.task != task_of(learner))
    throw InvalidArgument("run_cvst: learner " + std::string(to_string(learner)) +
                          " needs a " + std::string(to_string(task_of(learner))) + " dataset");
  const WaldTestPlan plan = plan_wald_test(params.steps_S, params.alpha_l, params.beta_l);
  const Eigen::Index N = data.size();
  const int S = params.steps_S;
  if (N < S + 1)
    throw DataError("run_cvst: " + std::to_string(N) + " data points are too few for " +
                    std::to_string(S) + " steps");
  const Eigen::Index delta = N / (S + 1);
  const std::size_t C = grid.size();

  CVSTResult result;
  result.plan = plan;
  result.per_step = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(C), S,
                                              std::numeric_limits<double>::quiet_NaN());
  result.trace = decltype(result.trace)::Zero(static_cast<Eigen::Index>(C), S);
  result.dropped_at.assign(C, 0);
  std::vector<bool> active(C, true);

  std::vector<LearnerSpec> specs;
  specs.reserve(C);
  for (const auto& c : grid) specs.push_back(LearnerSpec::from(c, learner));

  int s = 0;
  for (s = 1; s <= S; ++s) {
    const auto started = std::chrono::steady_clock::now();
    const Eigen::Index n = static_cast<Eigen::Index>(s) * delta;
    result.training_sizes.push_back(n);
    const Dataset train = data.head(n);
    const Dataset test = data.tail(N - n);

    std::vector<std::size_t> members;
    std::vector<LearnerSpec> member_specs;
    for (std::size_t c = 0; c < C; ++c) {
      if (!active[c]) continue;
      members.push_back(c);
      member_specs.push_back(specs[c]);
    }
    const auto outcomes = evaluate_split(train, test, member_specs, params.threads);

    std::vector<std::size_t> ok;  // positions into members
    for (std::size_t m = 0; m < members.size(); ++m) {
      const std::size_t c = members[m];
      if (!outcomes[m].ok) {
        active[c] = false;
        result.dropped_at[c] = s;
        result.failures.push_back({grid[c].id, s, outcomes[m].failure});
        continue;
      }
      result.per_step(static_cast<Eigen::Index>(c), s - 1) = outcomes[m].mean_loss;
      ok.push_back(m);
    }
    if (ok.empty())
      throw LearnerFailure("run_cvst: every configuration failed at step " + std::to_string(s));

    const Eigen::Index K = static_cast<Eigen::Index>(ok.size());
    Eigen::MatrixXd losses(K, N - n);
    for (Eigen::Index k = 0; k < K; ++k) losses.row(k) = outcomes[ok[k]].losses.transpose();

    std::vector<std::size_t> top;
    if (data.task == Task::classification) {
      top = top_configurations(losses, losses, params.alpha, OmnibusTest::cochran_q);
    } else if (params.similarity_mode == SimilarityMode::residual) {
      top = top_configurations(losses, losses, params.alpha, OmnibusTest::friedman);
    } else {
      Eigen::MatrixXd residuals(K, N - n);
      for (Eigen::Index k = 0; k < K; ++k)
        residuals.row(k) = outcomes[ok[k]].residuals.transpose();
      top = top_configurations(losses, outlier_binarize(residuals, params.alpha), params.alpha,
                               OmnibusTest::cochran_q);
    }
    for (std::size_t t : top) result.trace(static_cast<Eigen::Index>(members[ok[t]]), s - 1) = 1;

    // Sequential loser test on every surviving trace.
    std::vector<std::size_t> flops;
    std::vector<TraceBit> bits(static_cast<std::size_t>(s));
    for (std::size_t m : ok) {
      const std::size_t c = members[m];
      for (int i = 0; i < s; ++i)
        bits[static_cast<std::size_t>(i)] = result.trace(static_cast<Eigen::Index>(c), i);
      if (is_flop_configuration(bits, s, plan)) flops.push_back(c);
    }
    if (flops.size() == ok.size()) {
      // Never eliminate everything: keep this step's best-mean configuration.
      const std::size_t keep = members[ok[top.front()]];
      flops.erase(std::find(flops.begin(), flops.end(), keep));
    }
    for (std::size_t c : flops) {
      active[c] = false;
      result.dropped_at[c] = s;
    }
    result.survivors_per_step.push_back(
        static_cast<int>(std::count(active.begin(), active.end(), true)));

    bool stop = false;
    if (s >= params.w_stop) {
      std::vector<Eigen::Index> survivors;
      for (std::size_t c = 0; c < C; ++c)
        if (active[c]) survivors.push_back(static_cast<Eigen::Index>(c));
      Eigen::MatrixXd window(static_cast<Eigen::Index>(survivors.size()), params.w_stop);
      for (std::size_t r = 0; r < survivors.size(); ++r)
        for (int w = 0; w < params.w_stop; ++w)
          window(static_cast<Eigen::Index>(r), w) =
              result.trace(survivors[r], s - params.w_stop + w);
      stop = similar_performance(window, params.alpha, params.w_stop);
    }
    result.timing.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
    if (stop) {
      if (s < S) result.stopped_early_at = s;
      break;
    }
  }
  result.steps_run = std::min(s, S);
  result.winner_index = select_winner(result.per_step, active, params.w_stop, result.steps_run);
  result.winner = grid[result.winner_index];
  result.active = active;
  return result;
}

}  // namespace cvst
