#pragma once

// Distribution-free omnibus tests over a K x r outcome table (rows are
// configurations, columns are data points) and the chi-square tail they need.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvst/error.hpp"

namespace cvst {

using OutcomeMatrix = Eigen::MatrixXd;

struct TestResult {
  double statistic = 0.0;
  int degrees_of_freedom = 1;
  double p_value = 1.0;
  // 0/0 statistic resolved as "no effect" (T = 0, p = 1).
  bool degenerate = false;
  // K * r; the chi-square approximation is considered adequate from 24 on.
  std::size_t table_entries = 0;

  bool chi_square_adequate() const { return table_entries >= 24; }
};

namespace detail {

inline constexpr double kGammaEps = 1e-16;
inline constexpr int kGammaMaxIter = 100000;

// Regularized lower incomplete gamma P(a, x) by its power series; x < a + 1.
inline double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < kGammaMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kGammaEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by modified Lentz continued
// fraction; x >= a + 1.
inline double gamma_q_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kGammaEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kGammaMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kGammaEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Upper tail P(X >= x) of a chi-square variable with `df` degrees of freedom.
inline double chi_square_sf(double x, int df) {
  detail::require(df >= 1, "chi_square_sf: df must be >= 1");
  detail::require(x >= 0.0 && !std::isnan(x), "chi_square_sf: x must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  const double a = 0.5 * df;
  const double z = 0.5 * x;
  double q = (z < a + 1.0) ? 1.0 - detail::gamma_p_series(a, z)
                           : detail::gamma_q_fraction(a, z);
  return std::clamp(q, 0.0, 1.0);
}

/// Standard normal quantile (Acklam's rational approximation, one Halley
/// refinement step against erfc).
inline double normal_quantile(double p) {
  detail::require(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Cochran's Q over a binary K x r table.
inline TestResult cochran_q(const OutcomeMatrix& m) {
  const auto K = m.rows();
  const auto r = m.cols();
  detail::require(K >= 2, "cochran_q: need at least two configurations");
  detail::require(r >= 1, "cochran_q: need at least one data point");
  for (Eigen::Index j = 0; j < r; ++j)
    for (Eigen::Index i = 0; i < K; ++i)
      detail::require(m(i, j) == 0.0 || m(i, j) == 1.0,
                      "cochran_q: entries must be 0 or 1");

  TestResult out;
  out.degrees_of_freedom = static_cast<int>(K - 1);
  out.table_entries = static_cast<std::size_t>(K * r);

  const Eigen::VectorXd row_totals = m.rowwise().sum();
  const Eigen::RowVectorXd col_totals = m.colwise().sum();
  const double grand = row_totals.sum();
  const double denom =
      (col_totals.array() * (static_cast<double>(K) - col_totals.array())).sum();
  if (denom == 0.0) {
    out.degenerate = true;
    return out;
  }
  const double spread = (row_totals.array() - grand / K).square().sum();
  out.statistic = static_cast<double>(K) * (K - 1) * spread / denom;
  out.p_value = chi_square_sf(out.statistic, out.degrees_of_freedom);
  return out;
}

namespace detail {

// Mid-ranks (1-based) of `values`; returns the number of tied pairs.
inline std::size_t mid_ranks(const std::vector<double>& values,
                             std::vector<double>& ranks,
                             std::vector<std::size_t>& order) {
  const std::size_t n = values.size();
  order.resize(n);
  ranks.resize(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::size_t tied_pairs = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    const std::size_t t = j - i;
    tied_pairs += t * (t - 1) / 2;
    i = j;
  }
  return tied_pairs;
}

inline TestResult friedman_from_ranks(const Eigen::VectorXd& rank_sums,
                                      double rank_square_sum, bool ties,
                                      Eigen::Index K, Eigen::Index r) {
  TestResult out;
  out.degrees_of_freedom = static_cast<int>(K - 1);
  out.table_entries = static_cast<std::size_t>(K * r);
  const double Kd = static_cast<double>(K);
  const double rd = static_cast<double>(r);
  const double centre = rd * (Kd + 1.0) / 2.0;
  const double spread = (rank_sums.array() - centre).square().sum();
  if (!ties) {
    out.statistic = 12.0 / (rd * Kd * (Kd + 1.0)) * spread;
  } else {
    const double denom = rank_square_sum - rd * Kd * (Kd + 1.0) * (Kd + 1.0) / 4.0;
    // Ranks are multiples of 1/2, so a non-zero denominator is >= 1/4.
    if (denom < 0.125) {
      out.degenerate = true;
      return out;
    }
    out.statistic = (Kd - 1.0) * spread / denom;
  }
  out.p_value = chi_square_sf(std::max(out.statistic, 0.0), out.degrees_of_freedom);
  return out;
}

}  // namespace detail

/// Friedman rank test over a K x r table, ranking within each column.
inline TestResult friedman(const OutcomeMatrix& m) {
  const auto K = m.rows();
  const auto r = m.cols();
  detail::require(K >= 2, "friedman: need at least two configurations");
  detail::require(r >= 1, "friedman: need at least one data point");

  Eigen::VectorXd rank_sums = Eigen::VectorXd::Zero(K);
  double rank_square_sum = 0.0;
  bool ties = false;
  std::vector<double> column(static_cast<std::size_t>(K));
  std::vector<double> ranks;
  std::vector<std::size_t> order;
  for (Eigen::Index j = 0; j < r; ++j) {
    for (Eigen::Index i = 0; i < K; ++i) column[static_cast<std::size_t>(i)] = m(i, j);
    if (detail::mid_ranks(column, ranks, order) > 0) ties = true;
    for (Eigen::Index i = 0; i < K; ++i) {
      const double rk = ranks[static_cast<std::size_t>(i)];
      rank_sums[i] += rk;
      rank_square_sum += rk * rk;
    }
  }
  return detail::friedman_from_ranks(rank_sums, rank_square_sum, ties, K, r);
}

/// Friedman test on the leading k rows of a table for k = 2, 3, ..., inserting
/// one row at a time and updating within-column ranks in O(k) per column
/// instead of re-sorting. Ranks are half-integers, so the running sums are
/// exact and agree with friedman() on the corresponding top-k submatrix.
class IncrementalFriedman {
 public:
  explicit IncrementalFriedman(const OutcomeMatrix& rows) : rows_(rows) {
    detail::require(rows.cols() >= 1, "IncrementalFriedman: need at least one data point");
    ranks_ = Eigen::MatrixXd::Zero(rows.rows(), rows.cols());
    rank_sums_ = Eigen::VectorXd::Zero(rows.rows());
  }

  Eigen::Index size() const { return k_; }
  Eigen::Index capacity() const { return rows_.rows(); }

  // Inserts the next row of the table.
  void push() {
    detail::require(k_ < rows_.rows(), "IncrementalFriedman: no rows left");
    const Eigen::Index k = k_;
    for (Eigen::Index j = 0; j < rows_.cols(); ++j) {
      const double v = rows_(k, j);
      double below = 0.0;
      double equal = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        const double x = rows_(i, j);
        double& rk = ranks_(i, j);
        const double old = rk;
        if (x > v) {
          rk += 1.0;
        } else if (x == v) {
          rk += 0.5;
          equal += 1.0;
        } else {
          below += 1.0;
          continue;
        }
        rank_sums_[i] += rk - old;
        rank_square_sum_ += rk * rk - old * old;
      }
      const double own = below + 1.0 + 0.5 * equal;
      ranks_(k, j) = own;
      rank_sums_[k] += own;
      rank_square_sum_ += own * own;
      tied_pairs_ += static_cast<std::size_t>(equal);
    }
    ++k_;
  }

  // Test over all rows inserted so far; needs at least two.
  TestResult test() const {
    detail::require(k_ >= 2, "IncrementalFriedman: need at least two rows for a test");
    return detail::friedman_from_ranks(rank_sums_.head(k_), rank_square_sum_,
                                       tied_pairs_ > 0, k_, rows_.cols());
  }

 private:
  const OutcomeMatrix& rows_;
  Eigen::MatrixXd ranks_;
  Eigen::VectorXd rank_sums_;
  double rank_square_sum_ = 0.0;
  std::size_t tied_pairs_ = 0;
  Eigen::Index k_ = 0;
};

/// Cochran's Q on the leading k rows of a binary table, one row at a time.
class IncrementalCochran {
 public:
  explicit IncrementalCochran(const OutcomeMatrix& rows)
      : rows_(rows), col_totals_(Eigen::RowVectorXd::Zero(rows.cols())) {
    detail::require(rows.cols() >= 1, "IncrementalCochran: need at least one data point");
    for (Eigen::Index j = 0; j < rows.cols(); ++j)
      for (Eigen::Index i = 0; i < rows.rows(); ++i)
        detail::require(rows(i, j) == 0.0 || rows(i, j) == 1.0,
                        "cochran_q: entries must be 0 or 1");
    row_totals_ = rows.rowwise().sum();
  }

  Eigen::Index size() const { return k_; }

  void push() {
    detail::require(k_ < rows_.rows(), "IncrementalCochran: no rows left");
    col_totals_ += rows_.row(k_);
    ++k_;
  }

  TestResult test() const {
    detail::require(k_ >= 2, "IncrementalCochran: need at least two rows for a test");
    TestResult out;
    out.degrees_of_freedom = static_cast<int>(k_ - 1);
    out.table_entries = static_cast<std::size_t>(k_ * rows_.cols());
    const double K = static_cast<double>(k_);
    const double denom = (col_totals_.array() * (K - col_totals_.array())).sum();
    if (denom == 0.0) {
      out.degenerate = true;
      return out;
    }
    const auto totals = row_totals_.head(k_).array();
    const double grand = totals.sum();
    const double spread = (totals - grand / K).square().sum();
    out.statistic = K * (K - 1.0) * spread / denom;
    out.p_value = chi_square_sf(out.statistic, out.degrees_of_freedom);
    return out;
  }

 private:
  const OutcomeMatrix& rows_;
  Eigen::VectorXd row_totals_;
  Eigen::RowVectorXd col_totals_;
  Eigen::Index k_ = 0;
};

}  // namespace cvst
