#pragma once

// Gaussian-kernel ridge regression (KRR) and penalized kernel logistic
// regression (KLR), both with the regularizer scaled by the training-set size
// so one (sigma, lambda) pair describes the same hypothesis class on every
// subset size.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#if defined(__SSE2__) || defined(_M_X64)
#include <xmmintrin.h>
#define CVST_HAVE_MXCSR 1
#endif

#include "cvst/configuration.hpp"
#include "cvst/dataset.hpp"
#include "cvst/error.hpp"

namespace cvst {

enum class LearnerKind { krr, klr };

inline std::string_view to_string(LearnerKind kind) {
  return kind == LearnerKind::krr ? "krr" : "klr";
}

inline LearnerKind parse_learner(std::string_view name) {
  if (name == "krr") return LearnerKind::krr;
  if (name == "klr") return LearnerKind::klr;
  throw InvalidArgument("unknown learner '" + std::string(name) + "'");
}

inline Task task_of(LearnerKind kind) {
  return kind == LearnerKind::krr ? Task::regression : Task::classification;
}

struct LearnerSpec {
  LearnerKind kind = LearnerKind::krr;
  double log10_sigma = 0.0;
  // Per-sample regularization: the solver uses n * lambda on n points.
  double log10_lambda = -3.0;
  // Exact zero regularization; log10_lambda is ignored when set.
  bool unregularized = false;
  double klr_tolerance = 1e-6;
  int klr_max_iterations = 100;

  double sigma() const { return std::pow(10.0, log10_sigma); }
  double lambda() const { return unregularized ? 0.0 : std::pow(10.0, log10_lambda); }

  // Reads log10_sigma plus either log10_lambda or a plain lambda (which
  // may be exactly 0).
  static LearnerSpec from(const Configuration& c, LearnerKind kind) {
    LearnerSpec spec;
    spec.kind = kind;
    spec.log10_sigma = c.param("log10_sigma");
    if (c.params.count("log10_lambda") != 0) {
      spec.log10_lambda = c.param("log10_lambda");
    } else {
      const double lambda = c.param("lambda");
      detail::require(lambda >= 0.0, "configuration " + std::to_string(c.id) +
                                         ": lambda must be >= 0");
      spec.unregularized = lambda == 0.0;
      spec.log10_lambda = lambda > 0.0 ? std::log10(lambda) : 0.0;
    }
    return spec;
  }
};

struct FittedModel {
  LearnerKind kind = LearnerKind::krr;
  double sigma = 1.0;
  Eigen::MatrixXd support;
  Eigen::VectorXd coef;
  double intercept = 0.0;
  int iterations = 0;
  bool converged = true;
  // KLR trained on a single class: constant probability, coef = 0.
  bool single_class = false;
  double jitter = 0.0;
  std::vector<double> objective_history;
};

inline double gaussian_kernel(const Eigen::Ref<const Eigen::VectorXd>& a,
                              const Eigen::Ref<const Eigen::VectorXd>& b, double sigma) {
  detail::require(a.size() == b.size(), "gaussian_kernel: dimension mismatch");
  detail::require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
  return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
}

namespace detail {

// Kernel values below exp(-300) are stored as exact zeros. They are far
// below double resolution next to the unit diagonal, and keeping them lets
// subnormal arithmetic slow the factorization by an order of magnitude.
inline constexpr double kKernelExponentCutoff = 300.0;

inline double kernel_value(double exponent) {
  return exponent < -kKernelExponentCutoff ? 0.0 : std::exp(exponent);
}

// Flushes subnormal results and operands to zero for the current thread
// while alive. Cholesky fill-in on narrow kernels otherwise decays into the
// subnormal range, which is an order of magnitude slower on x86.
class FlushSubnormals {
 public:
#ifdef CVST_HAVE_MXCSR
  FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushSubnormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
 public:
  FlushSubnormals(const FlushSubnormals&) = delete;
  FlushSubnormals& operator=(const FlushSubnormals&) = delete;
};

}  // namespace detail

/// Kernel matrix between the rows of `a` and the rows of `b`.
inline Eigen::MatrixXd cross_gram(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                  double sigma) {
  detail::require(a.cols() == b.cols(), "cross_gram: dimension mismatch");
  detail::require(sigma > 0.0, "cross_gram: sigma must be positive");
  const double scale = -1.0 / (2.0 * sigma * sigma);
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out(i, j) = detail::kernel_value(scale * (a.row(i) - b.row(j)).squaredNorm());
    }
  }
  return out;
}

inline Eigen::MatrixXd gram(const Eigen::MatrixXd& x, double sigma) {
  detail::require(sigma > 0.0, "gram: sigma must be positive");
  const double scale = -1.0 / (2.0 * sigma * sigma);
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = detail::kernel_value(scale * (x.row(i) - x.row(j)).squaredNorm());
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

inline constexpr std::array<double, 3> kJitterLadder{1e-10, 1e-8, 1e-6};

/// Lower Cholesky factor of a symmetric positive definite matrix, stored
/// densely and computed in place.
class CholeskyFactor {
 public:
  Eigen::Index size() const { return lower_.rows(); }
  const Eigen::MatrixXd& matrix() const { return lower_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd x = lower_.triangularView<Eigen::Lower>().solve(rhs);
    lower_.triangularView<Eigen::Lower>().adjoint().solveInPlace(x);
    return x;
  }

  // Factors `a + jitter * I`; false when the factor is not numerically
  // positive definite.
  bool factor(const Eigen::MatrixXd& a, double jitter) {
    lower_ = a;
    if (jitter != 0.0) lower_.diagonal().array() += jitter;
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(lower_);
    if (llt.info() != Eigen::Success) return false;
    const double scale = std::max(a.diagonal().maxCoeff(), std::numeric_limits<double>::min());
    const Eigen::VectorXd pivots = lower_.diagonal();
    return pivots.allFinite() && pivots.minCoeff() * pivots.minCoeff() > 1e-14 * scale;
  }

 private:
  Eigen::MatrixXd lower_;
};

/// Cholesky factorization of a symmetric PSD matrix, adding escalating
/// diagonal jitter until the factor is numerically positive definite.
/// Returns false when every rung of the ladder fails.
inline bool jittered_cholesky(const Eigen::MatrixXd& a, CholeskyFactor& chol,
                              double& jitter_used) {
  jitter_used = 0.0;
  if (chol.factor(a, 0.0)) return true;
  for (double j : kJitterLadder) {
    if (chol.factor(a, j)) {
      jitter_used = j;
      return true;
    }
  }
  return false;
}

namespace detail {

// Solves a * x = rhs through jittered Cholesky. When jitter was needed the
// solution must still satisfy the unshifted system to a relative 1e-6.
inline Eigen::VectorXd solve_regularized(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs,
                                         double& jitter_used, const char* who) {
  FlushSubnormals guard;
  CholeskyFactor llt;
  if (!jittered_cholesky(a, llt, jitter_used))
    throw LearnerFailure(std::string(who) + ": system is not positive definite");
  Eigen::VectorXd x = llt.solve(rhs);
  if (!x.allFinite()) throw LearnerFailure(std::string(who) + ": non-finite solution");
  if (jitter_used > 0.0) {
    const double residual = (a * x - rhs).norm();
    if (residual > 1e-6 * std::max(rhs.norm(), 1.0))
      throw LearnerFailure(std::string(who) + ": singular system (residual " +
                           std::to_string(residual) + ")");
  }
  return x;
}

inline double softplus(double f) {
  return f > 0.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
}

inline double logistic(double f) {
  if (f >= 0.0) return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

}  // namespace detail

/// KRR on a precomputed Gram matrix of the training inputs.
inline FittedModel fit_krr(const Dataset& train, const LearnerSpec& spec,
                           const Eigen::MatrixXd& train_gram) {
  detail::require(train.size() >= 1, "fit_krr: empty training set");
  detail::require(train_gram.rows() == train.size() && train_gram.cols() == train.size(),
                  "fit_krr: Gram matrix does not match the training set");
  const double n = static_cast<double>(train.size());
  Eigen::MatrixXd system = train_gram;
  system.diagonal().array() += n * spec.lambda();
  FittedModel model;
  model.kind = LearnerKind::krr;
  model.sigma = spec.sigma();
  model.support = train.features;
  model.coef = detail::solve_regularized(system, train.targets, model.jitter, "fit_krr");
  return model;
}

inline FittedModel fit_krr(const Dataset& train, const LearnerSpec& spec) {
  detail::require(train.size() >= 1, "fit_krr: empty training set");
  return fit_krr(train, spec, gram(train.features, spec.sigma()));
}

/// KLR by iteratively reweighted least squares with step halving; the
/// penalty is (n lambda / 2) coef' G coef and the intercept is unpenalized.
inline FittedModel fit_klr(const Dataset& train, const LearnerSpec& spec,
                           const Eigen::MatrixXd& train_gram) {
  const Eigen::Index n = train.size();
  detail::require(n >= 1, "fit_klr: empty training set");
  detail::require(train_gram.rows() == n && train_gram.cols() == n,
                  "fit_klr: Gram matrix does not match the training set");
  const Eigen::VectorXd& y = train.targets;
  FittedModel model;
  model.kind = LearnerKind::klr;
  model.sigma = spec.sigma();
  model.support = train.features;
  model.coef = Eigen::VectorXd::Zero(n);

  const double positives = y.sum();
  if (positives == 0.0 || positives == static_cast<double>(n)) {
    const double p = (positives + 0.5) / (static_cast<double>(n) + 1.0);
    model.intercept = std::log(p / (1.0 - p));
    model.single_class = true;
    return model;
  }

  detail::FlushSubnormals guard;
  const double reg = static_cast<double>(n) * spec.lambda();
  auto objective = [&](const Eigen::VectorXd& c, double b) {
    const Eigen::VectorXd gc = train_gram * c;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double f = gc[i] + b;
      loss += y[i] > 0.5 ? detail::softplus(-f) : detail::softplus(f);
    }
    return loss + 0.5 * reg * c.dot(gc);
  };

  Eigen::VectorXd c = model.coef;
  double b = std::log(positives / (static_cast<double>(n) - positives));
  double current = objective(c, b);
  model.objective_history.push_back(current);
  model.converged = false;

  for (int iter = 1; iter <= spec.klr_max_iterations; ++iter) {
    const Eigen::VectorXd f = (train_gram * c).array() + b;
    Eigen::VectorXd p(n), root_w(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = detail::logistic(f[i]);
      const double w = std::max(p[i] * (1.0 - p[i]), 1e-12);
      root_w[i] = std::sqrt(w);
      z[i] = f[i] + (y[i] - p[i]) / w;
    }
    if (!z.allFinite()) throw LearnerFailure("fit_klr: non-finite working response");

    Eigen::MatrixXd system = root_w.asDiagonal() * train_gram * root_w.asDiagonal();
    system.diagonal().array() += reg;
    CholeskyFactor llt;
    double jitter = 0.0;
    if (!jittered_cholesky(system, llt, jitter))
      throw LearnerFailure("fit_klr: weighted system is not positive definite");
    model.jitter = std::max(model.jitter, jitter);
    const Eigen::VectorXd u = llt.solve(root_w.cwiseProduct(z).eval());
    const Eigen::VectorXd v = llt.solve(root_w);
    const double denom = root_w.dot(v);
    if (!(std::abs(denom) > 0.0) || !u.allFinite() || !v.allFinite())
      throw LearnerFailure("fit_klr: degenerate weighted system");
    const double b_new = root_w.dot(u) / denom;
    const Eigen::VectorXd c_new = root_w.cwiseProduct(u - b_new * v);

    const Eigen::VectorXd dc = c_new - c;
    const double db = b_new - b;
    double step = 1.0;
    double candidate = objective(c + dc, b + db);
    while (!(candidate <= current) && step > 1e-10) {
      step *= 0.5;
      candidate = objective(c + step * dc, b + step * db);
    }
    if (!std::isfinite(candidate)) throw LearnerFailure("fit_klr: objective diverged");
    model.iterations = iter;
    if (!(candidate <= current)) {
      // No descent possible along the Newton direction: at the optimum.
      model.converged = true;
      break;
    }
    c += step * dc;
    b += step * db;
    current = candidate;
    model.objective_history.push_back(current);
    const double change = std::max(step * dc.cwiseAbs().maxCoeff(), std::abs(step * db));
    if (change < spec.klr_tolerance) {
      model.converged = true;
      break;
    }
  }
  if (!c.allFinite() || !std::isfinite(b)) throw LearnerFailure("fit_klr: coefficients diverged");
  model.coef = c;
  model.intercept = b;
  return model;
}

inline FittedModel fit_klr(const Dataset& train, const LearnerSpec& spec) {
  detail::require(train.size() >= 1, "fit_klr: empty training set");
  return fit_klr(train, spec, gram(train.features, spec.sigma()));
}

inline FittedModel fit(const Dataset& train, const LearnerSpec& spec,
                       const Eigen::MatrixXd& train_gram) {
  return spec.kind == LearnerKind::krr ? fit_krr(train, spec, train_gram)
                                       : fit_klr(train, spec, train_gram);
}

/// Decision values from a precomputed test-by-support kernel matrix: KRR
/// predictions or KLR probabilities.
inline Eigen::VectorXd predict_from_kernel(const FittedModel& model,
                                           const Eigen::MatrixXd& test_by_support) {
  detail::require(test_by_support.cols() == model.coef.size(),
                  "predict: kernel matrix does not match the model");
  Eigen::VectorXd out = test_by_support * model.coef;
  if (model.kind == LearnerKind::klr) {
    for (Eigen::Index i = 0; i < out.size(); ++i)
      out[i] = detail::logistic(out[i] + model.intercept);
  }
  return out;
}

inline Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& points) {
  if (points.rows() == 0) return Eigen::VectorXd(0);
  detail::require(points.cols() == model.support.cols(), "predict: dimension mismatch");
  return predict_from_kernel(model, cross_gram(points, model.support, model.sigma));
}

inline Eigen::VectorXd threshold_labels(const Eigen::VectorXd& probabilities) {
  return (probabilities.array() >= 0.5).cast<double>();
}

/// KLR class labels (probability >= 0.5 maps to 1).
inline Eigen::VectorXd predict_labels(const FittedModel& model, const Eigen::MatrixXd& points) {
  return threshold_labels(predict(model, points));
}

}  // namespace cvst
