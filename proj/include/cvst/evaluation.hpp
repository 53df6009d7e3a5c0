#pragma once

// Train/evaluate plumbing shared by the CVST loop and full cross-validation:
// standardization with training statistics, one Gram matrix per distinct
// sigma, pointwise losses on held-out data.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvst/configuration.hpp"
#include "cvst/dataset.hpp"
#include "cvst/learners.hpp"
#include "cvst/parallel.hpp"
#include "cvst/random.hpp"

namespace cvst {

/// Zero-mean/unit-variance scaling fitted on training data. Regression
/// targets are scaled too; classification targets are left as 0/1.
struct Standardizer {
  Eigen::RowVectorXd feature_mean;
  Eigen::RowVectorXd feature_scale;
  double target_mean = 0.0;
  double target_scale = 1.0;

  static Standardizer fit(const Dataset& train) {
    Standardizer s;
    const double n = static_cast<double>(train.size());
    s.feature_mean = train.features.colwise().mean();
    s.feature_scale =
        ((train.features.rowwise() - s.feature_mean).array().square().colwise().sum() / n)
            .sqrt()
            .matrix();
    for (Eigen::Index j = 0; j < s.feature_scale.size(); ++j)
      if (!(s.feature_scale[j] > 0.0)) s.feature_scale[j] = 1.0;
    if (train.task == Task::regression) {
      s.target_mean = train.targets.mean();
      const double var = (train.targets.array() - s.target_mean).square().sum() / n;
      s.target_scale = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd features(const Eigen::MatrixXd& x) const {
    return ((x.rowwise() - feature_mean).array().rowwise() / feature_scale.array()).matrix();
  }
  Eigen::VectorXd targets(const Eigen::VectorXd& y) const {
    return ((y.array() - target_mean) / target_scale).matrix();
  }
  Eigen::VectorXd restore(const Eigen::VectorXd& y) const {
    return (y.array() * target_scale + target_mean).matrix();
  }
};

/// A learner fitted on standardized data; predicts on the original scale.
struct TrainedModel {
  Standardizer scaler;
  FittedModel model;

  Eigen::VectorXd predict(const Eigen::MatrixXd& points) const {
    const Eigen::VectorXd raw = cvst::predict(model, scaler.features(points));
    return model.kind == LearnerKind::krr ? scaler.restore(raw) : raw;
  }
};

inline TrainedModel train_model(const Dataset& train, const LearnerSpec& spec) {
  validate(train);
  TrainedModel out;
  out.scaler = Standardizer::fit(train);
  Dataset scaled{out.scaler.features(train.features), out.scaler.targets(train.targets),
                 train.task};
  out.model = fit(scaled, spec, gram(scaled.features, spec.sigma()));
  return out;
}

/// Pointwise loss: squared residual for regression, 0/1 error for
/// classification (predictions are probabilities there).
inline Eigen::VectorXd pointwise_loss(Task task, const Eigen::VectorXd& predictions,
                                      const Eigen::VectorXd& targets) {
  if (task == Task::regression) return (predictions - targets).array().square().matrix();
  return (threshold_labels(predictions).array() != targets.array()).cast<double>().matrix();
}

struct SplitOutcome {
  bool ok = false;
  std::string failure;
  Eigen::VectorXd predictions;  // original target scale / probabilities
  Eigen::VectorXd losses;
  Eigen::VectorXd residuals;    // prediction - target (regression)
  double mean_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Fits every requested spec on `train` and evaluates it on `test`. Specs
/// sharing a sigma share one Gram matrix; groups run on up to `threads`
/// workers and results land in input order.
inline std::vector<SplitOutcome> evaluate_split(const Dataset& train, const Dataset& test,
                                                const std::vector<LearnerSpec>& specs,
                                                unsigned threads) {
  const Standardizer scaler = Standardizer::fit(train);
  const Dataset scaled{scaler.features(train.features), scaler.targets(train.targets),
                       train.task};
  const Eigen::MatrixXd test_x = scaler.features(test.features);

  std::map<double, std::vector<std::size_t>> by_sigma;
  for (std::size_t i = 0; i < specs.size(); ++i) by_sigma[specs[i].log10_sigma].push_back(i);
  std::vector<const std::vector<std::size_t>*> groups;
  std::vector<double> sigmas;
  for (const auto& [log_sigma, members] : by_sigma) {
    groups.push_back(&members);
    sigmas.push_back(std::pow(10.0, log_sigma));
  }

  std::vector<SplitOutcome> out(specs.size());
  parallel_for(groups.size(), threads, [&](std::size_t g) {
    const Eigen::MatrixXd train_gram = gram(scaled.features, sigmas[g]);
    const Eigen::MatrixXd test_gram = cross_gram(test_x, scaled.features, sigmas[g]);
    for (std::size_t idx : *groups[g]) {
      SplitOutcome& o = out[idx];
      try {
        const FittedModel model = fit(scaled, specs[idx], train_gram);
        Eigen::VectorXd pred = predict_from_kernel(model, test_gram);
        if (model.kind == LearnerKind::krr) pred = scaler.restore(pred);
        if (!pred.allFinite()) throw LearnerFailure("non-finite predictions");
        o.predictions = std::move(pred);
        o.losses = pointwise_loss(test.task, o.predictions, test.targets);
        o.residuals = o.predictions - test.targets;
        o.mean_loss = o.losses.mean();
        o.ok = true;
      } catch (const LearnerFailure& e) {
        o.failure = e.what();
      }
    }
  });
  return out;
}

struct FullCvResult {
  std::vector<double> mean_loss;  // NaN when the learner failed on some fold
  std::size_t winner = 0;         // index into the grid
  int folds = 0;
};

/// k-fold cross-validation over the whole grid: one seeded shuffle, then
/// contiguous folds. Mean loss pools all held-out points.
inline FullCvResult full_cv(const Dataset& data, const std::vector<Configuration>& grid,
                            LearnerKind kind, int folds, std::uint64_t seed,
                            unsigned threads = 1) {
  detail::require(!grid.empty(), "full_cv: empty grid");
  detail::require(folds >= 2, "full_cv: need at least two folds");
  validate(data);
  const Eigen::Index n = data.size();
  if (n < folds)
    throw DataError("full_cv: " + std::to_string(folds) + " folds exceed " +
                    std::to_string(n) + " data points");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);

  std::vector<LearnerSpec> specs;
  specs.reserve(grid.size());
  for (const auto& c : grid) specs.push_back(LearnerSpec::from(c, kind));

  std::vector<double> total(grid.size(), 0.0);
  std::vector<bool> failed(grid.size(), false);
  for (int f = 0; f < folds; ++f) {
    const auto lo = static_cast<std::size_t>(n * f / folds);
    const auto hi = static_cast<std::size_t>(n * (f + 1) / folds);
    std::vector<Eigen::Index> train_idx, test_idx;
    for (std::size_t i = 0; i < order.size(); ++i)
      (i >= lo && i < hi ? test_idx : train_idx).push_back(order[i]);
    const auto outcomes = evaluate_split(data.rows(train_idx), data.rows(test_idx), specs, threads);
    for (std::size_t c = 0; c < grid.size(); ++c) {
      if (!outcomes[c].ok) {
        failed[c] = true;
        continue;
      }
      total[c] += outcomes[c].losses.sum();
    }
  }

  FullCvResult out;
  out.folds = folds;
  out.mean_loss.resize(grid.size());
  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    out.mean_loss[c] = failed[c] ? std::numeric_limits<double>::quiet_NaN()
                                 : total[c] / static_cast<double>(n);
    if (!failed[c] && (!best || out.mean_loss[c] < out.mean_loss[*best])) best = c;
  }
  if (!best) throw LearnerFailure("full_cv: every configuration failed");
  out.winner = *best;
  return out;
}

}  // namespace cvst
