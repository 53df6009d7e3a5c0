#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cvst/error.hpp"

namespace cvst {

enum class Task { regression, classification };

inline std::string_view to_string(Task task) {
  return task == Task::regression ? "regression" : "classification";
}

inline Task parse_task(std::string_view name) {
  if (name == "regression") return Task::regression;
  if (name == "classification") return Task::classification;
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

/// N x d features with one target per row. Classification targets are 0/1.
struct Dataset {
  Eigen::MatrixXd features;
  Eigen::VectorXd targets;
  Task task = Task::regression;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  Dataset head(Eigen::Index n) const {
    return {features.topRows(n), targets.head(n), task};
  }
  Dataset tail(Eigen::Index n) const {
    return {features.bottomRows(n), targets.tail(n), task};
  }
  Dataset rows(const std::vector<Eigen::Index>& idx) const {
    Dataset out{Eigen::MatrixXd(static_cast<Eigen::Index>(idx.size()), dim()),
                Eigen::VectorXd(static_cast<Eigen::Index>(idx.size())), task};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(idx[i]);
      out.targets[static_cast<Eigen::Index>(i)] = targets[idx[i]];
    }
    return out;
  }
};

/// Throws DataError unless the dataset is finite, consistent and (for
/// classification) binary.
inline void validate(const Dataset& data) {
  if (data.features.rows() != data.targets.size())
    throw DataError("dataset: feature rows and target length differ");
  if (!data.features.allFinite() || !data.targets.allFinite())
    throw DataError("dataset: non-finite value");
  if (data.task == Task::classification) {
    for (Eigen::Index i = 0; i < data.targets.size(); ++i) {
      const double y = data.targets[i];
      if (y != 0.0 && y != 1.0)
        throw DataError("dataset: classification target " + std::to_string(y) +
                        " at row " + std::to_string(i + 1) + " is not 0 or 1");
    }
  }
}

}  // namespace cvst
