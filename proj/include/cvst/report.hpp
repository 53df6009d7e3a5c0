#pragma once

// Grid files and structured run reports (JSON).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cvst/configuration.hpp"
#include "cvst/cvst.hpp"
#include "cvst/datagen.hpp"
#include "cvst/error.hpp"
#include "cvst/evaluation.hpp"

namespace cvst {

inline constexpr std::string_view kVersion = "1.0.0";

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Digest of a dataset's canonical CSV rendering.
inline std::string dataset_digest(const Dataset& data) {
  std::ostringstream out;
  write_csv(out, data);
  return fnv1a_hex(out.str());
}

inline std::string grid_digest(const std::vector<Configuration>& grid) {
  std::string text;
  for (const auto& c : grid) {
    text += std::to_string(c.id);
    for (const auto& [name, value] : c.params) text += ' ' + name + '=' + format_double(value);
    text += '\n';
  }
  return fnv1a_hex(text);
}

// ---------------------------------------------------------------------------
// Grid files
//
//   {"axes": [{"name": "log10_sigma", "from": -3, "to": 3, "by": 0.1},
//             {"name": "log10_lambda", "values": [-7, -6, -5]}]}

using GridAxes = std::vector<std::pair<std::string, std::vector<double>>>;

inline GridAxes parse_grid(const nlohmann::json& doc) {
  auto bad = [](const std::string& what) { return DataError("grid file: " + what); };
  if (!doc.is_object() || !doc.contains("axes") || !doc["axes"].is_array())
    throw bad("expected an object with an \"axes\" array");
  GridAxes axes;
  for (const auto& axis : doc["axes"]) {
    if (!axis.is_object() || !axis.contains("name") || !axis["name"].is_string())
      throw bad("every axis needs a string \"name\"");
    const std::string name = axis["name"];
    std::vector<double> values;
    if (axis.contains("values")) {
      if (!axis["values"].is_array()) throw bad("axis '" + name + "': \"values\" must be a list");
      for (const auto& v : axis["values"]) {
        if (!v.is_number()) throw bad("axis '" + name + "': non-numeric value");
        values.push_back(v.get<double>());
      }
    } else if (axis.contains("from") && axis.contains("to") && axis.contains("by")) {
      if (!axis["from"].is_number() || !axis["to"].is_number() || !axis["by"].is_number())
        throw bad("axis '" + name + "': from/to/by must be numbers");
      const double from = axis["from"], to = axis["to"], by = axis["by"];
      if (!(by > 0.0) || !(to >= from) || !std::isfinite(from) || !std::isfinite(to))
        throw bad("axis '" + name + "': need finite from <= to and by > 0");
      const auto count = static_cast<long long>(std::floor((to - from) / by + 1e-9)) + 1;
      if (count > 1000000) throw bad("axis '" + name + "' is too long");
      for (long long i = 0; i < count; ++i) {
        // Round away representation noise such as -2.9000000000000004.
        const double v = from + static_cast<double>(i) * by;
        values.push_back(std::round(v * 1e12) / 1e12);
      }
    } else {
      throw bad("axis '" + name + "' needs \"values\" or \"from\"/\"to\"/\"by\"");
    }
    if (values.empty()) throw bad("axis '" + name + "' is empty");
    for (double v : values)
      if (!std::isfinite(v)) throw bad("axis '" + name + "' has a non-finite value");
    axes.emplace_back(name, std::move(values));
  }
  if (axes.empty()) throw bad("no axes");
  return axes;
}

inline std::vector<Configuration> load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open grid file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("grid file '" + path + "': " + e.what());
  }
  return make_grid(parse_grid(doc));
}

// ---------------------------------------------------------------------------
// Reports

struct ReportOptions {
  bool include_timing = true;
};

namespace detail {

inline nlohmann::json number_or_null(double v) {
  return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
}

inline nlohmann::json params_json(const Configuration& c) {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [name, value] : c.params) p[name] = value;
  return p;
}

inline nlohmann::json configuration_json(const Configuration& c) {
  return {{"id", c.id}, {"params", params_json(c)}};
}

}  // namespace detail

struct InputDigests {
  std::string data;
  std::string grid;
  std::uint64_t seed = 0;
};

inline nlohmann::json run_report(const CVSTResult& result, const std::vector<Configuration>& grid,
                                 const CVSTParams& params, LearnerKind learner, Task task,
                                 const InputDigests& inputs, const ReportOptions& options) {
  using nlohmann::json;
  json doc;
  doc["tool"] = "cvst";
  doc["command"] = "run";
  doc["version"] = kVersion;
  doc["inputs"] = {{"data_digest", inputs.data},
                   {"grid_digest", inputs.grid},
                   {"seed", inputs.seed},
                   {"configurations", grid.size()}};
  doc["parameters"] = {{"learner", to_string(learner)},
                       {"task", to_string(task)},
                       {"steps", params.steps_S},
                       {"alpha", params.alpha},
                       {"alpha_l", params.alpha_l},
                       {"beta_l", params.beta_l},
                       {"w_stop", params.w_stop},
                       {"similarity", to_string(params.similarity_mode)}};
  doc["plan"] = {{"pi0", result.plan.pi0},
                 {"pi1", result.plan.pi1},
                 {"intercept_a", result.plan.intercept_a},
                 {"slope_b", result.plan.slope_b},
                 {"safety_zone", safety_zone(result.plan)}};
  doc["winner"] = detail::configuration_json(result.winner);
  doc["steps_run"] = result.steps_run;
  doc["stopped_early_at"] =
      result.stopped_early_at ? json(*result.stopped_early_at) : json(nullptr);
  doc["training_sizes"] = result.training_sizes;
  doc["survivors_per_step"] = result.survivors_per_step;

  json failures = json::array();
  for (const auto& f : result.failures)
    failures.push_back({{"id", f.configuration_id}, {"step", f.step}, {"reason", f.reason}});
  doc["failures"] = failures;

  // One row per configuration: P_S (null = not computed), T_S, drop step.
  json rows = json::array();
  for (std::size_t c = 0; c < grid.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    json perf = json::array(), trace = json::array();
    for (int s = 0; s < result.steps_run; ++s) {
      perf.push_back(detail::number_or_null(result.per_step(i, s)));
      trace.push_back(static_cast<int>(result.trace(i, s)));
    }
    json row = detail::configuration_json(grid[c]);
    row["active"] = static_cast<bool>(result.active[c]);
    row["dropped_at"] = result.dropped_at[c] ? json(result.dropped_at[c]) : json(nullptr);
    row["P_S"] = perf;
    row["T_S"] = trace;
    rows.push_back(row);
  }
  doc["configurations"] = rows;

  if (options.include_timing) {
    double total = 0.0;
    for (double t : result.timing) total += t;
    doc["timing"] = {{"per_step_seconds", result.timing}, {"total_seconds", total}};
  }
  return doc;
}

inline nlohmann::json fullcv_report(const FullCvResult& result,
                                    const std::vector<Configuration>& grid, LearnerKind learner,
                                    Task task, const InputDigests& inputs, double seconds,
                                    const ReportOptions& options) {
  using nlohmann::json;
  json doc;
  doc["tool"] = "cvst";
  doc["command"] = "fullcv";
  doc["version"] = kVersion;
  doc["inputs"] = {{"data_digest", inputs.data},
                   {"grid_digest", inputs.grid},
                   {"seed", inputs.seed},
                   {"configurations", grid.size()}};
  doc["parameters"] = {
      {"learner", to_string(learner)}, {"task", to_string(task)}, {"folds", result.folds}};
  doc["winner"] = detail::configuration_json(grid[result.winner]);
  json rows = json::array();
  for (std::size_t c = 0; c < grid.size(); ++c) {
    json row = detail::configuration_json(grid[c]);
    row["mean_loss"] = detail::number_or_null(result.mean_loss[c]);
    rows.push_back(row);
  }
  doc["configurations"] = rows;
  if (options.include_timing) doc["timing"] = {{"total_seconds", seconds}};
  return doc;
}

/// Held-out evaluation of a selected configuration, trained on all of
/// `train`: mean loss (MSE or misclassification rate) on `test`.
inline nlohmann::json evaluation_block(const Dataset& train, const Dataset& test,
                                       const Configuration& winner, LearnerKind learner) {
  const TrainedModel model = train_model(train, LearnerSpec::from(winner, learner));
  const Eigen::VectorXd pred = model.predict(test.features);
  const double loss = pointwise_loss(test.task, pred, test.targets).mean();
  return {{"test_digest", dataset_digest(test)},
          {"test_points", test.size()},
          {"winner", detail::configuration_json(winner)},
          {"mse", loss}};
}

}  // namespace cvst
