#pragma once

// Synthetic benchmark generators and CSV input/output.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cvst/dataset.hpp"
#include "cvst/error.hpp"
#include "cvst/random.hpp"

namespace cvst {

enum class Family { noisy_sine, noisy_sinc };

inline std::string_view to_string(Family f) {
  return f == Family::noisy_sine ? "noisy_sine" : "noisy_sinc";
}

inline Family parse_family(std::string_view name) {
  if (name == "noisy_sine" || name == "sine") return Family::noisy_sine;
  if (name == "noisy_sinc" || name == "sinc") return Family::noisy_sinc;
  throw InvalidArgument("unknown generator family '" + std::string(name) + "'");
}

struct GeneratorSpec {
  Family family = Family::noisy_sinc;
  int intrinsic_dim = 1;
  double noise = 0.0;
  int count = 100;
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(intrinsic_dim >= 1, "generator: intrinsic dimension must be positive");
    detail::require(noise >= 0.0 && std::isfinite(noise), "generator: noise must be >= 0");
    detail::require(count >= 1, "generator: count must be positive");
  }
};

/// Unnormalized sinc with sinc(0) = 1.
inline double sinc(double t) { return t == 0.0 ? 1.0 : std::sin(t) / t; }

inline double noisy_sinc_curve(double x, int d) {
  return sinc(4.0 * x) + std::sin(15.0 * d * x) / 5.0;
}

/// Zero maps to the positive class.
inline double sign_label(double y) { return y >= 0.0 ? 1.0 : 0.0; }

/// Classification set: x ~ U[0, 2 pi d], label = sign of sin(x) + noise.
inline Dataset gen_noisy_sine(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset out{Eigen::MatrixXd(spec.count, 1), Eigen::VectorXd(spec.count), Task::classification};
  const double hi = 2.0 * std::numbers::pi * spec.intrinsic_dim;
  for (int i = 0; i < spec.count; ++i) {
    const double x = rng.uniform(0.0, hi);
    const double eps = spec.noise * rng.normal();
    out.features(i, 0) = x;
    out.targets[i] = sign_label(std::sin(x) + eps);
  }
  return out;
}

/// Regression set: x ~ U[-pi, pi], y = sinc(4x) + sin(15 d x)/5 + noise.
inline Dataset gen_noisy_sinc(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset out{Eigen::MatrixXd(spec.count, 1), Eigen::VectorXd(spec.count), Task::regression};
  for (int i = 0; i < spec.count; ++i) {
    const double x = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double eps = spec.noise * rng.normal();
    out.features(i, 0) = x;
    out.targets[i] = noisy_sinc_curve(x, spec.intrinsic_dim) + eps;
  }
  return out;
}

inline Dataset generate(const GeneratorSpec& spec) {
  return spec.family == Family::noisy_sine ? gen_noisy_sine(spec) : gen_noisy_sinc(spec);
}

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Header x1..xd,y followed by one row per point.
inline void write_csv(std::ostream& out, const Dataset& data) {
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << 'x' << (j + 1) << ',';
  out << "y\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << format_double(data.features(i, j)) << ',';
    out << format_double(data.targets[i]) << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_csv(out, data);
  if (!out) throw DataError("write to '" + path + "' failed");
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Parses a header row plus numeric rows; the last column is the target.
/// Errors name the source and the 1-based line.
inline Dataset read_csv(std::istream& in, Task task, const std::string& source = "<stream>") {
  auto fail = [&](std::size_t line, const std::string& what) -> DataError {
    return DataError(source + ":" + std::to_string(line) + ": " + what);
  };
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (line_no == 0 || detail::trim(line).empty()) throw fail(line_no, "missing header row");
  columns = detail::split_fields(detail::trim(line)).size();
  if (columns < 2) throw fail(line_no, "need at least one feature column and a target column");

  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = detail::trim(line);
    if (text.empty()) continue;
    const auto fields = detail::split_fields(text);
    if (fields.size() != columns)
      throw fail(line_no, "expected " + std::to_string(columns) + " fields, found " +
                              std::to_string(fields.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string_view f = detail::trim(fields[j]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size())
        throw fail(line_no, "field " + std::to_string(j + 1) + " ('" + std::string(f) +
                                "') is not a number");
      if (!std::isfinite(v))
        throw fail(line_no, "field " + std::to_string(j + 1) + " is not finite");
      if (j + 1 == columns && task == Task::classification && v != 0.0 && v != 1.0)
        throw fail(line_no, "classification target " + std::string(f) + " is not 0 or 1");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw fail(line_no, "no data rows");

  const auto n = static_cast<Eigen::Index>(rows);
  const auto d = static_cast<Eigen::Index>(columns - 1);
  Dataset out{Eigen::MatrixXd(n, d), Eigen::VectorXd(n), task};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j)
      out.features(i, j) = values[static_cast<std::size_t>(i * (d + 1) + j)];
    out.targets[i] = values[static_cast<std::size_t>(i * (d + 1) + d)];
  }
  return out;
}

inline Dataset load_csv(const std::string& path, Task task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return read_csv(in, task, path);
}

}  // namespace cvst
