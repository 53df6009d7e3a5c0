#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cvst/error.hpp"

namespace cvst {

/// One point of the hyperparameter grid.
struct Configuration {
  int id = 0;
  std::map<std::string, double> params;
  bool active = true;

  double param(const std::string& name) const {
    const auto it = params.find(name);
    if (it == params.end())
      throw InvalidArgument("configuration " + std::to_string(id) + " has no parameter '" +
                            name + "'");
    return it->second;
  }

  std::string describe() const {
    std::ostringstream out;
    out << '#' << id;
    for (const auto& [name, value] : params) out << ' ' << name << '=' << value;
    return out.str();
  }
};

/// Cross product of named axes; the last axis varies fastest. Ids follow
/// generation order.
inline std::vector<Configuration> make_grid(
    const std::vector<std::pair<std::string, std::vector<double>>>& axes) {
  detail::require(!axes.empty(), "make_grid: no axes");
  std::size_t total = 1;
  for (const auto& [name, values] : axes) {
    detail::require(!values.empty(), "make_grid: axis '" + name + "' is empty");
    total *= values.size();
  }
  std::vector<Configuration> grid;
  grid.reserve(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    Configuration c;
    c.id = static_cast<int>(flat);
    std::size_t rest = flat;
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
      const auto& [name, values] = *it;
      c.params[name] = values[rest % values.size()];
      rest /= values.size();
    }
    grid.push_back(std::move(c));
  }
  return grid;
}

}  // namespace cvst
