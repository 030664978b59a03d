#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "svgl/tensor.hpp"

namespace svgl::testing {

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace svgl::testing
