#pragma once

#include "irra/gradcheck.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace irra {

struct GradientSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t cases_per_op = 100;
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Restricts the run to these operation names; empty runs all of them.
  std::vector<std::string> only;
};

struct GradientSuiteRow {
  std::string op;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  /// Case index of the largest error.
  std::size_t worst_case = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed() const { return failures == 0; }
};

/// Names of every operation covered by the suite, in run order.
std::vector<std::string> gradient_suite_ops();

/// Finite-difference check of every differentiable operation over freshly
/// seeded random cases. Throws ConfigError on an unknown name in `only`.
std::vector<GradientSuiteRow> run_gradient_suite(const GradientSuiteOptions& options = {});

}  // namespace irra
