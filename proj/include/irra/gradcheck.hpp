#pragma once

#include "irra/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

namespace irra {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per parameter; 0 probes every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Compares backward() against central finite differences.
///
/// `loss_fn` must rebuild the scalar loss from the current values of
/// `params`; it is called once for the analytic pass and twice per probed
/// coordinate. The error of one coordinate is
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-3 * G, 1e5 * R, 1e-10)
/// where G is the largest numeric gradient magnitude seen across all
/// parameters and R = eps * max(|loss|, 1) / step is the rounding resolution
/// of the difference quotient. Coordinates whose gradient is negligible
/// against either scale are thus judged on absolute error.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                const GradCheckOptions& options = {});

}  // namespace irra
