#include "irra/gradcheck.hpp"

#include "irra/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace irra {

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                const GradCheckOptions& options) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const Tensor loss = loss_fn();
  backward(loss);

  struct Probe {
    std::size_t param, index;
    double analytic, numeric;
  };
  std::vector<Probe> probes;
  std::mt19937_64 rng(options.sample_seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p];
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
    }
    const bool has = t.has_grad();
    for (auto i : coords) {
      auto vals = t.mutable_values();
      const double saved = vals[i];
      vals[i] = saved + options.step;
      const double up = loss_fn().item();
      vals[i] = saved - options.step;
      const double down = loss_fn().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      probes.push_back({p, i, has ? t.grad()[i] : 0.0, numeric});
    }
  }

  double scale = 0.0;
  for (const auto& pr : probes) scale = std::max(scale, std::abs(pr.numeric));
  // Rounding error of a central difference is about eps * |loss| / step;
  // gradients far below that cannot be resolved and are judged absolutely.
  const double resolution = std::numeric_limits<double>::epsilon() *
                            std::max(std::abs(loss.item()), 1.0) / options.step;
  const double floor = std::max({1e-3 * scale, 1e5 * resolution, 1e-10});

  GradCheckResult result;
  result.coords_checked = probes.size();
  for (const auto& pr : probes) {
    const double denom = std::max({std::abs(pr.analytic), std::abs(pr.numeric), floor});
    const double err = std::abs(pr.analytic - pr.numeric) / denom;
    if (!(err <= result.max_rel_error)) {
      result.max_rel_error = std::isnan(err) ? INFINITY : err;
      result.worst_param = pr.param;
      result.worst_index = pr.index;
      result.worst_analytic = pr.analytic;
      result.worst_numeric = pr.numeric;
    }
  }
  return result;
}

}  // namespace irra
