#pragma once

#include <cmath>
#include <vector>

#include "cloak/errors.hpp"

namespace cloak {

// Variance-preserving noise schedule: alpha[t]^2 + sigma[t]^2 == 1 for all t.
struct NoiseSchedule {
  int t_steps = 0;
  double beta_min = 0.0, beta_max = 0.0;
  std::vector<double> alpha;   // sqrt of the cumulative (1 - beta) product
  std::vector<double> sigma;
  std::vector<double> weight;  // per-timestep loss weight w_t
};

inline NoiseSchedule make_schedule(int t_steps, double beta_min, double beta_max) {
  if (t_steps < 2) throw ConfigError("make_schedule: t_steps must be >= 2");
  if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("make_schedule: need 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.t_steps = t_steps;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.alpha.resize(static_cast<std::size_t>(t_steps));
  s.sigma.resize(static_cast<std::size_t>(t_steps));
  s.weight.assign(static_cast<std::size_t>(t_steps), 1.0);
  double prod = 1.0;
  for (int t = 0; t < t_steps; ++t) {
    const double beta = beta_min + (beta_max - beta_min) * t / (t_steps - 1);
    prod *= 1.0 - beta;
    s.alpha[static_cast<std::size_t>(t)] = std::sqrt(prod);
    s.sigma[static_cast<std::size_t>(t)] = std::sqrt(1.0 - prod);
  }
  return s;
}

}  // namespace cloak
