#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "lidar_sim/conv_net.hpp"

namespace lidar_sim::test {

struct GradCheck {
  std::size_t checked = 0;
  double worst = 0.0;  // worst relative error
};

/// Relative error |a - n| / max(|a|, |n|, floor). Central differences at
/// h = 1e-5 carry roughly eps * loss / h of rounding noise, so gradients
/// below the floor are effectively compared in absolute terms.
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Network with random weights and small random biases (keeps ReLU
/// pre-activations away from the kink), plus a random input/target pair.
inline void perturbed_problem(Variant v, int base, int h, int w, std::uint64_t seed, EpwNetwork& net,
                              Tensor& input, Tensor& target) {
  net = build_network(v, base, seed);
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::uniform_real_distribution<double> b(-0.2, 0.2), x(0.0, 1.0), y(0.0, 1.0);
  for (auto& l : net.layers)
    for (auto& bias : l.biases) bias = b(rng);
  input = Tensor(2, h, w);
  for (auto& val : input.v) val = x(rng);
  target = Tensor(1, h, w);
  for (auto& val : target.v) val = y(rng);
}

/// Compares backward() against central differences for every parameter.
inline GradCheck check_gradients(EpwNetwork net, const Tensor& input, const Tensor& target, double lambda,
                                 double h = 1e-5) {
  const auto analytic = backward(net, input, target, lambda).grads;
  auto f = [&](const EpwNetwork& n) { return loss(forward(n, input), target, n, lambda); };
  GradCheck r;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (int which = 0; which < 2; ++which) {
      auto& params = which == 0 ? net.layers[l].weights : net.layers[l].biases;
      const auto& g = which == 0 ? analytic.weights[l] : analytic.biases[l];
      for (std::size_t k = 0; k < params.size(); ++k) {
        const double keep = params[k];
        params[k] = keep + h;
        const double up = f(net);
        params[k] = keep - h;
        const double down = f(net);
        params[k] = keep;
        r.worst = std::max(r.worst, rel_error(g[k], (up - down) / (2 * h)));
        ++r.checked;
      }
    }
  }
  return r;
}

}  // namespace lidar_sim::test
