#pragma once

#include <random>

#include "hmoe/measure.hpp"

namespace hmoe::fixtures {

// Symmetric gates with the last one pinned at zero, positive weights.
inline MixingMeasure random_measure(Shape s, std::mt19937_64& rng, double gate_scale = 0.8) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> w(0.2, 1.2);
  MixingMeasure G(s);
  for (std::size_t h = 0; h < s.H; ++h) {
    for (std::size_t k = 0; k < s.K; ++k) G.omega(h, k) = w(rng);
    for (std::size_t i = 0; i + 1 < s.N; ++i)
      for (std::size_t p = 0; p < s.d; ++p)
        for (std::size_t q = p; q < s.d; ++q) G.gate(h, i, p, q) = G.gate(h, i, q, p) = gate_scale * u(rng);
    for (std::size_t i = 0; i < s.N; ++i)
      for (std::size_t k = 0; k < s.K; ++k)
        for (auto& v : G.expert(h, i, k)) v = u(rng);
  }
  return G;
}

inline std::vector<double> uniform_points(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(n * d);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace hmoe::fixtures
