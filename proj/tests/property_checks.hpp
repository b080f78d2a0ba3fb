#pragma once

// Randomized invariants shared by the unit suite and the acceptance runner.
// Each check returns a description of the first failure, or nothing.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "hmoe/data.hpp"
#include "hmoe/estimator.hpp"
#include "hmoe/model.hpp"
#include "hmoe/voronoi.hpp"
#include "support.hpp"

namespace hmoe::properties {

using Failure = std::optional<std::string>;

inline std::string where(const char* what, std::uint64_t seed, double got, double want) {
  std::ostringstream os;
  os.precision(17);
  os << what << " (seed " << seed << "): got " << got << ", expected " << want;
  return os.str();
}

inline const ModelSpec& spec_for(std::uint64_t seed) {
  static const ModelSpec specs[] = {{Variant::MHA, {}},
                                    {Variant::GatedValue, ActivationKind::sigmoid(0.5)},
                                    {Variant::GatedSDPA, ActivationKind::sigmoid(0.5)}};
  return specs[seed % 3];
}

inline const QuadratureGrid& shared_grid() {
  static const auto g = QuadratureGrid::uniform(1024, 2, 0x47);
  return g;
}

// A fitted-looking measure: the truth with K channels, perturbed by up to `spread`.
inline MixingMeasure near_truth(std::size_t K, double spread, std::mt19937_64& rng) {
  return init_near_truth(reference_measure(), K, 1, rng, {spread, 0.0});
}

inline Failure losses_nonnegative_and_zero_on_truth(std::uint64_t seeds) {
  const auto& T = reference_measure();
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const auto& spec = spec_for(s);
    if (double v = loss_L2(T, T, spec, shared_grid()); v != 0.0) return where("L2(G*, G*)", s, v, 0);
    if (double v = loss_L1(T, T, 1.0 + double(s % 3) / 2, spec, shared_grid()); v != 0.0)
      return where("L1(G*, G*)", s, v, 0);
    std::mt19937_64 rng(s);
    const auto G = s % 2 ? near_truth(2 + s % 3, 0.5, rng) : fixtures::random_measure({2, 2, 2 + s % 3, 2}, rng);
    for (double r : {1.0, 1.5, 2.0})
      if (double v = loss_L1(G, T, r, spec, shared_grid()); !(v >= 0.0)) return where("L1 >= 0", s, v, 0);
    if (double v = loss_L2(G, T, spec, shared_grid()); !(v >= 0.0)) return where("L2 >= 0", s, v, 0);
  }
  return {};
}

// Relabels heads, channels and (gate, expert) pairs of a measure.
inline MixingMeasure relabel(const MixingMeasure& G, const std::vector<std::size_t>& head,
                             const std::vector<std::size_t>& chan, const std::vector<std::size_t>& expert) {
  MixingMeasure R(G.shape());
  for (std::size_t h = 0; h < G.H(); ++h) {
    const std::size_t hs = head[h];
    for (std::size_t k = 0; k < G.K(); ++k) R.omega(h, k) = G.omega(hs, chan[k]);
    for (std::size_t i = 0; i < G.N(); ++i) {
      std::ranges::copy(G.gate(hs, expert[i]), R.gate(h, i).begin());
      for (std::size_t k = 0; k < G.K(); ++k) std::ranges::copy(G.expert(hs, expert[i], chan[k]), R.expert(h, i, k).begin());
    }
  }
  return R;
}

inline Failure relabel_invariance(std::uint64_t seeds) {
  const auto& T = reference_measure();
  for (std::uint64_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(1000 + s);
    const std::size_t K = 2 + s % 3;
    const auto G = near_truth(K, 0.3, rng);
    std::vector<std::size_t> head{1, 0}, chan(K), expert{1, 0};
    std::iota(chan.begin(), chan.end(), 0);
    std::shuffle(chan.begin(), chan.end(), rng);
    const auto R = relabel(G, head, chan, expert);
    const auto& spec = spec_for(s);
    const double a = loss_L2(G, T, spec, shared_grid()), b = loss_L2(R, T, spec, shared_grid());
    if (std::abs(a - b) > 1e-12 * std::max(1.0, a)) return where("L2 after relabel", s, b, a);
    const double c = loss_L1(G, T, 1.0, spec, shared_grid()), d = loss_L1(R, T, 1.0, spec, shared_grid());
    if (std::abs(c - d) > 1e-12 * std::max(1.0, c)) return where("L1 after relabel", s, d, c);
    const double f = function_distance(G, T, spec, shared_grid()), g = function_distance(R, T, spec, shared_grid());
    if (std::abs(f - g) > 1e-12 * std::max(1.0, f)) return where("regression distance after relabel", s, g, f);
  }
  return {};
}

inline Failure softmax_simplex_and_translation(std::uint64_t seeds) {
  for (std::uint64_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(2000 + s);
    const std::size_t N = 1 + s % 5, d = 1 + s % 3;
    const auto G = fixtures::random_measure({1, N + 1, 1, d}, rng, 3.0);
    const std::span<const double> gates(G.gate(0, 0).data(), N * d * d);
    const auto x = fixtures::uniform_points(1, d, rng);
    const auto w = softmax_gates(gates, d, x);
    double total = 0;
    for (double v : w) {
      if (!(v >= 0.0)) return where("gate >= 0", s, v, 0);
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-12) return where("gate sum", s, total, 1);

    auto C = fixtures::uniform_points(1, d * d, rng);
    std::vector<double> shifted(gates.begin(), gates.end());
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t e = 0; e < d * d; ++e) shifted[i * d * d + e] += 5.0 * C[e];
    const auto ws = softmax_gates(shifted, d, x);
    for (std::size_t i = 0; i < N; ++i)
      if (std::abs(ws[i] - w[i]) > 1e-12) return where("gate after common shift", s, ws[i], w[i]);

    std::vector<double> rev;
    for (std::size_t i = N; i-- > 0;) rev.insert(rev.end(), gates.begin() + i * d * d, gates.begin() + (i + 1) * d * d);
    const auto wr = softmax_gates(rev, d, x);
    for (std::size_t i = 0; i < N; ++i)
      if (std::abs(wr[N - 1 - i] - w[i]) > 1e-15) return where("gate after reversal", s, wr[N - 1 - i], w[i]);
  }
  return {};
}

inline Failure identity_reduction(std::uint64_t seeds) {
  for (std::uint64_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(3000 + s);
    const std::size_t d = 1 + s % 3;
    const auto G = fixtures::random_measure({1 + s % 2, 1 + s % 3, 1 + s % 4, d}, rng);
    const auto pts = fixtures::uniform_points(100, d, rng);
    for (std::size_t q = 0; q < 100; ++q) {
      const std::span<const double> x(pts.data() + q * d, d);
      const double base = eval_model(G, {Variant::MHA, {}}, x);
      for (auto v : {Variant::GatedValue, Variant::GatedSDPA}) {
        const double got = eval_model(G, {v, ActivationKind::identity()}, x);
        if (std::abs(got - base) > 1e-12) return where(("identity " + to_string(v)).c_str(), s, got, base);
      }
    }
  }
  return {};
}

inline Failure monotone_trajectories(std::uint64_t seeds) {
  const auto& T = reference_measure();
  OptimizerConfig cfg;
  cfg.max_epochs = 40;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const auto& spec = spec_for(s);
    const auto data = generate_dataset(T, spec, 200, 0.1, 4000 + s);
    std::mt19937_64 rng(s);
    const auto r = fit(init_near_truth(T, 2 + s % 3, 200, rng), data, spec, cfg);
    for (std::size_t e = 1; e < r.sse_trajectory.size(); ++e)
      if (r.sse_trajectory[e] > r.sse_trajectory[e - 1])
        return where("SSE trajectory step", s, r.sse_trajectory[e], r.sse_trajectory[e - 1]);
  }
  return {};
}

}  // namespace hmoe::properties
