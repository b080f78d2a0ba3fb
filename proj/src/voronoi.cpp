#include "hmoe/voronoi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "hmoe/error.hpp"
#include "hmoe/model.hpp"

namespace hmoe {

QuadratureGrid QuadratureGrid::uniform(std::size_t Q, std::size_t d, std::uint64_t seed) {
  QuadratureGrid g{Q, d, seed, std::vector<double>(Q * d)};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : g.points) v = u(rng);
  return g;
}

namespace {

void check_grid(const MixingMeasure& G, const QuadratureGrid& grid) {
  if (grid.d != G.d()) throw DimensionError("grid dimension does not match the measure");
  if (grid.Q == 0) throw DimensionError("empty quadrature grid");
}

/// values[(h * K + k) * Q + q] = component (h, k) at grid point q.
std::vector<double> component_table(const MixingMeasure& G, const ModelSpec& spec,
                                    const QuadratureGrid& grid) {
  check_grid(G, grid);
  std::vector<double> out(G.H() * G.K() * grid.Q);
  for (std::size_t h = 0; h < G.H(); ++h)
    for (std::size_t k = 0; k < G.K(); ++k)
      for (std::size_t q = 0; q < grid.Q; ++q)
        out[(h * G.K() + k) * grid.Q + q] = eval_component(G, spec, h, k, grid.point(q));
  return out;
}

double rms_diff(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(n));
}

double gate_diff_norm(const MixingMeasure& G, std::size_t h_fit, std::size_t i_fit,
                      const MixingMeasure& Gstar, std::size_t h, std::size_t i) {
  const auto m = G.gate(h_fit, i_fit);
  const auto ms = Gstar.gate(h, i);
  double s = 0.0;
  for (std::size_t j = 0; j < m.size(); ++j) s += (m[j] - ms[j]) * (m[j] - ms[j]);
  return std::sqrt(s);
}

double expert_diff_norm(const MixingMeasure& G, std::size_t h_fit, std::size_t i_fit,
                        std::size_t k_fit, const MixingMeasure& Gstar, std::size_t h,
                        std::size_t i, std::size_t k) {
  const auto a = G.expert(h_fit, i_fit, k_fit);
  const auto as = Gstar.expert(h, i, k);
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - as[j]) * (a[j] - as[j]);
  return std::sqrt(s);
}

std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  // Shortest augmenting path with potentials; rows and columns 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col0] = 1;
      const std::size_t r0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost[(r0 - 1) * n + (c - 1)] - u[r0] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t c = 1; c <= n; ++c) perm[match[c] - 1] = c - 1;
  return perm;
}

}  // namespace

std::vector<std::size_t> min_cost_permutation(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw DimensionError("cost matrix must be n x n");
  if (n > 6) return hungarian(cost, n);
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost[i * n + perm[i]];
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double component_distance(const MixingMeasure& G, const MixingMeasure& Gstar, ComponentId fit,
                          ComponentId truth, const ModelSpec& spec, const QuadratureGrid& grid) {
  check_grid(G, grid);
  check_grid(Gstar, grid);
  double s = 0.0;
  for (std::size_t q = 0; q < grid.Q; ++q) {
    const auto x = grid.point(q);
    const double diff =
        eval_component(G, spec, fit.h, fit.k, x) - eval_component(Gstar, spec, truth.h, truth.k, x);
    s += diff * diff;
  }
  return std::sqrt(s / static_cast<double>(grid.Q));
}

double function_distance(const MixingMeasure& G, const MixingMeasure& Gstar, const ModelSpec& spec,
                         const QuadratureGrid& grid) {
  check_grid(G, grid);
  check_grid(Gstar, grid);
  double s = 0.0;
  for (std::size_t q = 0; q < grid.Q; ++q) {
    const auto x = grid.point(q);
    const double diff = eval_model(G, spec, x) - eval_model(Gstar, spec, x);
    s += diff * diff;
  }
  return std::sqrt(s / static_cast<double>(grid.Q));
}

std::vector<ComponentId> VoronoiAssignment::members(ComponentId truth) const {
  std::vector<ComponentId> out;
  for (std::size_t h = 0; h < H_fit; ++h)
    for (std::size_t k = 0; k < K_fit; ++k)
      if (cell_of[h * K_fit + k] == truth) out.push_back({h, k});
  return out;
}

VoronoiAssignment assign_cells(const MixingMeasure& G, const MixingMeasure& Gstar,
                               const ModelSpec& spec, const QuadratureGrid& grid) {
  if (G.N() != Gstar.N() || G.d() != Gstar.d())
    throw DimensionError("fitted and true measures must share N and d");
  VoronoiAssignment out;
  out.H_true = Gstar.H();
  out.K_true = Gstar.K();
  out.H_fit = G.H();
  out.K_fit = G.K();
  const std::size_t n_true = out.H_true * out.K_true;
  const std::size_t n_fit = out.H_fit * out.K_fit;

  const auto fitted = component_table(G, spec, grid);
  const auto truth = component_table(Gstar, spec, grid);
  out.distances.resize(n_fit * n_true);
  for (std::size_t f = 0; f < n_fit; ++f)
    for (std::size_t t = 0; t < n_true; ++t)
      out.distances[f * n_true + t] =
          rms_diff(fitted.data() + f * grid.Q, truth.data() + t * grid.Q, grid.Q);

  const std::size_t N = G.N();
  out.cell_of.resize(n_fit);
  out.kappa.resize(n_fit);
  for (std::size_t f = 0; f < n_fit; ++f) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < n_true; ++t)
      if (out.distances[f * n_true + t] < out.distances[f * n_true + best]) best = t;
    const ComponentId cell{best / out.K_true, best % out.K_true};
    const ComponentId fit{f / out.K_fit, f % out.K_fit};
    out.cell_of[f] = cell;

    // cost[i][j]: true expert i against fitted expert j, theta = (M, a).
    std::vector<double> cost(N * N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const double dm = gate_diff_norm(G, fit.h, j, Gstar, cell.h, i);
        const double da = expert_diff_norm(G, fit.h, j, fit.k, Gstar, cell.h, i, cell.k);
        cost[i * N + j] = std::sqrt(dm * dm + da * da);
      }
    out.kappa[f] = min_cost_permutation(cost, N);
  }
  return out;
}

namespace {

/// sum_i |dM_i|^r + |da_i|^r for a fitted component against its cell's truth.
double discrepancy(const MixingMeasure& G, const MixingMeasure& Gstar, ComponentId fit,
                   ComponentId truth, const std::vector<std::size_t>& kappa, double r) {
  double s = 0.0;
  for (std::size_t i = 0; i < Gstar.N(); ++i) {
    const std::size_t j = kappa[i];
    s += std::pow(gate_diff_norm(G, fit.h, j, Gstar, truth.h, i), r);
    s += std::pow(expert_diff_norm(G, fit.h, j, fit.k, Gstar, truth.h, i, truth.k), r);
  }
  return s;
}

template <typename ExponentFn>
double voronoi_loss(const MixingMeasure& G, const MixingMeasure& Gstar,
                    const VoronoiAssignment& cells, ExponentFn exponent_for) {
  double weight_term = 0.0;
  double param_term = 0.0;
  for (std::size_t h = 0; h < Gstar.H(); ++h)
    for (std::size_t k = 0; k < Gstar.K(); ++k) {
      const auto members = cells.members({h, k});
      double mass = 0.0;
      const double r = exponent_for(members.size());
      for (const auto& m : members) {
        mass += G.omega(m.h, m.k);
        // |omega'| keeps the diagnostic nonnegative for unconstrained fits.
        param_term += std::abs(G.omega(m.h, m.k)) *
                      discrepancy(G, Gstar, m, {h, k}, cells.permutation(m), r);
      }
      weight_term += std::abs(mass - Gstar.omega(h, k));
    }
  return weight_term + param_term;
}

}  // namespace

double loss_L1(const MixingMeasure& G, const MixingMeasure& Gstar, double r,
               const VoronoiAssignment& cells) {
  if (!(r >= 1.0)) throw ConfigError("loss exponent r must be >= 1");
  return voronoi_loss(G, Gstar, cells, [r](std::size_t) { return r; });
}

double loss_L1(const MixingMeasure& G, const MixingMeasure& Gstar, double r, const ModelSpec& spec,
               const QuadratureGrid& grid) {
  return loss_L1(G, Gstar, r, assign_cells(G, Gstar, spec, grid));
}

double loss_L2(const MixingMeasure& G, const MixingMeasure& Gstar, const VoronoiAssignment& cells) {
  return voronoi_loss(G, Gstar, cells, [](std::size_t size) { return size > 1 ? 2.0 : 1.0; });
}

double loss_L2(const MixingMeasure& G, const MixingMeasure& Gstar, const ModelSpec& spec,
               const QuadratureGrid& grid) {
  return loss_L2(G, Gstar, assign_cells(G, Gstar, spec, grid));
}

MixingMeasure adversarial_sequence(const MixingMeasure& Gstar, double n, double r) {
  if (!(n >= 1.0)) throw ConfigError("sequence index n must be >= 1");
  const auto& s = Gstar.shape();
  MixingMeasure G({s.H, s.N, s.K + 1, s.d});
  const double extra = 1.0 / (2.0 * std::pow(n, r + 1.0));
  for (std::size_t h = 0; h < s.H; ++h) {
    for (std::size_t i = 0; i < s.N; ++i)
      std::copy(Gstar.gate(h, i).begin(), Gstar.gate(h, i).end(), G.gate(h, i).begin());
    G.omega(h, 0) = 0.5 * Gstar.omega(h, 0) + extra;
    G.omega(h, 1) = 0.5 * Gstar.omega(h, 0) + extra;
    for (std::size_t k = 2; k <= s.K; ++k) G.omega(h, k) = Gstar.omega(h, k - 1);
    for (std::size_t i = 0; i < s.N; ++i) {
      const auto base = Gstar.expert(h, i, 0);
      std::copy(base.begin(), base.end(), G.expert(h, i, 0).begin());
      std::copy(base.begin(), base.end(), G.expert(h, i, 1).begin());
      G.expert(h, i, 0)[0] += 1.0 / n;
      G.expert(h, i, 1)[0] -= 1.0 / n;
      for (std::size_t k = 2; k <= s.K; ++k) {
        const auto src = Gstar.expert(h, i, k - 1);
        std::copy(src.begin(), src.end(), G.expert(h, i, k).begin());
      }
    }
  }
  return G;
}

nlohmann::json to_json(const VoronoiAssignment& a) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t h = 0; h < a.H_true; ++h)
    for (std::size_t k = 0; k < a.K_true; ++k) {
      nlohmann::json members = nlohmann::json::array();
      for (const auto& m : a.members({h, k})) members.push_back({m.h, m.k});
      cells.push_back({{"true", {h, k}}, {"fitted", members}});
    }
  nlohmann::json kappa = nlohmann::json::array();
  for (std::size_t f = 0; f < a.kappa.size(); ++f)
    kappa.push_back({{"fitted", {f / a.K_fit, f % a.K_fit}}, {"permutation", a.kappa[f]}});
  return {{"cells", cells}, {"kappa", kappa}};
}

}  // namespace hmoe
