#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmoe/measure.hpp"

namespace hmoe {

/// Q points drawn i.i.d. from U([-1,1]^d) with a fixed seed. Both measures in
/// a comparison are evaluated on the same grid.
struct QuadratureGrid {
  std::size_t Q = 0;
  std::size_t d = 0;
  std::uint64_t seed = 0;
  std::vector<double> points;  // Q x d, row-major

  static QuadratureGrid uniform(std::size_t Q, std::size_t d, std::uint64_t seed);
  std::span<const double> point(std::size_t q) const { return {points.data() + q * d, d}; }
};

/// (head, channel) index pair.
struct ComponentId {
  std::size_t h = 0;
  std::size_t k = 0;
  auto operator<=>(const ComponentId&) const = default;
};

/// Empirical L2 distance (root mean square over the grid) between component
/// `fit` of G and component `truth` of Gstar.
double component_distance(const MixingMeasure& G, const MixingMeasure& Gstar, ComponentId fit,
                          ComponentId truth, const ModelSpec& spec, const QuadratureGrid& grid);

/// Empirical L2 distance between the two regression functions.
double function_distance(const MixingMeasure& G, const MixingMeasure& Gstar, const ModelSpec& spec,
                         const QuadratureGrid& grid);

struct VoronoiAssignment {
  std::size_t H_true = 0, K_true = 0;
  std::size_t H_fit = 0, K_fit = 0;
  /// cell_of[h' * K_fit + k'] is the true component whose cell holds (h', k').
  std::vector<ComponentId> cell_of;
  /// kappa[h' * K_fit + k'][i] is the fitted expert matched to true expert i.
  std::vector<std::vector<std::size_t>> kappa;
  /// distances[(h' * K_fit + k') * (H_true * K_true) + h * K_true + k].
  std::vector<double> distances;

  ComponentId cell(ComponentId fitted) const { return cell_of[fitted.h * K_fit + fitted.k]; }
  const std::vector<std::size_t>& permutation(ComponentId fitted) const {
    return kappa[fitted.h * K_fit + fitted.k];
  }
  /// Fitted members of the cell of true component (h, k), in index order.
  std::vector<ComponentId> members(ComponentId truth) const;
};

/// Assign each fitted component to its nearest true component (ties to the
/// lexicographically smallest), then match experts within each pair by a
/// global minimum-cost permutation of parameter distances.
VoronoiAssignment assign_cells(const MixingMeasure& G, const MixingMeasure& Gstar,
                               const ModelSpec& spec, const QuadratureGrid& grid);

/// Minimum-cost permutation for a square cost matrix (row i -> column perm[i]).
/// Exhaustive for n <= 6, Hungarian algorithm beyond.
std::vector<std::size_t> min_cost_permutation(const std::vector<double>& cost, std::size_t n);

/// Loss with exponent r on every cell's parameter discrepancies.
double loss_L1(const MixingMeasure& G, const MixingMeasure& Gstar, double r, const ModelSpec& spec,
               const QuadratureGrid& grid);
double loss_L1(const MixingMeasure& G, const MixingMeasure& Gstar, double r,
               const VoronoiAssignment& cells);

/// First powers on singleton cells, squares on cells holding several fitted
/// components.
double loss_L2(const MixingMeasure& G, const MixingMeasure& Gstar, const ModelSpec& spec,
               const QuadratureGrid& grid);
double loss_L2(const MixingMeasure& G, const MixingMeasure& Gstar, const VoronoiAssignment& cells);

/// K*+1 channel sequence that splits true channel 0 into two copies whose
/// experts move by +-e_1/n and whose weights carry an extra 1/(2 n^(r+1)).
MixingMeasure adversarial_sequence(const MixingMeasure& Gstar, double n, double r);

nlohmann::json to_json(const VoronoiAssignment& a);

}  // namespace hmoe
