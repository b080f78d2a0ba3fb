#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmoe/measure.hpp"

namespace hmoe {

/// A mixed partial derivative: one entry per differentiation, matrix entries
/// (p, q) for M and coordinates r for a. Matrix entries are treated as free
/// coordinates, so d/dM_pq of x^T M x is x_p x_q.
struct Partial {
  std::vector<std::pair<std::size_t, std::size_t>> m;
  std::vector<std::size_t> a;

  std::size_t order() const noexcept { return m.size() + a.size(); }
  std::string to_string() const;
};

/// Partial of u(x; M, a) = exp(x^T M x) a^T x, or of
/// ubar(x; M, a) = exp(x^T M x) phi(a^T x) when `gated`. Orders up to 2.
double u_derivative(std::span<const double> x, std::span<const double> M,
                    std::span<const double> a, const Partial& t, bool gated,
                    const ActivationKind& act);

/// max over the sample of |a^T d ubar/da - ubar|; `sample` is Q x d row-major.
double pde_residual(const ActivationKind& act, std::span<const double> M,
                    std::span<const double> a, std::span<const double> sample, std::size_t d);

struct FunctionFamily {
  std::size_t d = 0;
  std::vector<std::string> descriptors;
  std::vector<std::function<double(std::span<const double>)>> members;

  std::size_t size() const noexcept { return members.size(); }
  void add(std::string descriptor, std::function<double(std::span<const double>)> f);
  std::vector<double> evaluate(std::span<const double> x) const;
};

/// Exponent vectors of all monomials of total degree `degree` in d variables,
/// as sorted index lists (e.g. {0,0,1} for x_0^2 x_1).
std::vector<std::vector<std::size_t>> monomials(std::size_t d, std::size_t degree);

/// ubar and its partials of order 1-2 at every true (M_{h,i}, a_{h,i,k}).
/// Partials that are the same function of x (same monomial and the same
/// number of a-derivatives) appear once.
FunctionFamily build_type1_family(const MixingMeasure& Gstar, const ActivationKind& act);

/// The five member classes built from phi(f^{h,k}), v^{h,k}, u and E^h,
/// with identical functions listed once.
FunctionFamily build_type2_family(const MixingMeasure& Gstar, const ActivationKind& act);

/// One-expert measure (H = N = K = 1, omega = 1) holding (M_{h,i}, a_{h,i,k}).
MixingMeasure single_component(const MixingMeasure& G, std::size_t h, std::size_t i, std::size_t k);

struct GramResult {
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  std::size_t members = 0;
  std::size_t points = 0;
  /// sigma_min over the members that do not vanish on the sample.
  double sigma_min_nonzero = 0.0;
  /// Members that vanish on the whole sample (exact dependence).
  std::vector<std::string> zero_members;
};

/// Smallest singular value of the Q x m evaluation matrix after scaling each
/// column to unit norm. Requires Q >= 4 m. Throws NumericalError naming the
/// first member with a non-finite value.
GramResult gram_min_singular(const FunctionFamily& family, std::span<const double> sample);

}  // namespace hmoe
