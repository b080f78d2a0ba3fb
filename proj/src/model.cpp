#include "hmoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hmoe/error.hpp"

namespace hmoe {

namespace {

double quadratic_form(std::span<const double> m, std::size_t d, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t p = 0; p < d; ++p) {
    double row = 0.0;
    for (std::size_t q = 0; q < d; ++q) row += m[p * d + q] * x[q];
    s += x[p] * row;
  }
  return s;
}

double dot(std::span<const double> a, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) s += a[p] * x[p];
  return s;
}

void check_dim(const MixingMeasure& G, std::span<const double> x) {
  if (x.size() != G.d())
    throw DimensionError("input has dimension " + std::to_string(x.size()) + ", measure expects " +
                         std::to_string(G.d()));
}

}  // namespace

std::vector<double> softmax_gates(std::span<const double> gates, std::size_t d,
                                  std::span<const double> x) {
  if (d == 0 || gates.empty() || gates.size() % (d * d) != 0)
    throw DimensionError("gating matrices must be a nonempty list of d x d matrices");
  if (x.size() != d)
    throw DimensionError("input has dimension " + std::to_string(x.size()) +
                         ", gating matrices are " + std::to_string(d) + " x " + std::to_string(d));
  const std::size_t n = gates.size() / (d * d);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = quadratic_form(gates.subspan(i * d * d, d * d), d, x);
  const double top = *std::max_element(w.begin(), w.end());
  double total = 0.0;
  for (auto& v : w) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

std::vector<double> head_gates(const MixingMeasure& G, std::size_t h, std::span<const double> x) {
  if (h >= G.H()) throw DimensionError("head index out of range");
  const std::size_t block = G.d() * G.d();
  return softmax_gates(std::span<const double>(G.gate(h, 0).data(), G.N() * block), G.d(), x);
}

double activation_eval(const ActivationKind& act, double z, int order) {
  switch (act.type) {
    case ActivationType::Identity:
      return order == 0 ? z : (order == 1 ? 1.0 : 0.0);
    case ActivationType::SigmoidWithBias: {
      const double s = 1.0 / (1.0 + std::exp(-(z + act.bias)));
      if (order == 0) return s;
      if (order == 1) return s * (1.0 - s);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
  }
  return 0.0;
}

double eval_component(const MixingMeasure& G, const ModelSpec& spec, std::size_t h, std::size_t k,
                      std::span<const double> x) {
  check_dim(G, x);
  if (h >= G.H() || k >= G.K())
    throw DimensionError("component (" + std::to_string(h) + ", " + std::to_string(k) +
                         ") out of range");
  const auto act = spec.effective_activation();
  const auto w = head_gates(G, h, x);
  double s = 0.0;
  for (std::size_t i = 0; i < G.N(); ++i) {
    const double lin = dot(G.expert(h, i, k), x);
    s += w[i] * (spec.variant == Variant::GatedValue ? activation_eval(act, lin, 0) : lin);
  }
  return spec.variant == Variant::GatedSDPA ? activation_eval(act, s, 0) : s;
}

double eval_model(const MixingMeasure& G, const ModelSpec& spec, std::span<const double> x) {
  check_dim(G, x);
  double f = 0.0;
  for (std::size_t h = 0; h < G.H(); ++h)
    for (std::size_t k = 0; k < G.K(); ++k)
      f += G.omega(h, k) * eval_component(G, spec, h, k, x);
  return f;
}

}  // namespace hmoe
