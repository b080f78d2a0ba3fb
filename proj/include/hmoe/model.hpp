#pragma once

#include <span>
#include <vector>

#include "hmoe/measure.hpp"

namespace hmoe {

/// Quadratic-form softmax gates w_i = exp(x^T M_i x) / sum_j exp(x^T M_j x).
/// `gates` holds N row-major d x d matrices back to back. Max-subtracted.
std::vector<double> softmax_gates(std::span<const double> gates, std::size_t d,
                                  std::span<const double> x);

/// Gates of head h of G at x.
std::vector<double> head_gates(const MixingMeasure& G, std::size_t h, std::span<const double> x);

/// phi(z), phi'(z) or phi''(z) for order 0, 1, 2.
double activation_eval(const ActivationKind& act, double z, int order);

/// The (h, k) component: the gated inner mixture of head h for channel k,
/// with the activation placed according to the variant.
double eval_component(const MixingMeasure& G, const ModelSpec& spec, std::size_t h, std::size_t k,
                      std::span<const double> x);

/// Regression function sum_h sum_k omega[h][k] * component(h, k)(x).
double eval_model(const MixingMeasure& G, const ModelSpec& spec, std::span<const double> x);

}  // namespace hmoe
