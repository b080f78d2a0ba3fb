#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hmoe {

/// Shape of a three-level mixing measure: heads x channels, with N inner
/// experts per head sharing the head's gating matrices.
struct Shape {
  std::size_t H = 0;  // heads
  std::size_t N = 0;  // experts per head
  std::size_t K = 0;  // channels
  std::size_t d = 0;  // input dimension

  bool operator==(const Shape&) const = default;
};

/// Weights omega[h][k], gating matrices M[h][i] (d x d, row-major) and expert
/// vectors a[h][i][k]. Storage is flat; the accessors return views.
class MixingMeasure {
public:
  MixingMeasure() = default;
  explicit MixingMeasure(Shape shape);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t H() const noexcept { return shape_.H; }
  std::size_t N() const noexcept { return shape_.N; }
  std::size_t K() const noexcept { return shape_.K; }
  std::size_t d() const noexcept { return shape_.d; }

  double& omega(std::size_t h, std::size_t k) { return omega_[h * shape_.K + k]; }
  double omega(std::size_t h, std::size_t k) const { return omega_[h * shape_.K + k]; }

  std::span<double> gate(std::size_t h, std::size_t i) {
    return {gates_.data() + (h * shape_.N + i) * shape_.d * shape_.d, shape_.d * shape_.d};
  }
  std::span<const double> gate(std::size_t h, std::size_t i) const {
    return {gates_.data() + (h * shape_.N + i) * shape_.d * shape_.d, shape_.d * shape_.d};
  }
  double& gate(std::size_t h, std::size_t i, std::size_t p, std::size_t q) {
    return gate(h, i)[p * shape_.d + q];
  }
  double gate(std::size_t h, std::size_t i, std::size_t p, std::size_t q) const {
    return gate(h, i)[p * shape_.d + q];
  }

  std::span<double> expert(std::size_t h, std::size_t i, std::size_t k) {
    return {experts_.data() + ((h * shape_.N + i) * shape_.K + k) * shape_.d, shape_.d};
  }
  std::span<const double> expert(std::size_t h, std::size_t i, std::size_t k) const {
    return {experts_.data() + ((h * shape_.N + i) * shape_.K + k) * shape_.d, shape_.d};
  }

  std::span<double> omegas() noexcept { return omega_; }
  std::span<const double> omegas() const noexcept { return omega_; }

  /// Replace every gating matrix by its symmetric part (M + M^T) / 2.
  void symmetrize();

  /// Subtract each head's last gating matrix from all of that head's
  /// matrices. Gate values are unchanged; afterwards M[h][N-1] == 0.
  void normalize_gates();

  bool operator==(const MixingMeasure&) const = default;

private:
  Shape shape_{};
  std::vector<double> omega_;
  std::vector<double> gates_;
  std::vector<double> experts_;
};

enum class ActivationType { Identity, SigmoidWithBias };

struct ActivationKind {
  ActivationType type = ActivationType::Identity;
  double bias = 0.0;

  static ActivationKind identity() { return {}; }
  static ActivationKind sigmoid(double bias) { return {ActivationType::SigmoidWithBias, bias}; }

  bool operator==(const ActivationKind&) const = default;
};

enum class Variant { MHA, GatedValue, GatedSDPA };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

/// Model variant plus activation. MHA always evaluates with the identity.
struct ModelSpec {
  Variant variant = Variant::MHA;
  ActivationKind activation{};

  ActivationKind effective_activation() const {
    return variant == Variant::MHA ? ActivationKind::identity() : activation;
  }
};

/// A violated modelling assumption with the offending indices, e.g.
/// {"A.3", "M[1][1] is not the zero matrix"}.
struct Violation {
  std::string assumption;
  std::string detail;
};

/// Checks A.2-A.5 style conditions. Shape consistency and the A.3 structure
/// (symmetry, last matrix zero) are always checked; the weight, gate and
/// distinctness conditions only when `as_ground_truth` is set.
std::vector<Violation> validate_measure(const MixingMeasure& G, bool as_ground_truth);

nlohmann::json to_json(const MixingMeasure& G);
/// Parses {H,N,K,d,omega,M,a}; throws DimensionError on ragged arrays.
MixingMeasure measure_from_json(const nlohmann::json& j);

MixingMeasure load_measure(const std::string& path);
void save_measure(const MixingMeasure& G, const std::string& path);

/// The H=2, N=2, K=2, d=2 ground truth used in all experiments.
MixingMeasure reference_measure();

}  // namespace hmoe
