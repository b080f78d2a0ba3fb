#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmoe/measure.hpp"

namespace hmoe {

/// Covariates (n x d, row-major) and responses. `meta` records provenance.
struct Dataset {
  struct Meta {
    Variant variant = Variant::MHA;
    double noise_sd = 0.0;
    std::uint64_t seed = 0;
  };

  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> X;
  std::vector<double> Y;
  Meta meta;

  std::span<const double> row(std::size_t i) const { return {X.data() + i * d, d}; }
  bool operator==(const Dataset& o) const { return n == o.n && d == o.d && X == o.X && Y == o.Y; }
};

/// Free-parameter layout of a measure with a given shape:
///   [ omega (H*K) | upper triangles of M[h][i], i < N-1 | a (H*N*K*d) ].
/// The last gating matrix of each head is not a parameter and stays zero.
class ParamLayout {
public:
  explicit ParamLayout(Shape shape);

  std::size_t size() const noexcept { return experts_offset_ + shape_.H * shape_.N * shape_.K * shape_.d; }
  std::size_t omega_offset() const noexcept { return 0; }
  std::size_t gates_offset() const noexcept { return gates_offset_; }
  std::size_t experts_offset() const noexcept { return experts_offset_; }
  std::size_t tri_size() const noexcept { return shape_.d * (shape_.d + 1) / 2; }
  const Shape& shape() const noexcept { return shape_; }

  std::vector<double> pack(const MixingMeasure& G) const;
  /// Writes theta into G (which must have this layout's shape); gating
  /// matrices come out symmetric with M[h][N-1] == 0.
  void unpack(std::span<const double> theta, MixingMeasure& G) const;
  MixingMeasure unpack(std::span<const double> theta) const;

private:
  Shape shape_;
  std::size_t gates_offset_;
  std::size_t experts_offset_;
};

/// Sum of squared residuals over the dataset.
double sse_loss(const MixingMeasure& G, const Dataset& data, const ModelSpec& spec);

/// Analytic gradient of sse_loss w.r.t. the free parameters (ParamLayout order).
std::vector<double> loss_gradient(const MixingMeasure& G, const Dataset& data, const ModelSpec& spec);

struct OptimizerConfig {
  double step = 0.05;           // initial step of every epoch
  int max_epochs = 1000;
  double shrink = 0.5;          // backtracking factor
  double armijo = 1e-4;         // sufficient-decrease constant
  double grad_tol_per_sample = 1e-8;  // stop when |grad| <= this * n
  int max_backtracks = 30;

  /// Throws ConfigError when a constant is out of range.
  void validate() const;
};

enum class Termination { GradientTolerance, EpochBudget, LineSearchFailed };
std::string to_string(Termination t);

struct FitResult {
  MixingMeasure measure;
  double final_sse = 0.0;
  int epochs = 0;
  std::vector<double> sse_trajectory;  // initial SSE, then one entry per accepted epoch
  Termination termination = Termination::EpochBudget;
};

nlohmann::json to_json(const FitResult& r);

/// Full-batch gradient descent on the SSE with Armijo backtracking. Every
/// epoch starts at cfg.step and shrinks by cfg.shrink until
///   SSE(theta - t g) <= SSE(theta) - armijo * t * |g|^2.
/// Throws NumericalError (naming the epoch) on a non-finite loss or gradient.
FitResult fit(const MixingMeasure& G0, const Dataset& data, const ModelSpec& spec,
              const OptimizerConfig& cfg);

struct InitConfig {
  double scale = 1.0;       // c in c * n^(-exponent)
  double exponent = 0.083;
};

/// Over-specified starting point near the truth: channels beyond K* copy
/// channel (k mod K*), the weights of copies are split evenly, then every
/// free parameter gets an independent U(-c n^-e, c n^-e) perturbation.
MixingMeasure init_near_truth(const MixingMeasure& truth, std::size_t K_fit, std::size_t n,
                              std::mt19937_64& rng, const InitConfig& cfg = {});

}  // namespace hmoe
