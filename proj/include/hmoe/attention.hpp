#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hmoe/measure.hpp"

namespace hmoe {

enum class GatePlacement { None, AfterValue, AfterSDPA };

std::string to_string(GatePlacement p);
GatePlacement placement_from_string(const std::string& name);

/// Per-head projection matrices of a (gated) multi-head self-attention layer.
struct AttentionHead {
  Eigen::MatrixXd W_Q;  // d x d_v
  Eigen::MatrixXd W_K;  // d x d_v
  Eigen::MatrixXd W_V;  // d x d_v
  Eigen::MatrixXd W_O;  // d_v x d
};

struct AttentionWeights {
  std::size_t N = 0;    // sequence length
  std::size_t d = 0;    // embedding dimension
  std::size_t d_v = 0;  // head dimension
  std::vector<AttentionHead> heads;
  GatePlacement placement = GatePlacement::None;
  ActivationKind activation{};

  std::size_t H() const noexcept { return heads.size(); }

  /// Shapes agree across heads; placement None requires the identity.
  void validate() const;

  /// Gaussian N(0, scale^2) entries for every projection.
  static AttentionWeights random(std::size_t H, std::size_t N, std::size_t d, std::size_t d_v,
                                 GatePlacement placement, ActivationKind act, std::uint64_t seed,
                                 double scale = 1.0);
};

/// sum_h softmax(X P_h X^T) [phi](X W_V,h) W_O,h with P_h = W_Q,h W_K,h^T / sqrt(d_v),
/// the activation inserted at the configured placement.
Eigen::MatrixXd attention_forward(const AttentionWeights& w, const Eigen::MatrixXd& X);

/// J_i = e_i^T (x) I_d, so that J_i vec(X) = x_i (row i of X).
Eigen::MatrixXd extraction_matrix(std::size_t i, std::size_t N, std::size_t d);

/// Row-major vectorization (x_1^T, ..., x_N^T)^T.
Eigen::VectorXd vectorize(const Eigen::MatrixXd& X);

/// The (i, i') output entry as a mixing measure over vec(X) in R^{N d}:
/// heads h, experts j (sequence positions), channels k < d_v, with
/// omega[h][k] = W_O,h(k, i'), M[h][j] = sym(J_i^T P_h J_j), a[h][j][k] = J_j^T W_V,h e_k.
MixingMeasure attention_entry_as_hmoe(const AttentionWeights& w, std::size_t i, std::size_t i_out);

/// Model variant that evaluates the entry structure for the layer's placement.
ModelSpec entry_model_spec(const AttentionWeights& w);

/// Max |forward(X)(i,i') - entry HMoE at vec(X)| over all entries.
double verify_equivalence(const AttentionWeights& w, const Eigen::MatrixXd& X);

nlohmann::json to_json(const AttentionWeights& w);
AttentionWeights attention_from_json(const nlohmann::json& j);

}  // namespace hmoe
