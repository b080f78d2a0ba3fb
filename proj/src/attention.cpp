#include "hmoe/attention.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hmoe/error.hpp"
#include "hmoe/model.hpp"

namespace hmoe {

std::string to_string(GatePlacement p) {
  switch (p) {
    case GatePlacement::None: return "none";
    case GatePlacement::AfterValue: return "after_value";
    case GatePlacement::AfterSDPA: return "after_sdpa";
  }
  return "?";
}

GatePlacement placement_from_string(const std::string& name) {
  if (name == "none") return GatePlacement::None;
  if (name == "after_value" || name == "value") return GatePlacement::AfterValue;
  if (name == "after_sdpa" || name == "sdpa") return GatePlacement::AfterSDPA;
  throw ConfigError("unknown gate placement '" + name + "'");
}

void AttentionWeights::validate() const {
  if (heads.empty() || N == 0 || d == 0 || d_v == 0)
    throw DimensionError("attention layer needs H, N, d, d_v >= 1");
  for (const auto& hd : heads) {
    const bool ok = hd.W_Q.rows() == Eigen::Index(d) && hd.W_Q.cols() == Eigen::Index(d_v) &&
                    hd.W_K.rows() == Eigen::Index(d) && hd.W_K.cols() == Eigen::Index(d_v) &&
                    hd.W_V.rows() == Eigen::Index(d) && hd.W_V.cols() == Eigen::Index(d_v) &&
                    hd.W_O.rows() == Eigen::Index(d_v) && hd.W_O.cols() == Eigen::Index(d);
    if (!ok) throw DimensionError("attention head projections do not match (d, d_v)");
  }
  if (placement == GatePlacement::None && activation.type != ActivationType::Identity)
    throw ConfigError("placement 'none' requires the identity activation");
}

AttentionWeights AttentionWeights::random(std::size_t H, std::size_t N, std::size_t d,
                                          std::size_t d_v, GatePlacement placement,
                                          ActivationKind act, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  auto fill = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = g(rng);
    return m;
  };
  AttentionWeights w;
  w.N = N;
  w.d = d;
  w.d_v = d_v;
  w.placement = placement;
  w.activation = placement == GatePlacement::None ? ActivationKind::identity() : act;
  for (std::size_t h = 0; h < H; ++h) {
    AttentionHead hd;
    hd.W_Q = fill(d, d_v);
    hd.W_K = fill(d, d_v);
    hd.W_V = fill(d, d_v);
    hd.W_O = fill(d_v, d);
    w.heads.push_back(std::move(hd));
  }
  return w;
}

namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - top).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Eigen::MatrixXd apply(const ActivationKind& act, const Eigen::MatrixXd& m) {
  return m.unaryExpr([&act](double z) { return activation_eval(act, z, 0); });
}

Eigen::MatrixXd bilinear(const AttentionHead& hd, std::size_t d_v) {
  return hd.W_Q * hd.W_K.transpose() / std::sqrt(static_cast<double>(d_v));
}

}  // namespace

Eigen::MatrixXd attention_forward(const AttentionWeights& w, const Eigen::MatrixXd& X) {
  w.validate();
  if (X.rows() != Eigen::Index(w.N) || X.cols() != Eigen::Index(w.d))
    throw DimensionError("input sequence must be N x d");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(w.N, w.d);
  for (const auto& hd : w.heads) {
    const Eigen::MatrixXd scores = softmax_rows(X * bilinear(hd, w.d_v) * X.transpose());
    const Eigen::MatrixXd values = X * hd.W_V;
    switch (w.placement) {
      case GatePlacement::None: out += scores * values * hd.W_O; break;
      case GatePlacement::AfterValue: out += scores * apply(w.activation, values) * hd.W_O; break;
      case GatePlacement::AfterSDPA: out += apply(w.activation, scores * values) * hd.W_O; break;
    }
  }
  return out;
}

Eigen::MatrixXd extraction_matrix(std::size_t i, std::size_t N, std::size_t d) {
  if (i >= N) throw DimensionError("row index out of range");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d, N * d);
  J.block(0, i * d, d, d).setIdentity();
  return J;
}

Eigen::VectorXd vectorize(const Eigen::MatrixXd& X) {
  Eigen::VectorXd x(X.size());
  for (Eigen::Index r = 0; r < X.rows(); ++r) x.segment(r * X.cols(), X.cols()) = X.row(r).transpose();
  return x;
}

MixingMeasure attention_entry_as_hmoe(const AttentionWeights& w, std::size_t i, std::size_t i_out) {
  w.validate();
  if (i >= w.N || i_out >= w.d) throw DimensionError("attention entry index out of range");
  const std::size_t D = w.N * w.d;
  MixingMeasure G({w.H(), w.N, w.d_v, D});
  const Eigen::MatrixXd Ji = extraction_matrix(i, w.N, w.d);
  for (std::size_t h = 0; h < w.H(); ++h) {
    const auto& hd = w.heads[h];
    const Eigen::MatrixXd P = bilinear(hd, w.d_v);
    for (std::size_t k = 0; k < w.d_v; ++k) G.omega(h, k) = hd.W_O(k, i_out);
    for (std::size_t j = 0; j < w.N; ++j) {
      const Eigen::MatrixXd Jj = extraction_matrix(j, w.N, w.d);
      const Eigen::MatrixXd M = Ji.transpose() * P * Jj;
      const Eigen::MatrixXd S = 0.5 * (M + M.transpose());
      auto gate = G.gate(h, j);
      for (std::size_t p = 0; p < D; ++p)
        for (std::size_t q = 0; q < D; ++q) gate[p * D + q] = S(p, q);
      const Eigen::MatrixXd A = Jj.transpose() * hd.W_V;  // D x d_v
      for (std::size_t k = 0; k < w.d_v; ++k) {
        auto a = G.expert(h, j, k);
        for (std::size_t p = 0; p < D; ++p) a[p] = A(p, k);
      }
    }
  }
  return G;
}

ModelSpec entry_model_spec(const AttentionWeights& w) {
  switch (w.placement) {
    case GatePlacement::None: return {Variant::MHA, ActivationKind::identity()};
    case GatePlacement::AfterValue: return {Variant::GatedValue, w.activation};
    case GatePlacement::AfterSDPA: return {Variant::GatedSDPA, w.activation};
  }
  return {};
}

double verify_equivalence(const AttentionWeights& w, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd direct = attention_forward(w, X);
  const Eigen::VectorXd x = vectorize(X);
  const std::vector<double> xv(x.data(), x.data() + x.size());
  const ModelSpec spec = entry_model_spec(w);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.N; ++i)
    for (std::size_t i_out = 0; i_out < w.d; ++i_out) {
      const MixingMeasure G = attention_entry_as_hmoe(w, i, i_out);
      worst = std::max(worst, std::abs(direct(i, i_out) - eval_model(G, spec, xv)));
    }
  return worst;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                            const char* what) {
  if (!j.is_array() || j.size() != rows)
    throw DimensionError(std::string("attention JSON: ") + what + " has the wrong row count");
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw DimensionError(std::string("attention JSON: ") + what + " has the wrong column count");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const AttentionWeights& w) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& hd : w.heads)
    heads.push_back({{"W_Q", matrix_json(hd.W_Q)},
                     {"W_K", matrix_json(hd.W_K)},
                     {"W_V", matrix_json(hd.W_V)},
                     {"W_O", matrix_json(hd.W_O)}});
  return {{"N", w.N},
          {"d", w.d},
          {"d_v", w.d_v},
          {"placement", to_string(w.placement)},
          {"activation",
           {{"type", w.activation.type == ActivationType::Identity ? "identity" : "sigmoid"},
            {"bias", w.activation.bias}}},
          {"heads", heads}};
}

AttentionWeights attention_from_json(const nlohmann::json& j) {
  AttentionWeights w;
  try {
    w.N = j.at("N").get<std::size_t>();
    w.d = j.at("d").get<std::size_t>();
    w.d_v = j.at("d_v").get<std::size_t>();
    w.placement = placement_from_string(j.value("placement", std::string("none")));
    if (j.contains("activation")) {
      const auto& a = j.at("activation");
      const auto type = a.value("type", std::string("identity"));
      w.activation = type == "identity" ? ActivationKind::identity()
                                        : ActivationKind::sigmoid(a.value("bias", 0.0));
    }
    for (const auto& hj : j.at("heads"))
      w.heads.push_back({matrix_from(hj.at("W_Q"), w.d, w.d_v, "W_Q"),
                         matrix_from(hj.at("W_K"), w.d, w.d_v, "W_K"),
                         matrix_from(hj.at("W_V"), w.d, w.d_v, "W_V"),
                         matrix_from(hj.at("W_O"), w.d_v, w.d, "W_O")});
  } catch (const nlohmann::json::exception& e) {
    throw DimensionError(std::string("attention JSON: ") + e.what());
  }
  w.validate();
  return w;
}

}  // namespace hmoe
