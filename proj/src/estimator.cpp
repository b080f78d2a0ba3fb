#include "hmoe/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "hmoe/error.hpp"
#include "hmoe/model.hpp"

namespace hmoe {

ParamLayout::ParamLayout(Shape shape) : shape_(shape) {
  gates_offset_ = shape.H * shape.K;
  experts_offset_ = gates_offset_ + shape.H * (shape.N - 1) * tri_size();
}

std::vector<double> ParamLayout::pack(const MixingMeasure& G) const {
  if (G.shape() != shape_) throw DimensionError("measure shape does not match parameter layout");
  std::vector<double> theta(size());
  std::copy(G.omegas().begin(), G.omegas().end(), theta.begin());
  std::size_t at = gates_offset_;
  for (std::size_t h = 0; h < shape_.H; ++h)
    for (std::size_t i = 0; i + 1 < shape_.N; ++i)
      for (std::size_t p = 0; p < shape_.d; ++p)
        for (std::size_t q = p; q < shape_.d; ++q) theta[at++] = G.gate(h, i, p, q);
  for (std::size_t h = 0; h < shape_.H; ++h)
    for (std::size_t i = 0; i < shape_.N; ++i)
      for (std::size_t k = 0; k < shape_.K; ++k)
        for (double v : G.expert(h, i, k)) theta[at++] = v;
  return theta;
}

void ParamLayout::unpack(std::span<const double> theta, MixingMeasure& G) const {
  if (theta.size() != size() || G.shape() != shape_)
    throw DimensionError("parameter vector does not match layout");
  std::copy_n(theta.begin(), gates_offset_, G.omegas().begin());
  std::size_t at = gates_offset_;
  for (std::size_t h = 0; h < shape_.H; ++h) {
    for (std::size_t i = 0; i + 1 < shape_.N; ++i)
      for (std::size_t p = 0; p < shape_.d; ++p)
        for (std::size_t q = p; q < shape_.d; ++q) {
          G.gate(h, i, p, q) = theta[at];
          G.gate(h, i, q, p) = theta[at];
          ++at;
        }
    auto last = G.gate(h, shape_.N - 1);
    std::fill(last.begin(), last.end(), 0.0);
  }
  for (std::size_t h = 0; h < shape_.H; ++h)
    for (std::size_t i = 0; i < shape_.N; ++i)
      for (std::size_t k = 0; k < shape_.K; ++k)
        for (double& v : G.expert(h, i, k)) v = theta[at++];
}

MixingMeasure ParamLayout::unpack(std::span<const double> theta) const {
  MixingMeasure G(shape_);
  unpack(theta, G);
  return G;
}

namespace {

using Arr = Eigen::ArrayXd;
using ArrN = Eigen::ArrayXXd;
using Mat = Eigen::MatrixXd;
using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ArrN logistic(const ArrN& z, double bias) { return ((-(z + bias)).exp() + 1.0).inverse(); }

/// Loss and (optionally) gradient accumulation over the whole dataset, in
/// fixed blocks of samples visited in order, so results are reproducible.
class SseKernel {
public:
  static constexpr Eigen::Index kBlock = 256;

  SseKernel(const MixingMeasure& G, const ModelSpec& spec)
      : G_(G), layout_(G.shape()), variant_(spec.variant), act_(spec.effective_activation()) {
    const auto& s = G.shape();
    tri_ = layout_.tri_size();
    gated_ = act_.type != ActivationType::Identity;
    coef_.resize(s.H);
    experts_.resize(s.H);
    heads_.resize(s.H);
    tri_scale_.resize(tri_);
    for (std::size_t h = 0; h < s.H; ++h) {
      // x^T M x = sum_t XX_t * coef_t with XX_t = x_p x_q over p <= q.
      coef_[h].resize(tri_, s.N);
      experts_[h].resize(s.d, s.N * s.K);
      for (std::size_t i = 0; i < s.N; ++i) {
        std::size_t t = 0;
        for (std::size_t p = 0; p < s.d; ++p)
          for (std::size_t q = p; q < s.d; ++q, ++t)
            coef_[h](t, i) = p == q ? G.gate(h, i, p, p) : G.gate(h, i, p, q) + G.gate(h, i, q, p);
        for (std::size_t k = 0; k < s.K; ++k)
          for (std::size_t p = 0; p < s.d; ++p) experts_[h](p, i * s.K + k) = G.expert(h, i, k)[p];
      }
    }
    std::size_t t = 0;
    for (std::size_t p = 0; p < s.d; ++p)
      for (std::size_t q = p; q < s.d; ++q) tri_scale_[t++] = p == q ? 1.0 : 2.0;
  }

  // With `cutoff`, stops once the running sum exceeds it (the terms are
  // nonnegative, so the full sum would too) and returns the partial sum.
  double run(const Dataset& data, std::vector<double>* grad,
             double cutoff = std::numeric_limits<double>::infinity()) {
    const auto& s = G_.shape();
    if (data.d != s.d) throw DimensionError("dataset dimension does not match the measure");
    if (data.X.size() != data.n * data.d || data.Y.size() != data.n)
      throw DimensionError("dataset arrays are inconsistent with (n, d)");
    if (grad) grad->assign(layout_.size(), 0.0);
    const auto n = static_cast<Eigen::Index>(data.n);
    const auto d = static_cast<Eigen::Index>(s.d);
    double sse = 0.0;
    for (Eigen::Index r0 = 0; r0 < n; r0 += kBlock) {
      const Eigen::Index B = std::min(kBlock, n - r0);
      X_ = RowMajorMap(data.X.data() + r0 * d, B, d);
      XX_.resize(B, static_cast<Eigen::Index>(tri_));
      Eigen::Index t = 0;
      for (Eigen::Index p = 0; p < d; ++p)
        for (Eigen::Index q = p; q < d; ++q) XX_.col(t++) = X_.col(p).cwiseProduct(X_.col(q));
      const Arr f = forward(B);
      const Arr resid = Eigen::Map<const Arr>(data.Y.data() + r0, B) - f;
      sse += resid.square().sum();
      if (grad) backward(-2.0 * resid, *grad);
      if (!(sse <= cutoff)) return sse;
    }
    return sse;
  }

private:
  struct HeadState {
    ArrN W;      // B x N gates
    ArrN V;      // B x NK expert values
    ArrN dV;     // B x NK expert derivatives
    ArrN mix;    // B x K inner mixtures
    ArrN comp;   // B x K component outputs
    ArrN outer;  // B x K outer activation derivatives
  };

  Arr forward(Eigen::Index B) {
    const auto& s = G_.shape();
    const auto N = static_cast<Eigen::Index>(s.N), K = static_cast<Eigen::Index>(s.K);
    Arr f = Arr::Zero(B);
    for (std::size_t h = 0; h < s.H; ++h) {
      HeadState& st = heads_[h];
      // Skinny products are written as column sweeps; d is tiny.
      logits_.setZero(B, N);
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index t = 0; t < XX_.cols(); ++t) logits_.col(i) += coef_[h](t, i) * XX_.col(t);
      top_ = logits_.rowwise().maxCoeff();
      st.W = (logits_.colwise() - top_).exp();
      st.W.colwise() /= st.W.rowwise().sum();

      z_.setZero(B, N * K);
      for (Eigen::Index c = 0; c < N * K; ++c)
        for (Eigen::Index p = 0; p < X_.cols(); ++p) z_.col(c) += experts_[h](p, c) * X_.col(p);
      if (variant_ == Variant::GatedValue && gated_) {
        st.V = logistic(z_, act_.bias);
        st.dV = st.V * (1.0 - st.V);
      } else {
        st.V = z_;
        st.dV.setOnes(B, N * K);
      }
      st.mix.setZero(B, K);
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index k = 0; k < K; ++k) st.mix.col(k) += st.W.col(i) * st.V.col(i * K + k);
      if (variant_ == Variant::GatedSDPA && gated_) {
        st.comp = logistic(st.mix, act_.bias);
        st.outer = st.comp * (1.0 - st.comp);
      } else {
        st.comp = st.mix;
        st.outer.setOnes(B, K);
      }
      for (Eigen::Index k = 0; k < K; ++k) f += G_.omega(h, k) * st.comp.col(k);
    }
    return f;
  }

  // Accumulates sum_b coef_b * df_b/dtheta into grad.
  void backward(const Arr& coef, std::vector<double>& grad) {
    const auto& s = G_.shape();
    const auto N = static_cast<Eigen::Index>(s.N), K = static_cast<Eigen::Index>(s.K);
    const auto d = static_cast<Eigen::Index>(s.d);
    const auto B = coef.size();
    for (std::size_t h = 0; h < s.H; ++h) {
      const HeadState& st = heads_[h];
      ArrN T(B, K);  // coef * omega * outer
      for (Eigen::Index k = 0; k < K; ++k) {
        grad[h * s.K + k] += (coef * st.comp.col(k)).sum();
        T.col(k) = coef * G_.omega(h, k) * st.outer.col(k);
      }
      if (N > 1) {
        ArrN dlogit = ArrN::Zero(B, N - 1);
        for (Eigen::Index j = 0; j + 1 < N; ++j)
          for (Eigen::Index k = 0; k < K; ++k)
            dlogit.col(j) += T.col(k) * (st.V.col(j * K + k) - st.mix.col(k));
        for (Eigen::Index j = 0; j + 1 < N; ++j) dlogit.col(j) *= st.W.col(j);
        double* gm = grad.data() + layout_.gates_offset() + h * (s.N - 1) * tri_;
        for (Eigen::Index j = 0; j + 1 < N; ++j)
          for (std::size_t t = 0; t < tri_; ++t)
            gm[j * tri_ + t] +=
                tri_scale_[t] * (XX_.col(static_cast<Eigen::Index>(t)) * dlogit.col(j)).sum();
      }
      ArrN S(B, N * K);
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index k = 0; k < K; ++k)
          S.col(i * K + k) = T.col(k) * st.W.col(i) * st.dV.col(i * K + k);
      double* g = grad.data() + layout_.experts_offset() + h * s.N * s.K * s.d;
      for (Eigen::Index c = 0; c < N * K; ++c)
        for (Eigen::Index p = 0; p < d; ++p) g[c * d + p] += (X_.col(p) * S.col(c)).sum();
    }
  }

  const MixingMeasure& G_;
  ParamLayout layout_;
  Variant variant_;
  ActivationKind act_;
  bool gated_ = false;
  std::size_t tri_ = 0;
  std::vector<Mat> coef_, experts_;
  std::vector<double> tri_scale_;
  std::vector<HeadState> heads_;
  ArrN X_, XX_, logits_, z_;
  Arr top_;
};

double norm2(std::span<const double> v) {
  return std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double sse_loss(const MixingMeasure& G, const Dataset& data, const ModelSpec& spec) {
  return SseKernel(G, spec).run(data, nullptr);
}

std::vector<double> loss_gradient(const MixingMeasure& G, const Dataset& data, const ModelSpec& spec) {
  std::vector<double> grad;
  SseKernel(G, spec).run(data, &grad);
  return grad;
}

void OptimizerConfig::validate() const {
  if (!(step > 0.0)) throw ConfigError("optimizer step must be > 0");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (!(shrink > 0.0 && shrink < 1.0)) throw ConfigError("backtracking shrink must lie in (0, 1)");
  if (!(armijo > 0.0 && armijo < 1.0)) throw ConfigError("Armijo constant must lie in (0, 1)");
  if (!(grad_tol_per_sample >= 0.0)) throw ConfigError("gradient tolerance must be >= 0");
  if (max_backtracks < 1) throw ConfigError("max_backtracks must be >= 1");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::EpochBudget: return "epoch_budget";
    case Termination::LineSearchFailed: return "line_search_failed";
  }
  return "?";
}

nlohmann::json to_json(const FitResult& r) {
  return {{"measure", to_json(r.measure)},
          {"final_sse", r.final_sse},
          {"epochs", r.epochs},
          {"termination", to_string(r.termination)},
          {"sse_trajectory", r.sse_trajectory}};
}

FitResult fit(const MixingMeasure& G0, const Dataset& data, const ModelSpec& spec,
              const OptimizerConfig& cfg) {
  cfg.validate();
  const ParamLayout layout(G0.shape());
  std::vector<double> theta = layout.pack(G0);
  std::vector<double> trial(theta.size());
  MixingMeasure current = layout.unpack(theta);
  MixingMeasure candidate = current;
  const double grad_tol = cfg.grad_tol_per_sample * static_cast<double>(data.n);

  auto fail = [](int epoch, const std::string& what) {
    std::ostringstream os;
    os << "non-finite " << what << " at epoch " << epoch;
    throw NumericalError(os.str());
  };

  FitResult result;
  std::vector<double> grad;
  double loss = SseKernel(current, spec).run(data, &grad);
  if (!std::isfinite(loss)) fail(0, "loss");
  result.sse_trajectory.push_back(loss);
  result.termination = Termination::EpochBudget;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (!all_finite(grad)) fail(epoch, "gradient");
    const double gsq = norm2(grad);
    if (std::sqrt(gsq) <= grad_tol) {
      result.termination = Termination::GradientTolerance;
      break;
    }
    double t = cfg.step;
    bool accepted = false;
    double next = loss;
    for (int b = 0; b < cfg.max_backtracks; ++b, t *= cfg.shrink) {
      for (std::size_t j = 0; j < theta.size(); ++j) trial[j] = theta[j] - t * grad[j];
      layout.unpack(trial, candidate);
      const double target = loss - cfg.armijo * t * gsq;
      next = SseKernel(candidate, spec).run(data, nullptr, target);
      if (std::isfinite(next) && next <= target) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      result.termination = Termination::LineSearchFailed;
      break;
    }
    theta.swap(trial);
    std::swap(current, candidate);
    loss = SseKernel(current, spec).run(data, &grad);
    if (!std::isfinite(loss)) fail(epoch + 1, "loss");
    result.sse_trajectory.push_back(loss);
    ++result.epochs;
  }
  // Gradient check for the final iterate of an exhausted budget.
  if (result.termination == Termination::EpochBudget && std::sqrt(norm2(grad)) <= grad_tol)
    result.termination = Termination::GradientTolerance;

  result.measure = std::move(current);
  result.final_sse = loss;
  return result;
}

MixingMeasure init_near_truth(const MixingMeasure& truth, std::size_t K_fit, std::size_t n,
                              std::mt19937_64& rng, const InitConfig& cfg) {
  const auto& s = truth.shape();
  if (K_fit < s.K)
    throw ConfigError("K_fit (" + std::to_string(K_fit) + ") must be >= K* (" + std::to_string(s.K) + ")");
  if (n == 0) throw ConfigError("sample size must be >= 1");
  MixingMeasure G({s.H, s.N, K_fit, s.d});

  std::vector<std::size_t> copies(s.K, 0);
  for (std::size_t k = 0; k < K_fit; ++k) ++copies[k % s.K];
  for (std::size_t h = 0; h < s.H; ++h) {
    for (std::size_t i = 0; i < s.N; ++i) {
      std::copy(truth.gate(h, i).begin(), truth.gate(h, i).end(), G.gate(h, i).begin());
      for (std::size_t k = 0; k < K_fit; ++k) {
        const auto src = truth.expert(h, i, k % s.K);
        std::copy(src.begin(), src.end(), G.expert(h, i, k).begin());
      }
    }
    for (std::size_t k = 0; k < K_fit; ++k)
      G.omega(h, k) = truth.omega(h, k % s.K) / static_cast<double>(copies[k % s.K]);
  }

  const double radius = cfg.scale * std::pow(static_cast<double>(n), -cfg.exponent);
  if (radius == 0.0) return G;
  const ParamLayout layout(G.shape());
  auto theta = layout.pack(G);
  std::uniform_real_distribution<double> jitter(-radius, radius);
  for (double& v : theta) v += jitter(rng);
  layout.unpack(theta, G);
  return G;
}

}  // namespace hmoe
