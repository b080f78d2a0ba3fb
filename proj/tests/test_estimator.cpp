#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hmoe/data.hpp"
#include "hmoe/error.hpp"
#include "hmoe/estimator.hpp"
#include "hmoe/model.hpp"
#include "support.hpp"

using namespace hmoe;

namespace {

const ModelSpec kSpecs[] = {{Variant::MHA, {}},
                            {Variant::GatedValue, ActivationKind::sigmoid(0.5)},
                            {Variant::GatedSDPA, ActivationKind::sigmoid(0.5)}};

double max_rel_fd_error(const MixingMeasure& G, const Dataset& data, const ModelSpec& spec) {
  const ParamLayout layout(G.shape());
  const auto theta = layout.pack(G);
  const auto g = loss_gradient(G, data, spec);
  EXPECT_EQ(g.size(), theta.size());
  double worst = 0;
  const double h = 1e-5;
  for (std::size_t j = 0; j < theta.size(); ++j) {
    auto tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    const double fd = (sse_loss(layout.unpack(tp), data, spec) - sse_loss(layout.unpack(tm), data, spec)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[j]) / std::max(1.0, std::abs(g[j])));
  }
  return worst;
}

}  // namespace

TEST(Layout, PackUnpackRoundTrip) {
  std::mt19937_64 rng(1);
  const auto G = fixtures::random_measure({2, 3, 2, 3}, rng);
  const ParamLayout layout(G.shape());
  EXPECT_EQ(layout.size(), 2u * 2 + 2 * 2 * 6 + 2 * 3 * 2 * 3);
  EXPECT_EQ(layout.unpack(layout.pack(G)), G);
}

TEST(Loss, SinglePointUnitResidual) {
  const auto G = reference_measure();
  const ModelSpec spec = kSpecs[1];
  Dataset data;
  data.n = 1;
  data.d = 2;
  data.X = {0.3, -0.4};
  data.Y = {eval_model(G, spec, data.row(0)) + 1.0};
  EXPECT_NEAR(sse_loss(G, data, spec), 1.0, 1e-14);
}

TEST(Loss, NoiselessDataAtTruthIsZero) {
  const auto G = reference_measure();
  for (const auto& spec : kSpecs) {
    const auto data = generate_dataset(G, spec, 700, 0.0, 3);
    EXPECT_LE(sse_loss(G, data, spec), 1e-18 * 700);
    double gn = 0;
    for (double v : loss_gradient(G, data, spec)) gn += v * v;
    EXPECT_LT(std::sqrt(gn), 1e-10);
  }
}

TEST(Loss, NoiseLevelAtTruth) {
  const std::size_t n = 4000;
  const double nu = 0.1;
  const auto G = reference_measure();
  const auto data = generate_dataset(G, kSpecs[1], n, nu, 99);
  const double sse = sse_loss(G, data, kSpecs[1]);
  EXPECT_NEAR(sse, n * nu * nu, 3 * std::sqrt(2.0 * n) * nu * nu);
}

TEST(Loss, MatchesModelEvaluation) {
  std::mt19937_64 rng(4);
  const auto G = fixtures::random_measure({2, 3, 2, 2}, rng);
  for (const auto& spec : kSpecs) {
    const auto data = generate_dataset(G, spec, 600, 0.3, 8);
    const auto H = fixtures::random_measure({2, 3, 2, 2}, rng);
    double direct = 0;
    for (std::size_t j = 0; j < data.n; ++j) {
      const double r = eval_model(H, spec, data.row(j)) - data.Y[j];
      direct += r * r;
    }
    EXPECT_NEAR(sse_loss(H, data, spec), direct, 1e-11 * direct);
  }
}

TEST(Gradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 3);
  for (int t = 0; t < 20; ++t) {
    const Shape s{dim(rng), dim(rng) + (t % 2), dim(rng), dim(rng)};
    const auto truth = fixtures::random_measure(s, rng);
    const auto G = fixtures::random_measure(s, rng);
    const auto& spec = kSpecs[t % 3];
    const std::size_t n = t % 4 == 0 ? 300 : 40;
    const auto data = generate_dataset(truth, spec, n, 0.1, 1000 + t);
    EXPECT_LT(max_rel_fd_error(G, data, spec), 1e-5) << "triple " << t;
  }
}

TEST(Gradient, WeightBlockIsResidualTimesComponent) {
  std::mt19937_64 rng(6);
  const auto G = fixtures::random_measure({2, 2, 3, 2}, rng);
  const auto truth = fixtures::random_measure({2, 2, 3, 2}, rng);
  const ModelSpec spec = kSpecs[2];
  const auto data = generate_dataset(truth, spec, 150, 0.1, 2);
  const auto g = loss_gradient(G, data, spec);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t k = 0; k < 3; ++k) {
      double direct = 0;
      for (std::size_t j = 0; j < data.n; ++j)
        direct += 2 * (eval_model(G, spec, data.row(j)) - data.Y[j]) * eval_component(G, spec, h, k, data.row(j));
      EXPECT_NEAR(g[h * 3 + k], direct, 1e-10 * std::max(1.0, std::abs(direct)));
    }
}

TEST(Gradient, ClosedFormWeightIsStationary) {
  // One component: the least-squares weight has a vanishing weight gradient.
  MixingMeasure G({1, 1, 1, 1});
  G.expert(0, 0, 0)[0] = 0.7;
  const ModelSpec spec = kSpecs[1];
  MixingMeasure truth = G;
  truth.omega(0, 0) = 1.3;
  const auto data = generate_dataset(truth, spec, 500, 0.2, 5);
  double num = 0, den = 0;
  for (std::size_t j = 0; j < data.n; ++j) {
    const double c = eval_component(G, spec, 0, 0, data.row(j));
    num += c * data.Y[j];
    den += c * c;
  }
  G.omega(0, 0) = num / den;
  EXPECT_LT(std::abs(loss_gradient(G, data, spec)[0]), 1e-8 * data.n);
}

TEST(Fit, TrajectoryIsMonotone) {
  const auto truth = reference_measure();
  for (const auto& spec : kSpecs) {
    const auto data = generate_dataset(truth, spec, 300, 0.1, 17);
    std::mt19937_64 rng(3);
    const auto G0 = init_near_truth(truth, 3, 300, rng);
    OptimizerConfig cfg;
    cfg.max_epochs = 60;
    const auto r = fit(G0, data, spec, cfg);
    ASSERT_EQ(r.sse_trajectory.size(), std::size_t(r.epochs) + 1);
    for (std::size_t e = 1; e < r.sse_trajectory.size(); ++e)
      EXPECT_LE(r.sse_trajectory[e], r.sse_trajectory[e - 1]);
    EXPECT_DOUBLE_EQ(r.final_sse, r.sse_trajectory.back());
    EXPECT_DOUBLE_EQ(r.final_sse, sse_loss(r.measure, data, spec));
  }
}

TEST(Fit, KeepsLastGatePinnedAndSymmetric) {
  const auto truth = reference_measure();
  const auto data = generate_dataset(truth, kSpecs[1], 200, 0.1, 4);
  std::mt19937_64 rng(9);
  OptimizerConfig cfg;
  cfg.max_epochs = 25;
  const auto r = fit(init_near_truth(truth, 4, 200, rng), data, kSpecs[1], cfg);
  for (std::size_t h = 0; h < 2; ++h) {
    for (double v : r.measure.gate(h, 1)) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(r.measure.gate(h, 0, 0, 1), r.measure.gate(h, 0, 1, 0));
  }
}

TEST(Fit, Deterministic) {
  const auto truth = reference_measure();
  const auto data = generate_dataset(truth, kSpecs[2], 250, 0.1, 6);
  OptimizerConfig cfg;
  cfg.max_epochs = 30;
  std::mt19937_64 r1(5), r2(5);
  const auto a = fit(init_near_truth(truth, 3, 250, r1), data, kSpecs[2], cfg);
  const auto b = fit(init_near_truth(truth, 3, 250, r2), data, kSpecs[2], cfg);
  EXPECT_EQ(a.measure, b.measure);
  EXPECT_EQ(a.sse_trajectory, b.sse_trajectory);
}

TEST(Fit, StartsAtNoiselessOptimum) {
  const auto truth = reference_measure();
  const auto data = generate_dataset(truth, kSpecs[0], 300, 0.0, 1);
  const auto r = fit(truth, data, kSpecs[0], {});
  EXPECT_LE(r.epochs, 1);
  EXPECT_EQ(r.termination, Termination::GradientTolerance);
}

TEST(Fit, NonFiniteDataNamesEpoch) {
  const auto truth = reference_measure();
  auto data = generate_dataset(truth, kSpecs[0], 20, 0.1, 1);
  data.Y[3] = std::nan("");
  try {
    fit(truth, data, kSpecs[0], {});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(Fit, RejectsBadOptimizerConstants) {
  OptimizerConfig cfg;
  cfg.shrink = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.step = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Init, ZeroScaleDuplicatesChannels) {
  const auto truth = reference_measure();
  std::mt19937_64 rng(1);
  const auto G = init_near_truth(truth, 3, 1000, rng, {0.0, 0.083});
  EXPECT_EQ(G.K(), 3u);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_DOUBLE_EQ(G.omega(h, 0), truth.omega(h, 0) / 2);
    EXPECT_DOUBLE_EQ(G.omega(h, 2), truth.omega(h, 0) / 2);
    EXPECT_DOUBLE_EQ(G.omega(h, 1), truth.omega(h, 1));
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_TRUE(std::ranges::equal(G.expert(h, i, 2), truth.expert(h, i, 0)));
      EXPECT_TRUE(std::ranges::equal(G.gate(h, i), truth.gate(h, i)));
    }
  }
}

TEST(Init, PerturbationBound) {
  const auto truth = reference_measure();
  std::mt19937_64 r0(1), r1(2);
  const auto base = init_near_truth(truth, 4, 10000, r0, {0.0, 0.083});
  const auto G = init_near_truth(truth, 4, 10000, r1);
  const ParamLayout layout(base.shape());
  const auto a = layout.pack(base), b = layout.pack(G);
  const double bound = std::pow(1e4, -0.083);
  EXPECT_NEAR(bound, 0.4656, 1e-4);
  double worst = 0;
  for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  EXPECT_LE(worst, bound);
  EXPECT_GT(worst, 0.5 * bound);

  std::mt19937_64 r2(3);
  const auto far = init_near_truth(truth, 4, 100000000, r2);
  const auto c = layout.pack(far);
  double big = 0;
  for (std::size_t j = 0; j < a.size(); ++j) big = std::max(big, std::abs(a[j] - c[j]));
  EXPECT_LE(big, std::pow(1e8, -0.083));
}

TEST(Init, TooFewChannelsThrows) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(init_near_truth(reference_measure(), 1, 100, rng), ConfigError);
}
