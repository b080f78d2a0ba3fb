#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hmoe/error.hpp"
#include "hmoe/estimator.hpp"
#include "hmoe/voronoi.hpp"
#include "support.hpp"

using namespace hmoe;

namespace {

const ModelSpec kGated{Variant::GatedValue, ActivationKind::sigmoid(0.5)};
const QuadratureGrid& grid() {
  static const auto g = QuadratureGrid::uniform(4096, 2, 77);
  return g;
}

MixingMeasure duplicated_truth() {
  std::mt19937_64 rng(1);
  return init_near_truth(reference_measure(), 3, 1000, rng, {0.0, 0.083});
}

// Moves every expert of G by a fixed pattern scaled by t.
MixingMeasure shift_experts(MixingMeasure G, double t) {
  std::size_t c = 0;
  for (std::size_t h = 0; h < G.H(); ++h)
    for (std::size_t i = 0; i < G.N(); ++i)
      for (std::size_t k = 0; k < G.K(); ++k)
        for (auto& v : G.expert(h, i, k)) v += t * std::sin(1.0 + double(c++));
  return G;
}

double brute_min_cost(const std::vector<double>& cost, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += cost[i * n + p[i]];
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

}  // namespace

TEST(Distance, IdenticalComponentsAreZero) {
  const auto G = reference_measure();
  EXPECT_EQ(component_distance(G, G, {1, 0}, {1, 0}, kGated, grid()), 0.0);
  EXPECT_EQ(function_distance(G, G, kGated, grid()), 0.0);
}

TEST(Distance, ShiftedLinearExpert) {
  // a^T x moved by delta e_1: the difference delta x_1 has RMS |delta| / sqrt(3).
  MixingMeasure A({1, 1, 1, 2});
  A.omega(0, 0) = 1;
  A.expert(0, 0, 0)[0] = 0.4;
  auto B = A;
  B.expert(0, 0, 0)[0] += 0.05;
  const auto big = QuadratureGrid::uniform(40000, 2, 5);
  EXPECT_NEAR(component_distance(B, A, {0, 0}, {0, 0}, {Variant::MHA, {}}, big), 0.05 / std::sqrt(3.0), 5e-4);
}

TEST(Cells, TruthAssignsToItself) {
  const auto G = reference_measure();
  const auto a = assign_cells(G, G, kGated, grid());
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(a.cell({h, k}), (ComponentId{h, k}));
      EXPECT_EQ(a.permutation({h, k}), (std::vector<std::size_t>{0, 1}));
    }
}

TEST(Cells, DuplicatedChannelsShareACell) {
  const auto a = assign_cells(duplicated_truth(), reference_measure(), kGated, grid());
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_EQ(a.members({h, 0}), (std::vector<ComponentId>{{h, 0}, {h, 2}}));
    EXPECT_EQ(a.members({h, 1}), (std::vector<ComponentId>{{h, 1}}));
  }
}

TEST(Loss, ZeroOnTruth) {
  const auto G = reference_measure();
  EXPECT_EQ(loss_L1(G, G, 1.0, kGated, grid()), 0.0);
  EXPECT_EQ(loss_L1(G, G, 2.0, kGated, grid()), 0.0);
  EXPECT_EQ(loss_L2(G, G, kGated, grid()), 0.0);
}

TEST(Loss, EvenSplitOfDuplicatedChannelsIsZero) {
  EXPECT_NEAR(loss_L2(duplicated_truth(), reference_measure(), kGated, grid()), 0.0, 1e-15);
}

TEST(Loss, UnevenSplitCountsOnlyTheWeightMismatch) {
  auto G = duplicated_truth();
  G.omega(0, 0) = 0.3;  // cell sum 0.3 + 0.5 = 0.8 against 1.0
  G.omega(1, 2) = 0.7;  // cell sum 0.4 + 0.7 = 1.1 against 0.8
  const double hand = std::abs(0.8 - 1.0) + std::abs(1.1 - 0.8);
  EXPECT_NEAR(loss_L2(G, reference_measure(), kGated, grid()), hand, 1e-14);
}

TEST(Loss, SingletonCellsMatchFirstPowerLoss) {
  const auto G = shift_experts(reference_measure(), 0.03);
  const auto& T = reference_measure();
  EXPECT_DOUBLE_EQ(loss_L2(G, T, kGated, grid()), loss_L1(G, T, 1.0, kGated, grid()));
}

TEST(Loss, HomogeneousInExpertOffsets) {
  const auto& T = reference_measure();
  const double one = loss_L1(shift_experts(T, 0.02), T, 1.0, kGated, grid());
  const double two = loss_L1(shift_experts(T, 0.04), T, 1.0, kGated, grid());
  EXPECT_GT(one, 0.0);
  EXPECT_NEAR(two, 2 * one, 1e-12);
}

TEST(Loss, SmallOffsetsShrinkWithExponent) {
  const auto& T = reference_measure();
  const auto G = shift_experts(T, 0.05);
  const double l1 = loss_L1(G, T, 1.0, kGated, grid());
  const double l15 = loss_L1(G, T, 1.5, kGated, grid());
  const double l2 = loss_L1(G, T, 2.0, kGated, grid());
  EXPECT_GT(l1, l15);
  EXPECT_GT(l15, l2);
}

TEST(Loss, ExponentBelowOneThrows) {
  const auto G = reference_measure();
  EXPECT_THROW(loss_L1(G, G, 0.5, kGated, grid()), ConfigError);
}

TEST(Adversarial, HandValueAtTen) {
  // Copies carry omega/2 + 1/200 and move each expert by 1/10 (two experts per head).
  const auto& T = reference_measure();
  const auto G = adversarial_sequence(T, 10, 1);
  const double hand = 2 * (2 * 0.005) + (1.0 + 0.01 + 0.8 + 0.01) * 2 * 0.1;
  EXPECT_NEAR(hand, 0.384, 1e-15);
  EXPECT_NEAR(loss_L1(G, T, 1.0, kGated, grid()), hand, 1e-12);
}

TEST(Adversarial, ApproachesDuplicatedTruth) {
  const auto& T = reference_measure();
  const auto G = adversarial_sequence(T, 1e6, 1);
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_NEAR(G.omega(h, 0), T.omega(h, 0) / 2, 1e-12);
    EXPECT_NEAR(G.expert(h, 1, 1)[0], T.expert(h, 1, 0)[0], 1e-5);
  }
}

TEST(Adversarial, FunctionToLossRatioVanishes) {
  const auto& T = reference_measure();
  std::vector<double> ratio;
  for (double n : {10.0, 30.0, 100.0, 300.0}) {
    const auto G = adversarial_sequence(T, n, 1);
    ratio.push_back(function_distance(G, T, kGated, grid()) / loss_L1(G, T, 1.0, kGated, grid()));
  }
  for (std::size_t j = 1; j < ratio.size(); ++j) EXPECT_LT(ratio[j], ratio[j - 1]);
  EXPECT_LT(ratio[2], 0.2 * ratio[0]);
}

TEST(Permutation, SmallAndLargeAgreeWithExhaustiveSearch) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t n : {1, 2, 4, 6, 7}) {
    std::vector<double> cost(n * n);
    for (auto& c : cost) c = u(rng);
    const auto p = min_cost_permutation(cost, n);
    std::vector<std::size_t> sorted = p;
    std::ranges::sort(sorted);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(sorted[i], i);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += cost[i * n + p[i]];
    EXPECT_NEAR(s, brute_min_cost(cost, n), 1e-12) << "n=" << n;
  }
}

TEST(Grid, SeededAndShared) {
  const auto a = QuadratureGrid::uniform(64, 3, 9), b = QuadratureGrid::uniform(64, 3, 9);
  EXPECT_EQ(a.points, b.points);
  EXPECT_NE(a.points, QuadratureGrid::uniform(64, 3, 10).points);
  for (double v : a.points) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}
