#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmoe/estimator.hpp"
#include "hmoe/measure.hpp"

namespace hmoe {

/// Which loss a (variant, K) panel is plotted and rated with. Auto picks L2
/// for the gated variants and L1 (r = 1) for MHA.
enum class PlotLoss { Auto, L2, L1 };

struct ExperimentConfig {
  std::vector<Variant> variants{Variant::MHA, Variant::GatedValue, Variant::GatedSDPA};
  std::vector<std::size_t> k_fit{3, 4};
  std::vector<std::size_t> sample_sizes;
  std::size_t trials = 5;
  double noise_sd = 0.1;
  ActivationKind activation = ActivationKind::sigmoid(0.5);
  OptimizerConfig optimizer{};
  InitConfig init{};
  std::uint64_t master_seed = 20250101;
  std::size_t grid_size = 4096;
  std::string output_dir = "out";
  std::string truth_path;  // empty: built-in reference measure
  std::size_t workers = 0;  // 0: one per hardware thread
  PlotLoss plot_loss = PlotLoss::Auto;
  bool dump_fits = false;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
/// Reads TOML (or JSON when the extension is .json); unknown keys are errors.
ExperimentConfig load_config(const std::string& path);
/// HMOE_SEED, when set, replaces the master seed.
void apply_env_overrides(ExperimentConfig& cfg);

std::size_t variant_id(Variant v);
/// Child seed of one (variant, K, n, trial) cell of the grid.
std::uint64_t trial_seed(std::uint64_t master, Variant v, std::size_t K, std::size_t n,
                         std::size_t trial);

struct TrialRecord {
  Variant variant = Variant::MHA;
  std::size_t K = 0;
  std::size_t n = 0;
  std::size_t trial = 0;
  double loss_l2 = 0.0;
  double loss_l1_r1 = 0.0;
  double reg_l2 = 0.0;
  int epochs = 0;
  std::uint64_t seed = 0;

  // Not part of the CSV table.
  double sse_init = 0.0;
  double sse_final = 0.0;
  bool aborted = false;
  std::string error;

  bool operator==(const TrialRecord& o) const {
    return variant == o.variant && K == o.K && n == o.n && trial == o.trial &&
           loss_l2 == o.loss_l2 && loss_l1_r1 == o.loss_l1_r1 && reg_l2 == o.reg_l2 &&
           epochs == o.epochs && seed == o.seed;
  }
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

struct RatePoint {
  double n = 0.0;
  double loss = 0.0;
};

/// OLS of ln(loss) on ln(n). Nonpositive losses are dropped (a warning is
/// appended when `warnings` is given); fewer than 3 usable points throws.
RateFit fit_rate(const std::vector<RatePoint>& points, std::vector<std::string>* warnings = nullptr);

struct CellStats {
  Variant variant = Variant::MHA;
  std::size_t K = 0;
  std::size_t n = 0;
  std::size_t completed = 0;
  double mean_l2 = 0.0, sd_l2 = 0.0;
  double mean_l1 = 0.0, sd_l1 = 0.0;
  double mean_reg = 0.0, sd_reg = 0.0;
};

struct GroupRate {
  Variant variant = Variant::MHA;
  std::size_t K = 0;
  PlotLoss loss = PlotLoss::L2;  // resolved, never Auto
  std::optional<RateFit> primary;
  std::optional<RateFit> l2;
  std::optional<RateFit> l1;
  std::optional<RateFit> reg;
};

struct RateReport {
  std::vector<TrialRecord> trials;  // grid order: variant, K, n, trial
  std::vector<CellStats> cells;
  std::vector<GroupRate> rates;
  std::vector<std::string> warnings;
  std::size_t aborted = 0;
  bool budget_breached = false;  // more than 20% of trials aborted

  const GroupRate* rate(Variant v, std::size_t K) const;
};

PlotLoss resolve_plot_loss(PlotLoss setting, Variant v);

/// Aggregates trials into per-cell means/sds and per-(variant, K) slopes.
void summarize(RateReport& report, const ExperimentConfig& cfg);

using ProgressFn = std::function<void(const TrialRecord&, std::size_t done, std::size_t total)>;

/// One trial: data from the child seed, over-specified init near the truth,
/// gradient descent, then both Voronoi losses and the regression distance.
TrialRecord run_trial(const ExperimentConfig& cfg, const MixingMeasure& truth, Variant v,
                      std::size_t K, std::size_t n, std::size_t trial,
                      FitResult* fit_out = nullptr);

/// Runs the whole grid on cfg.workers threads; the result does not depend
/// on the worker count.
RateReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});

MixingMeasure load_truth(const ExperimentConfig& cfg);

}  // namespace hmoe
