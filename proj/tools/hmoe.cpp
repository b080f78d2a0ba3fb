// Command-line front end: simulate, fit, rates, voronoi,
// check-identifiability, bridge-verify.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "hmoe/attention.hpp"
#include "hmoe/data.hpp"
#include "hmoe/error.hpp"
#include "hmoe/estimator.hpp"
#include "hmoe/experiment.hpp"
#include "hmoe/identifiability.hpp"
#include "hmoe/report.hpp"
#include "hmoe/voronoi.hpp"

namespace {

using namespace hmoe;

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kBudget = 2;

struct ModelFlags {
  std::string variant = "gated_value";
  std::string activation = "sigmoid";
  double bias = 0.5;

  void attach(CLI::App* app) {
    app->add_option("--variant", variant, "mha | gated_value | gated_sdpa")->capture_default_str();
    app->add_option("--activation", activation, "sigmoid | identity")->capture_default_str();
    app->add_option("--bias", bias, "sigmoid bias b in phi(z) = sigmoid(z + b)")->capture_default_str();
  }
  ActivationKind act() const {
    if (activation == "identity") return ActivationKind::identity();
    if (activation == "sigmoid") return ActivationKind::sigmoid(bias);
    throw ConfigError("activation must be 'sigmoid' or 'identity'");
  }
  ModelSpec spec() const { return {variant_from_string(variant), act()}; }
};

MixingMeasure truth_or_reference(const std::string& path) {
  return path.empty() ? reference_measure() : load_measure(path);
}

void write_json(const nlohmann::json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical mixture-of-experts view of (gated) attention: simulation, fitting and rate experiments"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset from a mixing measure");
  ModelFlags sim_model;
  sim_model.attach(sim);
  std::string sim_truth, sim_out = "-";
  std::size_t sim_n = 1000;
  double sim_noise = 0.1;
  std::uint64_t sim_seed = 1;
  sim->add_option("--truth", sim_truth, "measure JSON (default: built-in reference)");
  sim->add_option("-n,--samples", sim_n, "sample size")->capture_default_str();
  sim->add_option("--noise", sim_noise, "noise standard deviation")->capture_default_str();
  sim->add_option("--seed", sim_seed, "seed")->capture_default_str();
  sim->add_option("-o,--out", sim_out, "output file ('-' for stdout)");

  // fit
  auto* fitc = app.add_subcommand("fit", "Fit a mixing measure to a dataset");
  ModelFlags fit_model;
  fit_model.attach(fitc);
  std::string fit_data, fit_init, fit_truth, fit_out = "-";
  std::size_t fit_k = 3;
  double fit_scale = 1.0;
  std::uint64_t fit_seed = 1;
  OptimizerConfig fit_opt;
  fitc->add_option("--data", fit_data, "dataset JSON")->required();
  fitc->add_option("--init", fit_init, "starting measure JSON (otherwise near the truth)");
  fitc->add_option("--truth", fit_truth, "truth for the near-truth start (default: reference)");
  fitc->add_option("-K,--channels", fit_k, "fitted channels for the near-truth start")->capture_default_str();
  fitc->add_option("--init-scale", fit_scale, "perturbation scale c")->capture_default_str();
  fitc->add_option("--seed", fit_seed, "seed for the perturbation")->capture_default_str();
  fitc->add_option("--step", fit_opt.step, "initial step per epoch")->capture_default_str();
  fitc->add_option("--max-epochs", fit_opt.max_epochs, "epoch budget")->capture_default_str();
  fitc->add_option("-o,--out", fit_out, "fit result JSON ('-' for stdout)");

  // rates
  auto* rates = app.add_subcommand("rates", "Run a rate experiment from a config file");
  std::string rates_cfg, rates_out;
  std::size_t rates_workers = 0;
  bool rates_dump = false, rates_quiet = false;
  rates->add_option("config", rates_cfg, "TOML or JSON config")->required();
  rates->add_option("-o,--out", rates_out, "output directory (overrides the config)");
  rates->add_option("-j,--workers", rates_workers, "worker threads (overrides the config)");
  rates->add_flag("--dump-fits", rates_dump, "write every fit result as JSON");
  rates->add_flag("-q,--quiet", rates_quiet, "no per-trial progress");

  // voronoi
  auto* vor = app.add_subcommand("voronoi", "Voronoi losses between a fitted and a true measure");
  ModelFlags vor_model;
  vor_model.attach(vor);
  std::string vor_fit, vor_truth;
  double vor_r = 1.0;
  std::size_t vor_q = 4096;
  std::uint64_t vor_seed = 7;
  bool vor_cells = false;
  vor->add_option("--fit", vor_fit, "fitted measure JSON (or a fit result JSON)")->required();
  vor->add_option("--truth", vor_truth, "true measure JSON (default: reference)");
  vor->add_option("-r", vor_r, "exponent of the L1 loss")->capture_default_str();
  vor->add_option("--grid-size", vor_q, "quadrature points")->capture_default_str();
  vor->add_option("--grid-seed", vor_seed, "quadrature seed")->capture_default_str();
  vor->add_flag("--cells", vor_cells, "also print the cell assignment");

  // check-identifiability
  auto* idc = app.add_subcommand("check-identifiability", "Gram-matrix test of strong identifiability");
  int id_type = 1;
  std::string id_act = "sigmoid", id_truth;
  double id_bias = 0.5, id_floor = 1e-6;
  std::size_t id_q = 4096;
  std::uint64_t id_seed = 11;
  bool id_per_component = false;
  idc->add_option("--type", id_type, "1 or 2")->check(CLI::IsMember({1, 2}))->capture_default_str();
  idc->add_option("--activation", id_act, "sigmoid | identity")->capture_default_str();
  idc->add_option("--bias", id_bias, "sigmoid bias")->capture_default_str();
  idc->add_option("--grid-size", id_q, "sample points")->capture_default_str();
  idc->add_option("--seed", id_seed, "sample seed")->capture_default_str();
  idc->add_option("--truth", id_truth, "measure JSON (default: reference)");
  idc->add_option("--floor", id_floor, "pass threshold for sigma_min")->capture_default_str();
  idc->add_flag("--per-component", id_per_component, "type 1 only: one family per true expert");

  // bridge-verify
  auto* br = app.add_subcommand("bridge-verify", "Check attention output against its HMoE entries");
  std::string br_weights;
  std::size_t br_inputs = 5;
  std::uint64_t br_seed = 3;
  double br_tol = 1e-10;
  br->add_option("--weights", br_weights, "attention weights JSON")->required();
  br->add_option("--inputs", br_inputs, "random input sequences")->capture_default_str();
  br->add_option("--seed", br_seed, "seed for the inputs")->capture_default_str();
  br->add_option("--tol", br_tol, "pass threshold")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (sim->parsed()) {
      const auto truth = truth_or_reference(sim_truth);
      const Dataset data = generate_dataset(truth, sim_model.spec(), sim_n, sim_noise, sim_seed);
      write_json(to_json(data), sim_out);
      return kOk;
    }

    if (fitc->parsed()) {
      const Dataset data = load_dataset(fit_data);
      MixingMeasure G0;
      if (!fit_init.empty()) {
        G0 = load_measure(fit_init);
      } else {
        std::mt19937_64 rng(fit_seed);
        G0 = init_near_truth(truth_or_reference(fit_truth), fit_k, data.n, rng, {fit_scale, 0.083});
      }
      const FitResult r = fit(G0, data, fit_model.spec(), fit_opt);
      write_json(to_json(r), fit_out);
      std::fprintf(stderr, "sse %.6g -> %.6g after %d epochs (%s)\n", r.sse_trajectory.front(),
                   r.final_sse, r.epochs, to_string(r.termination).c_str());
      return kOk;
    }

    if (rates->parsed()) {
      ExperimentConfig cfg = load_config(rates_cfg);
      apply_env_overrides(cfg);
      if (!rates_out.empty()) cfg.output_dir = rates_out;
      if (rates_workers) cfg.workers = rates_workers;
      if (rates_dump) cfg.dump_fits = true;
      ProgressFn progress;
      if (!rates_quiet)
        progress = [](const TrialRecord& t, std::size_t done, std::size_t total) {
          std::fprintf(stderr, "[%zu/%zu] %s K=%zu n=%zu trial=%zu  L2=%.4g L1=%.4g reg=%.4g epochs=%d%s\n",
                       done, total, to_string(t.variant).c_str(), t.K, t.n, t.trial, t.loss_l2,
                       t.loss_l1_r1, t.reg_l2, t.epochs, t.aborted ? " ABORTED" : "");
        };
      const RateReport report = run_experiment(cfg, progress);
      for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      for (const auto& path : emit_outputs(report, cfg.output_dir))
        std::fprintf(stderr, "wrote %s\n", path.string().c_str());
      for (const auto& g : report.rates) {
        std::printf("%-11s K=%zu  ", to_string(g.variant).c_str(), g.K);
        auto show = [](const char* name, const std::optional<RateFit>& f) {
          if (f)
            std::printf("%s %+.3f (R2 %.2f)  ", name, f->slope, f->r2);
          else
            std::printf("%s n/a  ", name);
        };
        show("L2", g.l2);
        show("L1", g.l1);
        show("reg", g.reg);
        std::printf("\n");
      }
      if (report.budget_breached) {
        std::fprintf(stderr, "error: %zu of %zu trials aborted (limit 20%%)\n", report.aborted,
                     report.trials.size());
        return kBudget;
      }
      return kOk;
    }

    if (vor->parsed()) {
      std::ifstream in(vor_fit);
      if (!in) throw std::runtime_error("cannot open '" + vor_fit + "'");
      nlohmann::json j;
      in >> j;
      const MixingMeasure G = measure_from_json(j.contains("measure") ? j.at("measure") : j);
      const MixingMeasure truth = truth_or_reference(vor_truth);
      const ModelSpec spec = vor_model.spec();
      const auto grid = QuadratureGrid::uniform(vor_q, truth.d(), vor_seed);
      const auto cells = assign_cells(G, truth, spec, grid);
      nlohmann::json out = {{"loss_l1", loss_L1(G, truth, vor_r, cells)},
                            {"r", vor_r},
                            {"loss_l2", loss_L2(G, truth, cells)},
                            {"function_distance", function_distance(G, truth, spec, grid)}};
      if (vor_cells) out["cells"] = to_json(cells);
      std::cout << out.dump(2) << '\n';
      return kOk;
    }

    if (idc->parsed()) {
      const ActivationKind act = id_act == "identity" ? ActivationKind::identity()
                                 : id_act == "sigmoid" ? ActivationKind::sigmoid(id_bias)
                                 : throw ConfigError("activation must be 'sigmoid' or 'identity'");
      const MixingMeasure G = truth_or_reference(id_truth);
      const auto grid = QuadratureGrid::uniform(id_q, G.d(), id_seed);
      auto report = [&](const std::string& label, const GramResult& r) {
        std::printf("%s members=%zu points=%zu sigma_min=%.6e sigma_min_nonzero=%.6e zero_members=%zu %s\n",
                    label.c_str(), r.members, r.points, r.sigma_min, r.sigma_min_nonzero,
                    r.zero_members.size(), r.sigma_min > id_floor ? "PASS" : "FAIL");
        return r.sigma_min > id_floor;
      };
      bool ok = true;
      if (id_type == 1 && id_per_component) {
        for (std::size_t h = 0; h < G.H(); ++h)
          for (std::size_t i = 0; i < G.N(); ++i)
            for (std::size_t k = 0; k < G.K(); ++k) {
              const auto fam = build_type1_family(single_component(G, h, i, k), act);
              ok &= report("type1[h=" + std::to_string(h) + ",i=" + std::to_string(i) + ",k=" +
                               std::to_string(k) + "]",
                           gram_min_singular(fam, grid.points));
            }
      } else {
        const auto fam = id_type == 1 ? build_type1_family(G, act) : build_type2_family(G, act);
        ok = report("type" + std::to_string(id_type), gram_min_singular(fam, grid.points));
      }
      return ok ? kOk : kInvalid;
    }

    if (br->parsed()) {
      std::ifstream in(br_weights);
      if (!in) throw std::runtime_error("cannot open '" + br_weights + "'");
      nlohmann::json j;
      in >> j;
      const AttentionWeights w = attention_from_json(j);
      std::mt19937_64 rng(br_seed);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      double worst = 0.0;
      for (std::size_t s = 0; s < br_inputs; ++s) {
        Eigen::MatrixXd X(w.N, w.d);
        for (Eigen::Index r = 0; r < X.rows(); ++r)
          for (Eigen::Index c = 0; c < X.cols(); ++c) X(r, c) = u(rng);
        worst = std::max(worst, verify_equivalence(w, X));
      }
      std::printf("max_abs_diff=%.3e %s\n", worst, worst < br_tol ? "PASS" : "FAIL");
      return worst < br_tol ? kOk : kInvalid;
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kOk;
}
