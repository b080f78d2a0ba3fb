#include "hmoe/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <toml.hpp>

#include "hmoe/data.hpp"
#include "hmoe/error.hpp"
#include "hmoe/voronoi.hpp"

namespace hmoe {

namespace {

std::string plot_loss_name(PlotLoss p) {
  switch (p) {
    case PlotLoss::Auto: return "auto";
    case PlotLoss::L2: return "l2";
    case PlotLoss::L1: return "l1";
  }
  return "?";
}

PlotLoss plot_loss_from(const std::string& s) {
  if (s == "auto") return PlotLoss::Auto;
  if (s == "l2") return PlotLoss::L2;
  if (s == "l1") return PlotLoss::L1;
  throw ConfigError("plot_loss must be auto, l2 or l1 (got '" + s + "')");
}

nlohmann::json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [key, value] : *t) out[std::string(key.str())] = toml_to_json(value);
    return out;
  }
  if (const auto* a = node.as_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& value : *a) out.push_back(toml_to_json(value));
    return out;
  }
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_string()) return v->get();
  throw ConfigError("unsupported TOML value type");
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  const std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [key, _] : j.items())
    if (!ok.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

ModelSpec spec_for(const ExperimentConfig& cfg, Variant v) { return {v, cfg.activation}; }

}  // namespace

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("at least one variant is required");
  if (k_fit.empty()) throw ConfigError("at least one K is required");
  for (auto K : k_fit)
    if (K == 0) throw ConfigError("K must be >= 1");
  if (sample_sizes.empty()) throw ConfigError("at least one sample size is required");
  for (std::size_t j = 0; j < sample_sizes.size(); ++j) {
    if (sample_sizes[j] == 0) throw ConfigError("sample sizes must be >= 1");
    if (j > 0 && sample_sizes[j] <= sample_sizes[j - 1])
      throw ConfigError("sample sizes must be strictly increasing");
  }
  if (trials == 0) throw ConfigError("trials must be >= 1");
  if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be >= 0");
  if (grid_size == 0) throw ConfigError("grid_size must be >= 1");
  if (!(init.scale >= 0.0)) throw ConfigError("init scale must be >= 0");
  optimizer.validate();
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a table/object");
  reject_unknown(j,
                 {"variants", "k_fit", "sample_sizes", "trials", "noise_sd", "activation", "bias",
                  "optimizer", "init", "master_seed", "grid_size", "output_dir", "truth",
                  "workers", "plot_loss", "dump_fits"},
                 "");
  ExperimentConfig cfg;
  try {
    if (j.contains("variants")) {
      cfg.variants.clear();
      for (const auto& v : j.at("variants")) cfg.variants.push_back(variant_from_string(v.get<std::string>()));
    }
    if (j.contains("k_fit")) cfg.k_fit = j.at("k_fit").get<std::vector<std::size_t>>();
    if (j.contains("sample_sizes")) cfg.sample_sizes = j.at("sample_sizes").get<std::vector<std::size_t>>();
    cfg.trials = j.value("trials", cfg.trials);
    cfg.noise_sd = j.value("noise_sd", cfg.noise_sd);
    const double bias = j.value("bias", cfg.activation.bias);
    const std::string act = j.value("activation", std::string("sigmoid"));
    if (act == "sigmoid")
      cfg.activation = ActivationKind::sigmoid(bias);
    else if (act == "identity")
      cfg.activation = ActivationKind::identity();
    else
      throw ConfigError("activation must be 'sigmoid' or 'identity'");
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      reject_unknown(o, {"step", "max_epochs", "shrink", "armijo", "grad_tol_per_sample", "max_backtracks"},
                     "optimizer.");
      auto& c = cfg.optimizer;
      c.step = o.value("step", c.step);
      c.max_epochs = o.value("max_epochs", c.max_epochs);
      c.shrink = o.value("shrink", c.shrink);
      c.armijo = o.value("armijo", c.armijo);
      c.grad_tol_per_sample = o.value("grad_tol_per_sample", c.grad_tol_per_sample);
      c.max_backtracks = o.value("max_backtracks", c.max_backtracks);
    }
    if (j.contains("init")) {
      const auto& o = j.at("init");
      reject_unknown(o, {"scale", "exponent"}, "init.");
      cfg.init.scale = o.value("scale", cfg.init.scale);
      cfg.init.exponent = o.value("exponent", cfg.init.exponent);
    }
    cfg.master_seed = j.value("master_seed", cfg.master_seed);
    cfg.grid_size = j.value("grid_size", cfg.grid_size);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.truth_path = j.value("truth", cfg.truth_path);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.plot_loss = plot_loss_from(j.value("plot_loss", std::string("auto")));
    cfg.dump_fits = j.value("dump_fits", cfg.dump_fits);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json variants = nlohmann::json::array();
  for (auto v : cfg.variants) variants.push_back(to_string(v));
  return {{"variants", variants},
          {"k_fit", cfg.k_fit},
          {"sample_sizes", cfg.sample_sizes},
          {"trials", cfg.trials},
          {"noise_sd", cfg.noise_sd},
          {"activation", cfg.activation.type == ActivationType::Identity ? "identity" : "sigmoid"},
          {"bias", cfg.activation.bias},
          {"optimizer",
           {{"step", cfg.optimizer.step},
            {"max_epochs", cfg.optimizer.max_epochs},
            {"shrink", cfg.optimizer.shrink},
            {"armijo", cfg.optimizer.armijo},
            {"grad_tol_per_sample", cfg.optimizer.grad_tol_per_sample},
            {"max_backtracks", cfg.optimizer.max_backtracks}}},
          {"init", {{"scale", cfg.init.scale}, {"exponent", cfg.init.exponent}}},
          {"master_seed", cfg.master_seed},
          {"grid_size", cfg.grid_size},
          {"output_dir", cfg.output_dir},
          {"truth", cfg.truth_path},
          {"workers", cfg.workers},
          {"plot_loss", plot_loss_name(cfg.plot_loss)},
          {"dump_fits", cfg.dump_fits}};
}

ExperimentConfig load_config(const std::string& path) {
  const std::filesystem::path p(path);
  if (!std::filesystem::exists(p)) throw ConfigError("config file '" + path + "' does not exist");
  nlohmann::json j;
  if (p.extension() == ".json") {
    std::ifstream in(p);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("'" + path + "': " + e.what());
    }
  } else {
    try {
      j = toml_to_json(toml::parse_file(path));
    } catch (const toml::parse_error& e) {
      std::ostringstream os;
      os << "'" << path << "': " << e.description() << " at line " << e.source().begin.line;
      throw ConfigError(os.str());
    }
  }
  ExperimentConfig cfg = config_from_json(j);
  // A relative truth path is taken relative to the config file.
  if (!cfg.truth_path.empty() && std::filesystem::path(cfg.truth_path).is_relative())
    cfg.truth_path = (p.parent_path() / cfg.truth_path).string();
  return cfg;
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* s = std::getenv("HMOE_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("HMOE_SEED is not an integer: '") + s + "'");
    cfg.master_seed = v;
  }
}

std::size_t variant_id(Variant v) { return static_cast<std::size_t>(v); }

std::uint64_t trial_seed(std::uint64_t master, Variant v, std::size_t K, std::size_t n,
                         std::size_t trial) {
  return derive_seed({master, variant_id(v), K, n, trial});
}

RateFit fit_rate(const std::vector<RatePoint>& points, std::vector<std::string>* warnings) {
  std::vector<std::pair<double, double>> xy;
  for (const auto& p : points) {
    if (!(p.loss > 0.0) || !(p.n > 0.0)) {
      if (warnings) {
        std::ostringstream os;
        os << "rate fit: dropped point n=" << p.n << " with loss " << p.loss;
        warnings->push_back(os.str());
      }
      continue;
    }
    xy.emplace_back(std::log(p.n), std::log(p.loss));
  }
  if (xy.size() < 3) throw ConfigError("rate fit needs at least 3 points with positive loss");
  const double m = static_cast<double>(xy.size());
  double mx = 0.0, my = 0.0;
  for (auto [x, y] : xy) {
    mx += x;
    my += y;
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (auto [x, y] : xy) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0.0) throw ConfigError("rate fit needs at least two distinct sample sizes");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  fit.points = xy.size();
  return fit;
}

const GroupRate* RateReport::rate(Variant v, std::size_t K) const {
  for (const auto& r : rates)
    if (r.variant == v && r.K == K) return &r;
  return nullptr;
}

PlotLoss resolve_plot_loss(PlotLoss setting, Variant v) {
  if (setting != PlotLoss::Auto) return setting;
  return v == Variant::MHA ? PlotLoss::L1 : PlotLoss::L2;
}

void summarize(RateReport& report, const ExperimentConfig& cfg) {
  report.cells.clear();
  report.rates.clear();
  for (auto v : cfg.variants)
    for (auto K : cfg.k_fit) {
      std::vector<RatePoint> l2_pts, l1_pts, reg_pts;
      for (auto n : cfg.sample_sizes) {
        std::vector<double> l2, l1, reg;
        for (const auto& t : report.trials)
          if (!t.aborted && t.variant == v && t.K == K && t.n == n) {
            l2.push_back(t.loss_l2);
            l1.push_back(t.loss_l1_r1);
            reg.push_back(t.reg_l2);
          }
        if (l2.empty()) continue;
        CellStats c{v, K, n, l2.size(), mean_of(l2), sd_of(l2), mean_of(l1),
                    sd_of(l1), mean_of(reg), sd_of(reg)};
        report.cells.push_back(c);
        l2_pts.push_back({double(n), c.mean_l2});
        l1_pts.push_back({double(n), c.mean_l1});
        reg_pts.push_back({double(n), c.mean_reg});
      }
      GroupRate g;
      g.variant = v;
      g.K = K;
      g.loss = resolve_plot_loss(cfg.plot_loss, v);
      const std::string tag = to_string(v) + " K=" + std::to_string(K);
      auto try_fit = [&](const std::vector<RatePoint>& pts, const char* what,
                         bool skip_tiny) -> std::optional<RateFit> {
        if (skip_tiny && std::all_of(pts.begin(), pts.end(),
                                     [](const RatePoint& p) { return p.loss < 1e-12; })) {
          report.warnings.push_back(tag + ": " + what + " is numerically zero, slope skipped");
          return std::nullopt;
        }
        try {
          return fit_rate(pts, &report.warnings);
        } catch (const ConfigError& e) {
          report.warnings.push_back(tag + ": " + what + " slope skipped (" + e.what() + ")");
          return std::nullopt;
        }
      };
      g.l2 = try_fit(l2_pts, "L2 loss", false);
      g.l1 = try_fit(l1_pts, "L1 loss", false);
      g.reg = try_fit(reg_pts, "regression distance", true);
      g.primary = g.loss == PlotLoss::L1 ? g.l1 : g.l2;
      report.rates.push_back(g);
    }
}

MixingMeasure load_truth(const ExperimentConfig& cfg) {
  MixingMeasure truth = cfg.truth_path.empty() ? reference_measure() : load_measure(cfg.truth_path);
  const auto issues = validate_measure(truth, true);
  if (!issues.empty())
    throw ConfigError("ground truth violates " + issues.front().assumption + ": " + issues.front().detail);
  return truth;
}

TrialRecord run_trial(const ExperimentConfig& cfg, const MixingMeasure& truth, Variant v,
                      std::size_t K, std::size_t n, std::size_t trial, FitResult* fit_out) {
  TrialRecord rec;
  rec.variant = v;
  rec.K = K;
  rec.n = n;
  rec.trial = trial;
  rec.seed = trial_seed(cfg.master_seed, v, K, n, trial);
  const ModelSpec spec = spec_for(cfg, v);
  try {
    const Dataset data = generate_dataset(truth, spec, n, cfg.noise_sd, rec.seed);
    std::mt19937_64 init_rng(derive_seed({rec.seed, 0x49}));
    const MixingMeasure G0 = init_near_truth(truth, K, n, init_rng, cfg.init);
    FitResult fit_res = fit(G0, data, spec, cfg.optimizer);
    rec.sse_init = fit_res.sse_trajectory.front();
    rec.sse_final = fit_res.final_sse;
    rec.epochs = fit_res.epochs;
    const QuadratureGrid grid =
        QuadratureGrid::uniform(cfg.grid_size, truth.d(), derive_seed({cfg.master_seed, 0x47}));
    const VoronoiAssignment cells = assign_cells(fit_res.measure, truth, spec, grid);
    rec.loss_l2 = loss_L2(fit_res.measure, truth, cells);
    rec.loss_l1_r1 = loss_L1(fit_res.measure, truth, 1.0, cells);
    rec.reg_l2 = function_distance(fit_res.measure, truth, spec, grid);
    if (!std::isfinite(rec.loss_l2) || !std::isfinite(rec.loss_l1_r1) || !std::isfinite(rec.reg_l2))
      throw NumericalError("non-finite loss after fitting");
    if (fit_out) *fit_out = std::move(fit_res);
  } catch (const NumericalError& e) {
    rec.aborted = true;
    rec.error = e.what();
  }
  return rec;
}

RateReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const MixingMeasure truth = load_truth(cfg);
  for (auto K : cfg.k_fit)
    if (K < truth.K())
      throw ConfigError("K = " + std::to_string(K) + " is below the true channel count " +
                        std::to_string(truth.K()));

  struct Job {
    Variant v;
    std::size_t K, n, trial;
  };
  std::vector<Job> jobs;
  for (auto v : cfg.variants)
    for (auto K : cfg.k_fit)
      for (auto n : cfg.sample_sizes)
        for (std::size_t t = 0; t < cfg.trials; ++t) jobs.push_back({v, K, n, t});

  RateReport report;
  report.trials.resize(jobs.size());
  const std::filesystem::path fit_dir = std::filesystem::path(cfg.output_dir) / "fits";
  if (cfg.dump_fits) std::filesystem::create_directories(fit_dir);

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t idx = next++; idx < jobs.size(); idx = next++) {
      const Job& job = jobs[idx];
      FitResult fr;
      report.trials[idx] = run_trial(cfg, truth, job.v, job.K, job.n, job.trial,
                                     cfg.dump_fits ? &fr : nullptr);
      if (cfg.dump_fits && !report.trials[idx].aborted) {
        std::ostringstream name;
        name << to_string(job.v) << "_K" << job.K << "_n" << job.n << "_t" << job.trial << ".json";
        std::ofstream(fit_dir / name.str()) << to_json(fr).dump() << '\n';
      }
      const std::size_t finished = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(report.trials[idx], finished, jobs.size());
      }
    }
  };
  std::size_t workers = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(jobs.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }

  for (const auto& t : report.trials)
    if (t.aborted) {
      ++report.aborted;
      report.warnings.push_back(to_string(t.variant) + " K=" + std::to_string(t.K) +
                                " n=" + std::to_string(t.n) + " trial " + std::to_string(t.trial) +
                                " aborted: " + t.error);
    }
  report.budget_breached = report.aborted * 5 > jobs.size();
  summarize(report, cfg);
  return report;
}

}  // namespace hmoe
