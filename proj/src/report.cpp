#include "hmoe/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hmoe/error.hpp"

namespace hmoe {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
T parse_int(const std::string& s, std::size_t line) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("results CSV line " + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

double parse_double(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0')
    throw ConfigError("results CSV line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

nlohmann::json fit_json(const std::optional<RateFit>& f) {
  if (!f) return nullptr;
  return {{"slope", f->slope}, {"intercept", f->intercept}, {"r2", f->r2}, {"points", f->points}};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace

std::string results_csv(const std::vector<TrialRecord>& trials) {
  std::ostringstream os;
  os << kResultsHeader << '\n';
  for (const auto& t : trials) {
    if (t.aborted) continue;
    os << to_string(t.variant) << ',' << t.K << ',' << t.n << ',' << t.trial << ','
       << fmt(t.loss_l2) << ',' << fmt(t.loss_l1_r1) << ',' << fmt(t.reg_l2) << ',' << t.epochs
       << ',' << t.seed << '\n';
  }
  return os.str();
}

std::vector<TrialRecord> parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split(line, ',') != split(kResultsHeader, ','))
    throw ConfigError("results CSV: missing or unexpected header");
  std::vector<TrialRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    if (f.size() != 9) throw ConfigError("results CSV line " + std::to_string(lineno) + ": expected 9 fields");
    TrialRecord t;
    t.variant = variant_from_string(f[0]);
    t.K = parse_int<std::size_t>(f[1], lineno);
    t.n = parse_int<std::size_t>(f[2], lineno);
    t.trial = parse_int<std::size_t>(f[3], lineno);
    t.loss_l2 = parse_double(f[4], lineno);
    t.loss_l1_r1 = parse_double(f[5], lineno);
    t.reg_l2 = parse_double(f[6], lineno);
    t.epochs = parse_int<int>(f[7], lineno);
    t.seed = parse_int<std::uint64_t>(f[8], lineno);
    out.push_back(t);
  }
  return out;
}

void write_results_csv(const std::vector<TrialRecord>& trials, const std::filesystem::path& path) {
  write_file(path, results_csv(trials));
}

std::vector<TrialRecord> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_results_csv(ss.str());
}

nlohmann::json rates_json(const RateReport& report) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : report.rates) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : report.cells)
      if (c.variant == g.variant && c.K == g.K)
        cells.push_back({{"n", c.n},
                         {"completed", c.completed},
                         {"mean_l2", c.mean_l2},
                         {"sd_l2", c.sd_l2},
                         {"mean_l1_r1", c.mean_l1},
                         {"sd_l1_r1", c.sd_l1},
                         {"mean_reg_l2", c.mean_reg},
                         {"sd_reg_l2", c.sd_reg}});
    groups.push_back({{"variant", to_string(g.variant)},
                      {"K", g.K},
                      {"panel_loss", g.loss == PlotLoss::L1 ? "l1_r1" : "l2"},
                      {"primary", fit_json(g.primary)},
                      {"l2", fit_json(g.l2)},
                      {"l1_r1", fit_json(g.l1)},
                      {"reg_l2", fit_json(g.reg)},
                      {"cells", cells}});
  }
  return {{"groups", groups},
          {"aborted", report.aborted},
          {"trials", report.trials.size()},
          {"budget_breached", report.budget_breached},
          {"warnings", report.warnings}};
}

std::string rate_plot_svg(const RateReport& report, Variant v, std::size_t K) {
  const GroupRate* g = report.rate(v, K);
  if (!g) throw ConfigError("no rate group for " + to_string(v) + " K=" + std::to_string(K));
  const bool l1 = g->loss == PlotLoss::L1;
  struct Pt {
    double n, mean, sd;
  };
  std::vector<Pt> pts;
  for (const auto& c : report.cells)
    if (c.variant == v && c.K == K && (l1 ? c.mean_l1 : c.mean_l2) > 0.0)
      pts.push_back({double(c.n), l1 ? c.mean_l1 : c.mean_l2, l1 ? c.sd_l1 : c.sd_l2});

  const double W = 480, H = 360, left = 70, right = 20, top = 40, bottom = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : pts) {
    const double lo = p.mean - 2 * p.sd > 0 ? p.mean - 2 * p.sd : p.mean / 10.0;
    xmin = std::min(xmin, std::log10(p.n));
    xmax = std::max(xmax, std::log10(p.n));
    ymin = std::min(ymin, std::log10(lo));
    ymax = std::max(ymax, std::log10(p.mean + 2 * p.sd));
  }
  if (pts.empty()) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-9) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-9) ymin -= 0.5, ymax += 0.5;
  const double padx = 0.05 * (xmax - xmin), pady = 0.08 * (ymax - ymin);
  xmin -= padx, xmax += padx, ymin -= pady, ymax += pady;
  auto X = [&](double lx) { return left + (lx - xmin) / (xmax - xmin) * (W - left - right); };
  auto Y = [&](double ly) { return H - bottom - (ly - ymin) / (ymax - ymin) * (H - top - bottom); };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << to_string(v) << ", K = " << K << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\""
     << H - bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">log10 n</text>\n";
  os << "<text x=\"16\" y=\"" << (top + H - bottom) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
     << (top + H - bottom) / 2 << ")\" text-anchor=\"middle\">log10 " << (l1 ? "L1 loss" : "L2 loss")
     << "</text>\n";
  for (int e = static_cast<int>(std::ceil(xmin)); e <= static_cast<int>(std::floor(xmax)); ++e)
    os << "<text x=\"" << X(e) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << e << "</text>\n";

  for (const auto& p : pts) {
    const double x = X(std::log10(p.n));
    const double lo = p.mean - 2 * p.sd > 0 ? p.mean - 2 * p.sd : p.mean / 10.0;
    os << "<line class=\"errorbar\" x1=\"" << x << "\" y1=\"" << Y(std::log10(lo)) << "\" x2=\"" << x
       << "\" y2=\"" << Y(std::log10(p.mean + 2 * p.sd)) << "\" stroke=\"steelblue\"/>\n";
    os << "<circle class=\"marker\" cx=\"" << x << "\" cy=\"" << Y(std::log10(p.mean))
       << "\" r=\"4\" fill=\"steelblue\"/>\n";
  }
  if (g->primary && !pts.empty()) {
    const auto& f = *g->primary;
    const double n0 = pts.front().n, n1 = pts.back().n;
    auto fitted = [&](double n) { return (f.intercept + f.slope * std::log(n)) / std::log(10.0); };
    os << "<line class=\"fit\" x1=\"" << X(std::log10(n0)) << "\" y1=\"" << Y(fitted(n0)) << "\" x2=\""
       << X(std::log10(n1)) << "\" y2=\"" << Y(fitted(n1))
       << "\" stroke=\"firebrick\" stroke-dasharray=\"6,4\"/>\n";
    os << "<text x=\"" << W - right - 4 << "\" y=\"" << top + 14
       << "\" text-anchor=\"end\" font-size=\"12\">slope " << f.slope << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_outputs(const RateReport& report,
                                                const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
  std::vector<std::filesystem::path> written;
  written.push_back(dir / "results.csv");
  write_results_csv(report.trials, written.back());
  written.push_back(dir / "rates.json");
  write_file(written.back(), rates_json(report).dump(2) + "\n");
  for (const auto& g : report.rates) {
    const bool has_data = std::any_of(report.cells.begin(), report.cells.end(), [&](const CellStats& c) {
      return c.variant == g.variant && c.K == g.K;
    });
    if (!has_data) continue;
    written.push_back(dir / ("rate_" + to_string(g.variant) + "_K" + std::to_string(g.K) + ".svg"));
    write_file(written.back(), rate_plot_svg(report, g.variant, g.K));
  }
  return written;
}

}  // namespace hmoe
