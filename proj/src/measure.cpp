#include "hmoe/measure.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hmoe/error.hpp"

namespace hmoe {

MixingMeasure::MixingMeasure(Shape shape)
    : shape_(shape),
      omega_(shape.H * shape.K, 0.0),
      gates_(shape.H * shape.N * shape.d * shape.d, 0.0),
      experts_(shape.H * shape.N * shape.K * shape.d, 0.0) {
  if (shape.H == 0 || shape.N == 0 || shape.K == 0 || shape.d == 0)
    throw DimensionError("mixing measure needs H, N, K, d >= 1");
}

void MixingMeasure::symmetrize() {
  const std::size_t d = shape_.d;
  for (std::size_t h = 0; h < shape_.H; ++h)
    for (std::size_t i = 0; i < shape_.N; ++i) {
      auto m = gate(h, i);
      for (std::size_t p = 0; p < d; ++p)
        for (std::size_t q = p + 1; q < d; ++q) {
          const double s = 0.5 * (m[p * d + q] + m[q * d + p]);
          m[p * d + q] = s;
          m[q * d + p] = s;
        }
    }
}

void MixingMeasure::normalize_gates() {
  for (std::size_t h = 0; h < shape_.H; ++h) {
    const auto last = gate(h, shape_.N - 1);
    const std::vector<double> ref(last.begin(), last.end());
    for (std::size_t i = 0; i < shape_.N; ++i) {
      auto m = gate(h, i);
      for (std::size_t j = 0; j < m.size(); ++j) m[j] -= ref[j];
    }
  }
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::MHA: return "MHA";
    case Variant::GatedValue: return "GatedValue";
    case Variant::GatedSDPA: return "GatedSDPA";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "mha") return Variant::MHA;
  if (lower == "gatedvalue" || lower == "gated_value" || lower == "value") return Variant::GatedValue;
  if (lower == "gatedsdpa" || lower == "gated_sdpa" || lower == "sdpa") return Variant::GatedSDPA;
  throw ConfigError("unknown model variant '" + name + "'");
}

namespace {

std::string index_str(std::initializer_list<std::size_t> idx) {
  std::ostringstream os;
  for (auto i : idx) os << '[' << i << ']';
  return os.str();
}

bool is_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

std::vector<Violation> validate_measure(const MixingMeasure& G, bool as_ground_truth) {
  std::vector<Violation> out;
  const auto& s = G.shape();

  for (std::size_t h = 0; h < s.H; ++h)
    for (std::size_t i = 0; i < s.N; ++i)
      for (std::size_t p = 0; p < s.d; ++p)
        for (std::size_t q = p + 1; q < s.d; ++q)
          if (std::abs(G.gate(h, i, p, q) - G.gate(h, i, q, p)) > 1e-12)
            out.push_back({"A.3", "M" + index_str({h, i}) + " is not symmetric at " +
                                      index_str({p, q})});

  for (std::size_t h = 0; h < s.H; ++h)
    if (!is_zero(G.gate(h, s.N - 1)))
      out.push_back({"A.3", "M" + index_str({h, s.N - 1}) + " is not the zero matrix"});

  if (!as_ground_truth) return out;

  bool any_positive = false;
  for (std::size_t h = 0; h < s.H; ++h)
    for (std::size_t k = 0; k < s.K; ++k) {
      if (G.omega(h, k) < 0.0)
        out.push_back({"A.2", "omega" + index_str({h, k}) + " is negative"});
      if (G.omega(h, k) > 0.0) any_positive = true;
    }
  if (!any_positive) out.push_back({"A.2", "no strictly positive weight"});

  for (std::size_t h = 0; h < s.H; ++h) {
    bool informative = false;
    for (std::size_t i = 0; i + 1 < s.N; ++i)
      if (!is_zero(G.gate(h, i))) informative = true;
    if (!informative)
      out.push_back({"A.4", "head " + std::to_string(h) + " has only zero gating matrices"});
  }

  std::vector<std::array<std::size_t, 3>> ids;
  for (std::size_t h = 0; h < s.H; ++h)
    for (std::size_t i = 0; i < s.N; ++i)
      for (std::size_t k = 0; k < s.K; ++k) ids.push_back({h, i, k});
  for (std::size_t u = 0; u < ids.size(); ++u)
    for (std::size_t v = u + 1; v < ids.size(); ++v) {
      const auto a = G.expert(ids[u][0], ids[u][1], ids[u][2]);
      const auto b = G.expert(ids[v][0], ids[v][1], ids[v][2]);
      if (std::equal(a.begin(), a.end(), b.begin()))
        out.push_back({"A.5", "a" + index_str({ids[u][0], ids[u][1], ids[u][2]}) + " == a" +
                                  index_str({ids[v][0], ids[v][1], ids[v][2]})});
    }
  return out;
}

nlohmann::json to_json(const MixingMeasure& G) {
  const auto& s = G.shape();
  nlohmann::json omega = nlohmann::json::array();
  nlohmann::json M = nlohmann::json::array();
  nlohmann::json a = nlohmann::json::array();
  for (std::size_t h = 0; h < s.H; ++h) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < s.K; ++k) row.push_back(G.omega(h, k));
    omega.push_back(row);

    nlohmann::json mh = nlohmann::json::array();
    nlohmann::json ah = nlohmann::json::array();
    for (std::size_t i = 0; i < s.N; ++i) {
      nlohmann::json m = nlohmann::json::array();
      for (std::size_t p = 0; p < s.d; ++p) {
        nlohmann::json r = nlohmann::json::array();
        for (std::size_t q = 0; q < s.d; ++q) r.push_back(G.gate(h, i, p, q));
        m.push_back(r);
      }
      mh.push_back(m);
      nlohmann::json ai = nlohmann::json::array();
      for (std::size_t k = 0; k < s.K; ++k) {
        const auto e = G.expert(h, i, k);
        ai.push_back(std::vector<double>(e.begin(), e.end()));
      }
      ah.push_back(ai);
    }
    M.push_back(mh);
    a.push_back(ah);
  }
  return {{"H", s.H}, {"N", s.N}, {"K", s.K}, {"d", s.d}, {"omega", omega}, {"M", M}, {"a", a}};
}

namespace {

const nlohmann::json& sized(const nlohmann::json& j, std::size_t n, const std::string& what) {
  if (!j.is_array() || j.size() != n)
    throw DimensionError("measure JSON: '" + what + "' should be an array of length " +
                         std::to_string(n));
  return j;
}

}  // namespace

MixingMeasure measure_from_json(const nlohmann::json& j) {
  Shape s;
  try {
    s = {j.at("H").get<std::size_t>(), j.at("N").get<std::size_t>(),
         j.at("K").get<std::size_t>(), j.at("d").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw DimensionError(std::string("measure JSON: ") + e.what());
  }
  MixingMeasure G(s);
  const auto& omega = sized(j.at("omega"), s.H, "omega");
  const auto& M = sized(j.at("M"), s.H, "M");
  const auto& a = sized(j.at("a"), s.H, "a");
  for (std::size_t h = 0; h < s.H; ++h) {
    const auto& wr = sized(omega[h], s.K, "omega[h]");
    for (std::size_t k = 0; k < s.K; ++k) G.omega(h, k) = wr[k].get<double>();
    const auto& mh = sized(M[h], s.N, "M[h]");
    const auto& ah = sized(a[h], s.N, "a[h]");
    for (std::size_t i = 0; i < s.N; ++i) {
      const auto& m = sized(mh[i], s.d, "M[h][i]");
      for (std::size_t p = 0; p < s.d; ++p) {
        const auto& r = sized(m[p], s.d, "M[h][i][p]");
        for (std::size_t q = 0; q < s.d; ++q) G.gate(h, i, p, q) = r[q].get<double>();
      }
      const auto& ai = sized(ah[i], s.K, "a[h][i]");
      for (std::size_t k = 0; k < s.K; ++k) {
        const auto& v = sized(ai[k], s.d, "a[h][i][k]");
        auto e = G.expert(h, i, k);
        for (std::size_t p = 0; p < s.d; ++p) e[p] = v[p].get<double>();
      }
    }
  }
  G.symmetrize();
  return G;
}

MixingMeasure load_measure(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open measure file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("'" + path + "': " + e.what());
  }
  return measure_from_json(j);
}

void save_measure(const MixingMeasure& G, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write measure file '" + path + "'");
  out << to_json(G).dump(2) << '\n';
}

MixingMeasure reference_measure() {
  MixingMeasure G({2, 2, 2, 2});
  // Stored with the last gate of each head already subtracted.
  const double gates[2][2][4] = {{{1.5, 0.0, 0.0, -1.5}, {0.0, 0.0, 0.0, 0.0}},
                                 {{1.2, 0.3, 0.3, -0.9}, {0.0, 0.0, 0.0, 0.0}}};
  const double omega[2][2] = {{1.0, 0.5}, {0.8, 0.3}};
  // a[h][i][k]
  const double experts[2][2][2][2] = {{{{1.0, -0.5}, {0.5, 0.8}}, {{-1.0, 0.8}, {0.2, -0.3}}},
                                      {{{0.6, 0.4}, {-0.2, 0.5}}, {{-0.7, -0.2}, {0.3, -0.4}}}};
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t k = 0; k < 2; ++k) G.omega(h, k) = omega[h][k];
    for (std::size_t i = 0; i < 2; ++i) {
      std::copy_n(gates[h][i], 4, G.gate(h, i).begin());
      for (std::size_t k = 0; k < 2; ++k) std::copy_n(experts[h][i][k], 2, G.expert(h, i, k).begin());
    }
  }
  return G;
}

}  // namespace hmoe
