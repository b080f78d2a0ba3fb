#include "hmoe/data.hpp"

#include <fstream>
#include <random>

#include "hmoe/error.hpp"
#include "hmoe/model.hpp"

namespace hmoe {

Dataset generate_dataset(const MixingMeasure& truth, const ModelSpec& spec, std::size_t n, double nu,
                         std::uint64_t seed) {
  if (n == 0) throw ConfigError("sample size must be >= 1");
  if (!(nu >= 0.0)) throw ConfigError("noise sd must be >= 0");
  Dataset data;
  data.n = n;
  data.d = truth.d();
  data.meta = {spec.variant, nu, seed};
  data.X.resize(n * data.d);
  data.Y.resize(n);

  // Separate streams for covariates and noise.
  std::mt19937_64 xrng(derive_seed({seed, 0x58}));
  std::mt19937_64 erng(derive_seed({seed, 0x45}));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : data.X) v = unif(xrng);
  for (std::size_t i = 0; i < n; ++i) {
    data.Y[i] = eval_model(truth, spec, data.row(i));
    if (nu > 0.0) data.Y[i] += nu * gauss(erng);
  }
  return data;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t state = 0x6a09e667f3bcc909ULL;
  for (auto k : keys) state = mix64(state ^ mix64(k));
  return state;
}

nlohmann::json to_json(const Dataset& data) {
  nlohmann::json X = nlohmann::json::array();
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto r = data.row(i);
    X.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"n", data.n},
          {"d", data.d},
          {"variant", to_string(data.meta.variant)},
          {"noise_sd", data.meta.noise_sd},
          {"seed", data.meta.seed},
          {"X", X},
          {"Y", data.Y}};
}

Dataset dataset_from_json(const nlohmann::json& j) {
  Dataset data;
  try {
    data.n = j.at("n").get<std::size_t>();
    data.d = j.at("d").get<std::size_t>();
    if (j.contains("variant")) data.meta.variant = variant_from_string(j.at("variant").get<std::string>());
    data.meta.noise_sd = j.value("noise_sd", 0.0);
    data.meta.seed = j.value("seed", std::uint64_t{0});
    const auto& X = j.at("X");
    data.Y = j.at("Y").get<std::vector<double>>();
    if (X.size() != data.n || data.Y.size() != data.n)
      throw DimensionError("dataset JSON: X and Y must have n rows");
    data.X.reserve(data.n * data.d);
    for (const auto& row : X) {
      const auto r = row.get<std::vector<double>>();
      if (r.size() != data.d) throw DimensionError("dataset JSON: X row of wrong length");
      data.X.insert(data.X.end(), r.begin(), r.end());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DimensionError(std::string("dataset JSON: ") + e.what());
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file '" + path + "'");
  out << to_json(data).dump() << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("'" + path + "': " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace hmoe
