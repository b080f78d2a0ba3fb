#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>

#include "hmoe/estimator.hpp"
#include "hmoe/measure.hpp"

namespace hmoe {

/// X rows i.i.d. U([-1,1]^d); Y = f_G(X) + nu * N(0,1). Fully determined by seed.
Dataset generate_dataset(const MixingMeasure& truth, const ModelSpec& spec, std::size_t n, double nu,
                         std::uint64_t seed);

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Child seed for a keyed tuple, e.g. (master, variant, K, n, trial). Each
/// key is folded through mix64 so distinct tuples get unrelated streams.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys);

nlohmann::json to_json(const Dataset& data);
Dataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace hmoe
