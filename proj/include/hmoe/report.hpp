#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmoe/experiment.hpp"

namespace hmoe {

inline constexpr const char* kResultsHeader = "variant,K,n,trial,loss_l2,loss_l1_r1,reg_l2,epochs,seed";

/// Completed trials only, in the order given. Doubles are written with 17
/// significant digits so a re-read reproduces them exactly.
std::string results_csv(const std::vector<TrialRecord>& trials);
std::vector<TrialRecord> parse_results_csv(const std::string& text);

void write_results_csv(const std::vector<TrialRecord>& trials, const std::filesystem::path& path);
std::vector<TrialRecord> read_results_csv(const std::filesystem::path& path);

nlohmann::json rates_json(const RateReport& report);

/// Log-log plot of the panel loss for one (variant, K): mean markers, 2-sd
/// error bars and the fitted line dashed.
std::string rate_plot_svg(const RateReport& report, Variant v, std::size_t K);

/// Writes results.csv, rates.json and one plot per (variant, K) with data.
/// Returns the paths written.
std::vector<std::filesystem::path> emit_outputs(const RateReport& report,
                                                const std::filesystem::path& dir);

}  // namespace hmoe
