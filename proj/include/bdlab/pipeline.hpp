#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bdlab/config.hpp"

namespace bdlab {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumeric = 3 };

struct CommandOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    Overrides overrides;
    // probe only
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::string> probe_kind;
    // report only
    std::vector<std::filesystem::path> csvs;
};

// Each command returns an exit code and never lets an exception escape.
int cmd_pretrain(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_finetune(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_probe(const CommandOptions& o, std::ostream& out, std::ostream& err);
int cmd_report(const CommandOptions& o, std::ostream& out, std::ostream& err);

struct SeriesSummary {
    std::string source;
    std::string arm;
    std::uint64_t seed = 0;
    bool detected = false;
    double dip_depth = 0.0;
    double trough_fidelity = 0.0;
    std::int64_t trough_iteration = 0;
    double final_quality = 0.0;
};

struct ArmSummary {
    std::string arm;
    std::size_t runs = 0;
    std::size_t detected = 0;
    double dip_mean = 0.0, dip_std = 0.0;
    double trough_mean = 0.0, trough_std = 0.0;
    double quality_mean = 0.0, quality_std = 0.0;
};

SeriesSummary summarize_series(const std::vector<MetricsRow>& rows, std::string source, std::string arm,
                               std::uint64_t seed);
std::vector<ArmSummary> summarize_arms(const std::vector<SeriesSummary>& series);

}  // namespace bdlab
