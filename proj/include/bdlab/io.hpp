#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bdlab/metrics.hpp"

namespace bdlab {

// Writes through a temporary sibling and renames it into place.
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string content_hash(const std::string& bytes);

inline const std::vector<std::string> kMetricsColumns = {"iteration", "fidelity", "diversity", "quality",
                                                         "sigma1",    "l_dm",     "l_r"};

std::string metrics_csv(const std::vector<MetricsRow>& rows);
// Throws ConfigError if the header does not match kMetricsColumns.
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

std::string format_double(double v);

}  // namespace bdlab
