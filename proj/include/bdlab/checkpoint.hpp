#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "bdlab/model.hpp"

namespace bdlab {

inline constexpr char kCheckpointMagic[] = "BDLAB1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, u64 header length, JSON header (schedule kind,
// T, architecture, tensor manifest, free-form meta), then little-endian
// float64 arrays in manifest order. Variational tensors contribute mu, rho,
// prior_mean and a one-element prior_sigma array.
std::string serialize_checkpoint(const DenoiserModel& model, const nlohmann::json& meta = nlohmann::json::object());
DenoiserModel deserialize_checkpoint(const std::string& bytes, nlohmann::json* meta = nullptr);

void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model,
                     const nlohmann::json& meta = nlohmann::json::object());
DenoiserModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

nlohmann::json checkpoint_manifest(const DenoiserModel& model);

}  // namespace bdlab
