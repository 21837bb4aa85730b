#pragma once

// Checkpoint file layout:
//
//   "AGSV" | u32 format_version | u32 text length | canonical config text |
//   u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 dims[rank], float32 values (little endian)
//
// The config text is one "key=value" line per setting, in a fixed order.
// Parameters are stored as float32, so loading rounds them to single
// precision.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "agsv/trainer.hpp"

namespace agsv {

std::string canonical_config_text(const TrainConfig& config);
TrainConfig parse_config_text(const std::string& text);

/// Dotted keys; missing keys keep their defaults. If learning_rate is absent
/// it is derived from batch_pairs. Throws ParameterError on unknown keys or
/// unparsable values.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& config);

std::vector<std::uint8_t> serialize_checkpoint(const EncoderCheckpoint& checkpoint);
/// Throws CorruptFile or VersionMismatch.
EncoderCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const EncoderCheckpoint& checkpoint, const std::filesystem::path& path);
EncoderCheckpoint load_checkpoint(const std::filesystem::path& path);

/// "epoch,mean_loss" header, epochs numbered from 1.
std::string loss_curve_csv(const LossCurve& curve);
void write_loss_curve_csv(const LossCurve& curve, const std::filesystem::path& path);

}  // namespace agsv
