#pragma once

#include "aumask/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace aumask {

// Checkpoint byte layout (all integers and doubles little-endian):
//
//   magic        8 bytes  "AUMASKCK"
//   version      u32      = 1
//   config_len   u32
//   config       config_len bytes of UTF-8 JSON (ModelConfig)
//   count        u32      number of tensors
//   per tensor:
//     name_len   u32
//     name       name_len bytes
//     rows       u64
//     cols       u64
//     data       rows * cols f64, column-major
//
// Tensors appear in for_each_tensor order; load() rejects missing, extra or
// misshapen tensors.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParameterSet<double> params;
};

nlohmann::json to_json(const ModelConfig& config);
/// Unknown keys are rejected; missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace aumask
