#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "modalfuse/model.hpp"

namespace modalfuse {

inline constexpr char kCheckpointMagic[4] = {'A', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Model weights plus whatever the pipeline needs to reproduce evaluation.
// Auxiliary tensors are stored in the parameter list under an "aux." prefix.
struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
  std::map<std::string, Tensor, std::less<>> aux;
  nlohmann::json meta = nlohmann::json::object();
};

// Layout: "AVCK", u32 version, u32 json length, json, u32 count, then per
// tensor u16 name length, name, u8 rank, u32 dims[rank], f32 data.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace modalfuse
