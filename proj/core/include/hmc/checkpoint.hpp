#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "hmc/network.hpp"

namespace hmc::nn {

struct CheckpointMeta {
  std::int64_t step = 0;
  int epoch = 0;
  double val_trans_rmse_mm = 0;
  double val_rot_rmse_deg = 0;
  std::string rng_state;  // textual std::mt19937_64 state
  std::string config_hash;
};

// "HMCCKPT1", u32 version, u32 manifest length, JSON manifest (architecture
// version, model config, shapes, meta), then for each parameter and buffer:
// u32 name length, UTF-8 name, u64 element count, float64 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const MotionNet& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  MotionNet model;
  CheckpointMeta meta;
};
// Throws Errc::FormatError, Errc::IoError, Errc::ConfigError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hmc::nn
