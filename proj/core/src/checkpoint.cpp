#include "hmc/checkpoint.hpp"

#include <fstream>
#include <map>

#include "hmc/binary_io.hpp"
#include "hmc/error.hpp"
#include "json.hpp"

namespace hmc::nn {
namespace {

using json = nlohmann::json;
constexpr std::string_view kMagic = "HMCCKPT1";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MotionNet& model, const CheckpointMeta& meta) {
  json manifest;
  manifest["architecture"] = kArchitectureVersion;
  manifest["model"] = json::parse(to_json(model.config()));
  manifest["step"] = meta.step;
  manifest["epoch"] = meta.epoch;
  manifest["val_trans_rmse_mm"] = meta.val_trans_rmse_mm;
  manifest["val_rot_rmse_deg"] = meta.val_rot_rmse_deg;
  manifest["rng_state"] = meta.rng_state;
  manifest["config_hash"] = meta.config_hash;
  manifest["parameter_count"] = model.parameter_count();
  json shapes = json::object();
  for (const auto& p : model.parameters()) shapes[p.name] = p.tensor.shape();
  for (const auto& [name, t] : model.buffers()) shapes[name] = t.shape();
  manifest["shapes"] = shapes;
  const std::string text = manifest.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(Errc::IoError, "cannot write checkpoint " + path.string());
  io::write_bytes(os, kMagic);
  io::write_u32(os, kCheckpointVersion);
  io::write_u32(os, static_cast<std::uint32_t>(text.size()));
  io::write_bytes(os, text);
  auto write_entry = [&](const std::string& name, const Tensor& t) {
    io::write_u32(os, static_cast<std::uint32_t>(name.size()));
    io::write_bytes(os, name);
    io::write_u64(os, t.numel());
    for (double v : t.value()) io::write_f64(os, v);
  };
  for (const auto& p : model.parameters()) write_entry(p.name, p.tensor);
  for (const auto& [name, t] : model.buffers()) write_entry(name, t);
  if (!os) fail(Errc::IoError, "failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::IoError, "cannot open checkpoint " + path.string());
  if (io::read_bytes(is, kMagic.size()) != kMagic) fail(Errc::FormatError, path.string() + " is not a checkpoint");
  if (const auto v = io::read_u32(is); v != kCheckpointVersion)
    fail(Errc::FormatError, "unsupported checkpoint version " + std::to_string(v));
  const auto len = io::read_u32(is);
  json manifest;
  try {
    manifest = json::parse(io::read_bytes(is, len));
  } catch (const json::exception& e) {
    fail(Errc::FormatError, std::string("checkpoint manifest: ") + e.what());
  }
  if (manifest.value("architecture", std::string()) != kArchitectureVersion)
    fail(Errc::FormatError, "checkpoint architecture '" + manifest.value("architecture", std::string()) +
                                "' is incompatible with " + kArchitectureVersion);

  MotionNet model(model_config_from_json(manifest.at("model").dump()));
  std::map<std::string, Tensor> slots;
  for (auto& p : model.parameters()) slots[p.name] = p.tensor;
  for (auto& [name, t] : model.buffers()) slots[name] = t;

  std::size_t loaded = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto nlen = io::read_u32(is);
    const std::string name = io::read_bytes(is, nlen);
    const auto count = io::read_u64(is);
    auto it = slots.find(name);
    if (it == slots.end()) fail(Errc::FormatError, "checkpoint holds unknown tensor " + name);
    auto& v = it->second.value();
    if (count != v.size()) fail(Errc::FormatError, "checkpoint tensor " + name + " has the wrong size");
    for (auto& x : v) x = io::read_f64(is);
    ++loaded;
  }
  if (loaded != slots.size()) fail(Errc::FormatError, "checkpoint is missing tensors");

  CheckpointMeta meta;
  meta.step = manifest.value("step", std::int64_t{0});
  meta.epoch = manifest.value("epoch", 0);
  meta.val_trans_rmse_mm = manifest.value("val_trans_rmse_mm", 0.0);
  meta.val_rot_rmse_deg = manifest.value("val_rot_rmse_deg", 0.0);
  meta.rng_state = manifest.value("rng_state", std::string());
  meta.config_hash = manifest.value("config_hash", std::string());
  model.set_training(false);
  return {std::move(model), meta};
}

}  // namespace hmc::nn
