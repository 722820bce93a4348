#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hmc/listmode.hpp"
#include "hmc/network.hpp"
#include "hmc/pci.hpp"
#include "hmc/phantom.hpp"
#include "hmc/registration.hpp"
#include "hmc/training.hpp"

// Resolved run configuration shared by the CLI and the acceptance suite. One
// master seed feeds every random stream through derive_seed.
namespace hmc::pipeline {

struct SimulateConfig {
  std::string preset = "ellipsoid-brain";
  int subjects = 10;
  double duration = 300;      // s
  double event_rate = 5e4;    // detected events / s, approximate
  TrajectoryConfig trajectory;  // seed and duration are filled per subject
  std::uint64_t sensitivity_samples = 4'000'000;
};

struct ReconConfig {
  std::array<int, 3> dims{64, 64, 48};
  std::array<double, 3> spacing{4, 4, 4};
  int iterations = 10;
  std::uint64_t sensitivity_samples = 2'000'000;

  GridSpec grid() const { return GridSpec::centered(dims, spacing); }
};

struct Config {
  std::uint64_t seed = 0;
  SimulateConfig simulate;
  std::array<int, 3> pci_dims = kDefaultPciDims;
  nn::ModelConfig model;
  TrainConfig train;
  int val_subjects = 1;   // the last subjects of the training data
  int test_subjects = 2;  // held out after the validation subjects
  RegConfig reg;
  ReconConfig recon;
  std::string method = "dl";  // label written by evaluate
};

// Config{} carries the library defaults. Presets: "default" (the desk-scale
// study: 300 s scans, 60 of 300 time points per subject) and "tiny" (seconds-long smoke runs).
// Throws Errc::UnknownPreset.
Config preset(std::string_view name);

// Sections override the defaults of `base`; unknown keys are errors.
// Throws Errc::ConfigError.
Config parse_config(std::string_view json_text, const Config& base = {});
Config load_config(const std::filesystem::path& path, const Config& base = {});
std::string to_json(const Config& cfg);  // every field, 2-space indented
std::string config_hash(const Config& cfg);

// Stream ids for derive_seed(cfg.seed, id).
enum class Stream : std::uint64_t { Sensitivity = 1, Model = 2, Train = 3, ReconSensitivity = 4, Phantom = 100, Trajectory = 200, Events = 300, Empty = 400 };
std::uint64_t seed_for(const Config& cfg, Stream s, std::uint64_t subject = 0);

nn::ModelConfig model_config(const Config& cfg);  // seeded
TrainConfig train_config(const Config& cfg);      // seeded

struct Subject {
  std::string id;
  Phantom phantom;
  MotionTrajectory trajectory;
  double rate_scale = 0;  // activity multiplier giving ~event_rate detected events / s
};
Subject make_subject(const Config& cfg, int index);

SensitivityMap pci_sensitivity(const Config& cfg);
SensitivityMap recon_sensitivity(const Config& cfg);

// `fraction` thins the emission rate (1 = full study rate).
ListmodeFile simulate_events(const Config& cfg, const Subject& s, int index, double fraction = 1.0,
                             bool motion_free = false);

// PCIs of every second built while simulating, without keeping the events.
// Identical event stream to simulate_events(cfg, s, index).
std::vector<CloudImage> simulate_pcis(const Config& cfg, const Subject& s, int index, const SensitivityMap& sens);

}  // namespace hmc::pipeline
