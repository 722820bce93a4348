#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hmc/geometry.hpp"
#include "hmc/grid.hpp"

namespace hmc {

// Labelled digital head phantom. Activity is an emission rate in
// events / s / mm^3 per label; label 0 is background with zero activity.
struct Phantom {
  LabelVolume labels;
  std::map<int, double> activity;
  std::map<int, std::string> roi_names;

  // sum over labels of activity(label) * volume(label), events / s
  double total_activity() const;
  // Labels > 0 that occur in the grid, ascending.
  std::vector<int> roi_labels() const;
  std::size_t voxel_count(int label) const;
  double voxel_activity(std::size_t index) const;
};

GridSpec default_phantom_grid();  // 128 x 128 x 96 at 2 mm, centred

// Presets: "ellipsoid-brain". Throws Errc::UnknownPreset.
Phantom build_phantom(std::string_view preset, std::uint64_t seed,
                      const GridSpec& grid = default_phantom_grid());

// Validates the invariants (activity labels present in grid, activities >= 0,
// background inactive). Throws Errc::FormatError.
void validate_phantom(const Phantom& ph);

// Raw little-endian int16 labels at `<stem>.i16` plus `<stem>.json`.
void save_phantom(const std::filesystem::path& stem, const Phantom& ph,
                  const std::string& config_hash = {});
Phantom load_phantom(const std::filesystem::path& stem);

struct TrajectoryConfig {
  double duration = 300;            // s
  int n_jumps = 30;
  double jump_translation_sd = 1.18;  // mm per component
  double jump_rotation_sd = 0.6;      // deg per component
  double drift_rate = 0.01;          // mm / s, in a random direction
  std::uint64_t seed = 0;
};

// Piecewise-constant poses with n_jumps step changes at uniformly drawn
// seconds, plus a linear translational drift. Identity at t = 0.
MotionTrajectory generate_trajectory(const TrajectoryConfig& cfg);

// Motion magnitude summary: mean over the scan and over 64 points spread on a
// sphere of `radius` mm of the displacement |M_t p - M_0 p|.
double motion_summary(const MotionTrajectory& traj, double radius = 64.0);

// Intensity-weighted centroid (mm, world) of `volume` inside `label`.
// Throws Errc::EmptyRoi, Errc::ZeroMass, Errc::GeometryMismatch.
Vec3 roi_center_of_mass(const ImageVolume& volume, const LabelVolume& labels, int label);

// Nearest-neighbour transfer of labels onto another grid (for evaluating
// reconstructions that do not share the phantom grid).
LabelVolume resample_labels(const LabelVolume& labels, const GridSpec& target);

}  // namespace hmc
