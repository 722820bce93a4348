#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmc/geometry.hpp"
#include "hmc/grid.hpp"

namespace hmc {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row major, top row first
};

// Transverse, coronal and sagittal mid-slices side by side. Intensities map
// linearly from [0, max] to [0, 255]; with `signed_values` from [-1, 1].
GrayImage orthogonal_slices(const ImageVolume& vol, bool signed_values = false);

// Binary PGM (P5).
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

// Line plot of several equally long series on shared axes, one gray level each.
GrayImage plot_series(std::span<const std::vector<double>> series, int width = 600, int height = 200);

using NamedTrajectory = std::pair<std::string, MotionTrajectory>;

// Columns: time_s, then <name>_<component> for every trajectory. Throws
// Errc::TimebaseMismatch when the trajectories differ in length.
void write_overlay_csv(const std::filesystem::path& path, std::span<const NamedTrajectory> trajs);

// One PGM per motion component overlaying every trajectory.
void write_overlay_plots(const std::filesystem::path& dir, std::span<const NamedTrajectory> trajs);

}  // namespace hmc
