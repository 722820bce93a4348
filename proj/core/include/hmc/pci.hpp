#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hmc/grid.hpp"
#include "hmc/listmode.hpp"

namespace hmc {

enum class Normalization { Raw, SensitivityNormalized };
enum class ImageKind { Pci, Sensitivity, Reconstruction, ErrorMap };

std::string to_string(Normalization n);
std::string to_string(ImageKind k);

// A 3-D intensity image with acquisition metadata. Used for PET cloud images
// (one-second back-projections), sensitivity maps, reconstructions and error maps.
struct CloudImage {
  ImageVolume image;
  double t_start = 0;
  double t_end = 0;
  Normalization normalization = Normalization::Raw;
  ImageKind kind = ImageKind::Pci;
  std::uint64_t event_count = 0;
  std::string config_hash;

  const GridSpec& grid() const { return image.grid; }
  std::vector<double>& data() { return image.data; }
  const std::vector<double>& data() const { return image.data; }
};

struct SensitivityMap {
  ImageVolume image;
  std::vector<std::uint8_t> fov_mask;  // voxel centre inside the detector cylinder
};

// Fine back-projection grid the PCIs are formed on before downsampling:
// 64 x 64 x 64 at 4.88 x 4.88 x 3.98 mm, centred.
GridSpec default_pci_source_grid();
inline constexpr std::array<int, 3> kDefaultPciDims{32, 32, 32};

// Accumulates chord lengths of every event's LOR into `accum`.
void backproject(std::span<const ListmodeEvent> events, ImageVolume& accum);
void backproject(std::span<const ListmodeEvent> events, std::span<const double> weights, ImageVolume& accum);
// Chord-weighted voxel sums, one per event.
std::vector<double> forward_project(std::span<const ListmodeEvent> events, const ImageVolume& x);

// Raw back-projection of the events with t in [window_start, window_end).
CloudImage backproject_window(const ListmodeFile& events, double window_start, double window_end,
                              const GridSpec& grid);

// Back-projection of n_samples LORs between area-uniform points on the
// detector surface, importance-weighted by cos(theta1) cos(theta2) / d^2 so the
// LOR set is uniform in line measure; scaled to unit mean inside the FOV mask.
SensitivityMap estimate_sensitivity(const ScannerGeometry& geom, const GridSpec& grid, std::uint64_t n_samples,
                                    std::uint64_t seed);

// img / max(sens, eps). Throws Errc::GeometryMismatch.
CloudImage normalize(const CloudImage& img, const SensitivityMap& sens, double eps = 1e-3);

// Area (volume-weighted) averaging onto a coarser grid with the same extent.
// Throws Errc::InvalidTarget when a target dimension is < 1 or exceeds the source.
CloudImage downsample_area(const CloudImage& img, std::array<int, 3> target_dims);
GridSpec downsampled_grid(const GridSpec& src, std::array<int, 3> target_dims);

// One normalised, downsampled PCI for the events of [window_start, window_end).
CloudImage make_pci(std::span<const ListmodeEvent> events, double window_start, double window_end,
                    const SensitivityMap& sens, std::array<int, 3> target_dims);
// One PCI per second, tiling [t0, t1).
std::vector<CloudImage> make_pci_series(const ListmodeFile& events, const SensitivityMap& sens, double t0,
                                        double t1, std::array<int, 3> target_dims);

// Raw float32 little-endian `<stem>.f32` plus JSON sidecar `<stem>.json`.
void save_cloud_image(const std::filesystem::path& stem, const CloudImage& img);
CloudImage load_cloud_image(const std::filesystem::path& stem);
// Sensitivity adds `<stem>.mask`, one byte per voxel.
void save_sensitivity(const std::filesystem::path& stem, const SensitivityMap& sens, const std::string& config_hash = {});
SensitivityMap load_sensitivity(const std::filesystem::path& stem);

// Directory of `pci_NNNNN.{f32,json}` plus `series.json`.
void save_pci_series(const std::filesystem::path& dir, const std::vector<CloudImage>& series);
std::vector<CloudImage> load_pci_series(const std::filesystem::path& dir);

}  // namespace hmc
