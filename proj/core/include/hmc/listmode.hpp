#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hmc/geometry.hpp"
#include "hmc/phantom.hpp"

namespace hmc {

// Cylindrical detector surface x^2 + y^2 = R^2, |z| <= axial_half_length (mm).
struct ScannerGeometry {
  double radius = 234.0;
  double axial_half_length = 127.0;

  bool valid() const { return radius > 0 && axial_half_length > 0; }
};

struct ListmodeEvent {
  double t = 0;  // s
  Vec3 p1 = Vec3::Zero();
  Vec3 p2 = Vec3::Zero();
};

struct ListmodeHeader {
  ScannerGeometry geometry;
  double duration = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct ListmodeFile {
  ListmodeHeader header;
  std::vector<ListmodeEvent> events;  // sorted by t

  // Events with t in [start, end).
  std::span<const ListmodeEvent> window(double start, double end) const;
};

using LorEndpoints = std::pair<Vec3, Vec3>;

// Intersections of the line origin + s * dir with the lateral cylinder
// surface, ordered by s. Returns nullopt when the line misses the surface
// twice within the axial extent, including lines parallel to the axis.
std::optional<LorEndpoints> cylinder_intersect(const Vec3& origin, const Vec3& dir,
                                               const ScannerGeometry& geom);

// Draws emission points (head frame) proportional to activity.
class EmissionSampler {
 public:
  explicit EmissionSampler(const Phantom& ph);
  // Ideal point source emitting `activity` events / s.
  static EmissionSampler point(const Vec3& position, double activity);

  double total_activity() const { return total_; }
  Vec3 sample(std::mt19937_64& rng) const;

 private:
  EmissionSampler() = default;
  GridSpec grid_;
  std::vector<double> cdf_;
  std::vector<std::uint32_t> voxels_;
  std::optional<Vec3> point_;
  double total_ = 0;
};

// Events of second `second`: Poisson(expected) emissions, each mapped to the
// scanner frame by `pose`, given an isotropic direction and kept only if the
// line meets the detector within its axial extent. Appends in time order.
void simulate_second(const EmissionSampler& sampler, const Mat4& pose, const ScannerGeometry& geom,
                     double expected_emissions, int second, std::uint64_t master_seed,
                     std::vector<ListmodeEvent>& out);

// Throws Errc::TrajectoryTooShort when the trajectory lacks any second in
// [0, duration).
ListmodeFile simulate_listmode(const EmissionSampler& sampler, const MotionTrajectory& traj,
                               const ScannerGeometry& geom, double rate_scale, double duration,
                               std::uint64_t seed);
ListmodeFile simulate_listmode(const Phantom& ph, const MotionTrajectory& traj, const ScannerGeometry& geom,
                               double rate_scale, double duration, std::uint64_t seed);

// Binary format: 12-byte magic "HMC-LISTMODE", u32 version, u32 header
// length, UTF-8 JSON header, then 7 x float32 (t, p1xyz, p2xyz) per event.
// All little-endian.
inline constexpr std::uint32_t kListmodeVersion = 1;
void write_listmode(const std::filesystem::path& path, const ListmodeFile& file);
ListmodeFile read_listmode(const std::filesystem::path& path);

}  // namespace hmc
