#pragma once

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace hmc {

using Vec3 = Eigen::Vector3d;
using Mat4 = Eigen::Matrix4d;

// Six-parameter rigid motion. Translations in mm, rotations in degrees.
// Matrix convention (used everywhere in the project):
//   M = T(tx,ty,tz) * Rz(rz) * Ry(ry) * Rx(rx)
// i.e. extrinsic rotations about the fixed world axes, x first, then y, then z.
struct RigidTransform {
  double tx = 0, ty = 0, tz = 0;
  double rx = 0, ry = 0, rz = 0;

  static RigidTransform identity() { return {}; }
  static RigidTransform from_array(const std::array<double, 6>& p) {
    return {p[0], p[1], p[2], p[3], p[4], p[5]};
  }
  std::array<double, 6> as_array() const { return {tx, ty, tz, rx, ry, rz}; }

  bool operator==(const RigidTransform&) const = default;
};

Mat4 to_matrix(const RigidTransform& t);

// Inverse of to_matrix. ry is taken on the asin branch, so ry is in [-90, 90].
// Throws Errc::NotRigid when the rotation block is not orthonormal with det +1
// (tolerance 1e-6), Errc::GimbalLock when |cos(ry)| < 1e-6.
RigidTransform from_matrix(const Mat4& m);

// matrix(compose(a, b)) == matrix(a) * matrix(b)
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& t);
Mat4 rigid_inverse(const Mat4& m);

Vec3 map_point(const RigidTransform& t, const Vec3& p);
inline Vec3 map_point(const Mat4& m, const Vec3& p) {
  return m.topLeftCorner<3, 3>() * p + m.topRightCorner<3, 1>();
}

// Frobenius norm of R^T R - I for the rotation block.
double orthonormality_error(const Mat4& m);

struct TrajectoryEntry {
  double time = 0;  // seconds since scan start
  RigidTransform pose;
};

// Time-indexed gold-standard poses, one per integer second. Each pose maps head
// coordinates into scanner coordinates at that second.
class MotionTrajectory {
 public:
  MotionTrajectory() = default;
  explicit MotionTrajectory(std::vector<TrajectoryEntry> entries);

  // Identity pose at every second in [0, seconds).
  static MotionTrajectory stationary(int seconds);

  const std::vector<TrajectoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const TrajectoryEntry& operator[](std::size_t i) const { return entries_[i]; }

  bool has_time(double t) const;
  // Throws Errc::MissingTimepoint.
  const RigidTransform& pose_at(double t) const;
  // Seconds covered: [first time, last time + 1).
  double coverage_end() const;

  void push_back(TrajectoryEntry e);

 private:
  std::ptrdiff_t find(double t) const;
  std::vector<TrajectoryEntry> entries_;
};

// Params of M_ref^-1 * M_mov: maps head coordinates at t_mov into head
// coordinates at t_ref. Throws Errc::MissingTimepoint.
RigidTransform relative_motion(const MotionTrajectory& traj, double t_ref, double t_mov);

// Trajectory of relative_motion(traj, first time, t) for every entry.
MotionTrajectory relative_to_first(const MotionTrajectory& traj);

// CSV: header `time_s,tx_mm,ty_mm,tz_mm,rx_deg,ry_deg,rz_deg`.
void write_trajectory_csv(std::ostream& os, const MotionTrajectory& traj);
void write_trajectory_csv(const std::filesystem::path& path, const MotionTrajectory& traj);
MotionTrajectory read_trajectory_csv(std::istream& is);
MotionTrajectory read_trajectory_csv(const std::filesystem::path& path);

}  // namespace hmc
