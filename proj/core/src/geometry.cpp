#include "hmc/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "hmc/error.hpp"

namespace hmc {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;
constexpr double kTimeEps = 1e-9;

Eigen::Matrix3d rotation_matrix(double rx_deg, double ry_deg, double rz_deg) {
  const double cx = std::cos(rx_deg * kDegToRad), sx = std::sin(rx_deg * kDegToRad);
  const double cy = std::cos(ry_deg * kDegToRad), sy = std::sin(ry_deg * kDegToRad);
  const double cz = std::cos(rz_deg * kDegToRad), sz = std::sin(rz_deg * kDegToRad);
  Eigen::Matrix3d r;
  // Rz * Ry * Rx, expanded
  r << cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
       sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
       -sy,     cy * sx,                cy * cx;
  return r;
}

}  // namespace

Mat4 to_matrix(const RigidTransform& t) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix(t.rx, t.ry, t.rz);
  m(0, 3) = t.tx;
  m(1, 3) = t.ty;
  m(2, 3) = t.tz;
  return m;
}

double orthonormality_error(const Mat4& m) {
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
}

RigidTransform from_matrix(const Mat4& m) {
  const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
  if (!m.allFinite() || orthonormality_error(m) > 1e-6 || std::abs(r.determinant() - 1.0) > 1e-6) {
    fail(Errc::NotRigid, "rotation block is not a proper rotation");
  }
  const double sy = std::clamp(-r(2, 0), -1.0, 1.0);
  const double ry = std::asin(sy);
  const double cy = std::cos(ry);
  if (std::abs(cy) < 1e-6) fail(Errc::GimbalLock, "ry at +-90 deg, Euler angles are not unique");
  RigidTransform t;
  t.rx = std::atan2(r(2, 1), r(2, 2)) * kRadToDeg;
  t.ry = ry * kRadToDeg;
  t.rz = std::atan2(r(1, 0), r(0, 0)) * kRadToDeg;
  t.tx = m(0, 3);
  t.ty = m(1, 3);
  t.tz = m(2, 3);
  return t;
}

Mat4 rigid_inverse(const Mat4& m) {
  Mat4 inv = Mat4::Identity();
  const Eigen::Matrix3d rt = m.topLeftCorner<3, 3>().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.topRightCorner<3, 1>() = -rt * m.topRightCorner<3, 1>();
  return inv;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return from_matrix(to_matrix(a) * to_matrix(b));
}

RigidTransform inverse(const RigidTransform& t) { return from_matrix(rigid_inverse(to_matrix(t))); }

Vec3 map_point(const RigidTransform& t, const Vec3& p) { return map_point(to_matrix(t), p); }

MotionTrajectory::MotionTrajectory(std::vector<TrajectoryEntry> entries) {
  entries_.reserve(entries.size());
  for (auto& e : entries) push_back(e);
}

MotionTrajectory MotionTrajectory::stationary(int seconds) {
  MotionTrajectory traj;
  for (int s = 0; s < seconds; ++s) traj.push_back({static_cast<double>(s), {}});
  return traj;
}

void MotionTrajectory::push_back(TrajectoryEntry e) {
  if (!std::isfinite(e.time)) fail(Errc::FormatError, "non-finite trajectory time");
  if (!entries_.empty() && !(e.time > entries_.back().time)) {
    fail(Errc::FormatError, "trajectory times must be strictly increasing");
  }
  entries_.push_back(e);
}

std::ptrdiff_t MotionTrajectory::find(double t) const {
  if (entries_.empty()) return -1;
  // fast path: one entry per integer second starting at entries_[0].time
  const double offset = t - entries_.front().time;
  const auto guess = static_cast<std::ptrdiff_t>(std::llround(offset));
  if (guess >= 0 && guess < static_cast<std::ptrdiff_t>(entries_.size()) &&
      std::abs(entries_[guess].time - t) < kTimeEps) {
    return guess;
  }
  auto it = std::lower_bound(entries_.begin(), entries_.end(), t - kTimeEps,
                             [](const TrajectoryEntry& e, double v) { return e.time < v; });
  if (it != entries_.end() && std::abs(it->time - t) < kTimeEps) return it - entries_.begin();
  return -1;
}

bool MotionTrajectory::has_time(double t) const { return find(t) >= 0; }

const RigidTransform& MotionTrajectory::pose_at(double t) const {
  const auto i = find(t);
  if (i < 0) {
    std::ostringstream msg;
    msg << "no trajectory entry at t=" << t;
    fail(Errc::MissingTimepoint, msg.str());
  }
  return entries_[static_cast<std::size_t>(i)].pose;
}

double MotionTrajectory::coverage_end() const {
  return entries_.empty() ? 0.0 : entries_.back().time + 1.0;
}

RigidTransform relative_motion(const MotionTrajectory& traj, double t_ref, double t_mov) {
  const Mat4 ref = to_matrix(traj.pose_at(t_ref));
  const Mat4 mov = to_matrix(traj.pose_at(t_mov));
  return from_matrix(rigid_inverse(ref) * mov);
}

MotionTrajectory relative_to_first(const MotionTrajectory& traj) {
  MotionTrajectory out;
  if (traj.empty()) return out;
  const Mat4 ref_inv = rigid_inverse(to_matrix(traj[0].pose));
  for (const auto& e : traj.entries()) out.push_back({e.time, from_matrix(ref_inv * to_matrix(e.pose))});
  return out;
}

void write_trajectory_csv(std::ostream& os, const MotionTrajectory& traj) {
  os << "time_s,tx_mm,ty_mm,tz_mm,rx_deg,ry_deg,rz_deg\n";
  char buf[64];
  auto put = [&](double v) {
    // shortest round-trip representation, '.' decimal separator regardless of locale
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    os.write(buf, end - buf);
  };
  for (const auto& e : traj.entries()) {
    put(e.time);
    for (double v : e.pose.as_array()) {
      os.put(',');
      put(v);
    }
    os.put('\n');
  }
}

void write_trajectory_csv(const std::filesystem::path& path, const MotionTrajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::IoError, "cannot open " + path.string() + " for writing");
  write_trajectory_csv(os, traj);
}

MotionTrajectory read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) fail(Errc::FormatError, "empty trajectory CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "time_s,tx_mm,ty_mm,tz_mm,rx_deg,ry_deg,rz_deg") {
    fail(Errc::FormatError, "unexpected trajectory CSV header: " + line);
  }
  MotionTrajectory traj;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 7> v{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (std::size_t k = 0; k < v.size(); ++k) {
      auto [next, ec] = std::from_chars(p, end, v[k]);
      if (ec != std::errc{}) fail(Errc::FormatError, "bad number in trajectory CSV row " + std::to_string(row));
      p = next;
      if (k + 1 < v.size()) {
        if (p == end || *p != ',') fail(Errc::FormatError, "missing column in trajectory CSV row " + std::to_string(row));
        ++p;
      }
    }
    traj.push_back({v[0], RigidTransform{v[1], v[2], v[3], v[4], v[5], v[6]}});
  }
  return traj;
}

MotionTrajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::IoError, "cannot open " + path.string());
  return read_trajectory_csv(is);
}

}  // namespace hmc
