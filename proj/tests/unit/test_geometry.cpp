#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/LU>

#include "hmc/error.hpp"
#include "hmc/geometry.hpp"
#include "test_util.hpp"

using namespace hmc;

namespace {

// Independent elementary rotations, composed by hand.
Eigen::Matrix3d rx_deg(double a) {
  const double r = a * M_PI / 180, c = std::cos(r), s = std::sin(r);
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}
Eigen::Matrix3d ry_deg(double a) {
  const double r = a * M_PI / 180, c = std::cos(r), s = std::sin(r);
  Eigen::Matrix3d m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}
Eigen::Matrix3d rz_deg(double a) {
  const double r = a * M_PI / 180, c = std::cos(r), s = std::sin(r);
  Eigen::Matrix3d m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

RigidTransform random_transform(std::mt19937_64& rng, double max_deg = 45, double max_mm = 50) {
  std::uniform_real_distribution<double> r(-max_deg, max_deg), t(-max_mm, max_mm);
  return {t(rng), t(rng), t(rng), r(rng), r(rng), r(rng)};
}

double param_distance(const RigidTransform& a, const RigidTransform& b) {
  double d = 0;
  const auto x = a.as_array(), y = b.as_array();
  for (int i = 0; i < 6; ++i) d = std::max(d, std::abs(x[i] - y[i]));
  return d;
}

}  // namespace

TEST_CASE("to_matrix of the zero transform is the identity") {
  CHECK(to_matrix(RigidTransform{}).isApprox(Mat4::Identity(), 0.0));
}

TEST_CASE("pure translation fills the translation column") {
  const Mat4 m = to_matrix({1, 2, 3, 0, 0, 0});
  CHECK(m.topLeftCorner<3, 3>() == Eigen::Matrix3d::Identity());
  CHECK(m(0, 3) == 1);
  CHECK(m(1, 3) == 2);
  CHECK(m(2, 3) == 3);
}

TEST_CASE("rx 90 maps +y onto +z") {
  const Vec3 p = map_point(RigidTransform{0, 0, 0, 90, 0, 0}, Vec3(0, 1, 0));
  CHECK((p - Vec3(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("matrix follows T * Rz * Ry * Rx") {
  std::mt19937_64 rng(7);
  for (int n = 0; n < 100; ++n) {
    const RigidTransform t = random_transform(rng, 170, 100);
    Mat4 ref = Mat4::Identity();
    ref.topLeftCorner<3, 3>() = rz_deg(t.rz) * ry_deg(t.ry) * rx_deg(t.rx);
    ref.topRightCorner<3, 1>() = Vec3(t.tx, t.ty, t.tz);
    CHECK((to_matrix(t) - ref).norm() < 1e-12);
  }
}

TEST_CASE("rotation block is orthonormal with unit determinant") {
  std::mt19937_64 rng(8);
  for (int n = 0; n < 1000; ++n) {
    const Mat4 m = to_matrix(random_transform(rng, 180));
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    CHECK(orthonormality_error(m) < 1e-9);
    CHECK(std::abs(r.determinant() - 1) < 1e-9);
  }
}

TEST_CASE("from_matrix recovers parameters") {
  CHECK(from_matrix(Mat4::Identity()) == RigidTransform{});
  const RigidTransform t{5, -3, 2, 10, -20, 30};
  CHECK(param_distance(from_matrix(to_matrix(t)), t) < 1e-7);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ang(-89.9, 89.9);
  for (int n = 0; n < 1000; ++n) {
    const RigidTransform u{1, 2, 3, ang(rng), ang(rng), ang(rng)};
    CHECK(param_distance(from_matrix(to_matrix(u)), u) < 1e-7);
  }
}

TEST_CASE("from_matrix rejects reflections and non-rigid blocks") {
  Mat4 m = Mat4::Identity();
  m(0, 0) = -1;
  CHECK_ERRC(from_matrix(m), Errc::NotRigid);
  Mat4 s = Mat4::Identity() * 1.01;
  s(3, 3) = 1;
  CHECK_ERRC(from_matrix(s), Errc::NotRigid);
}

TEST_CASE("from_matrix signals gimbal lock at ry = 90") {
  CHECK_ERRC(from_matrix(to_matrix({0, 0, 0, 10, 90, 5})), Errc::GimbalLock);
}

TEST_CASE("compose matches the matrix product") {
  std::mt19937_64 rng(10);
  for (int n = 0; n < 200; ++n) {
    const RigidTransform a = random_transform(rng, 30), b = random_transform(rng, 30);
    CHECK((to_matrix(compose(a, b)) - to_matrix(a) * to_matrix(b)).norm() < 1e-9);
  }
  const RigidTransform s = compose({1, 2, 3, 0, 0, 0}, {10, 20, 30, 0, 0, 0});
  CHECK(param_distance(s, {11, 22, 33, 0, 0, 0}) < 1e-12);
}

TEST_CASE("group laws on random transforms") {
  std::mt19937_64 rng(11);
  for (int n = 0; n < 1000; ++n) {
    const RigidTransform a = random_transform(rng), b = random_transform(rng), c = random_transform(rng);
    CHECK(param_distance(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-7);
    CHECK(param_distance(compose(a, inverse(a)), RigidTransform{}) < 1e-7);
    CHECK(param_distance(compose(inverse(a), a), RigidTransform{}) < 1e-7);
    CHECK(param_distance(compose(RigidTransform{}, a), a) < 1e-7);
    CHECK(param_distance(compose(a, RigidTransform{}), a) < 1e-7);
  }
}

TEST_CASE("map_point preserves distances") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-200, 200);
  for (int n = 0; n < 1000; ++n) {
    const RigidTransform t = random_transform(rng, 180, 100);
    const Vec3 p(u(rng), u(rng), u(rng)), q(u(rng), u(rng), u(rng));
    CHECK(std::abs((map_point(t, p) - map_point(t, q)).norm() - (p - q).norm()) < 1e-9);
  }
  const Vec3 p(3, -4, 5);
  CHECK(map_point(RigidTransform{}, p) == p);
  CHECK((map_point(RigidTransform{1, 2, 3, 0, 0, 0}, p) - Vec3(4, -2, 8)).norm() == 0);
}

TEST_CASE("relative_motion examples") {
  MotionTrajectory traj({{0, {}}, {1, {4, 0, 0, 0, 0, 0}}, {2, {0, 0, 0, 0, 0, 30}}, {3, {2, 0, 0, 0, 0, 30}}});
  CHECK(param_distance(relative_motion(traj, 1, 1), RigidTransform{}) < 1e-12);
  CHECK(param_distance(relative_motion(traj, 0, 1), {4, 0, 0, 0, 0, 0}) < 1e-12);
  // M_ref^-1 M_mov with ref = Rz(30), mov = T(2,0,0) Rz(30): translation Rz(-30) (2,0,0)
  const RigidTransform r = relative_motion(traj, 2, 3);
  const double c = std::cos(M_PI / 6), s = std::sin(M_PI / 6);
  CHECK(param_distance(r, {2 * c, -2 * s, 0, 0, 0, 0}) < 1e-9);
  CHECK_ERRC(relative_motion(traj, 0, 7), Errc::MissingTimepoint);
}

TEST_CASE("relative motions chain") {
  std::mt19937_64 rng(13);
  std::vector<TrajectoryEntry> e;
  for (int s = 0; s < 50; ++s) e.push_back({static_cast<double>(s), random_transform(rng, 20, 20)});
  const MotionTrajectory traj(e);
  for (int n = 0; n < 200; ++n) {
    const int a = static_cast<int>(rng() % 50), b = static_cast<int>(rng() % 50), c = static_cast<int>(rng() % 50);
    CHECK(param_distance(relative_motion(traj, a, a), RigidTransform{}) < 1e-9);
    const RigidTransform chained = compose(relative_motion(traj, a, b), relative_motion(traj, b, c));
    CHECK(param_distance(chained, relative_motion(traj, a, c)) < 1e-6);
  }
}

TEST_CASE("trajectory times must increase") {
  MotionTrajectory traj;
  traj.push_back({0, {}});
  CHECK_ERRC(traj.push_back({0, {}}), Errc::FormatError);
  CHECK(traj.coverage_end() == 1.0);
  CHECK(MotionTrajectory::stationary(5).size() == 5);
}

TEST_CASE("trajectory CSV round trip is exact") {
  std::mt19937_64 rng(14);
  std::vector<TrajectoryEntry> e;
  for (int s = 0; s < 20; ++s) e.push_back({static_cast<double>(s), random_transform(rng)});
  const MotionTrajectory traj(e);
  std::stringstream ss;
  write_trajectory_csv(ss, traj);
  CHECK(ss.str().rfind("time_s,tx_mm,ty_mm,tz_mm,rx_deg,ry_deg,rz_deg\n", 0) == 0);
  const MotionTrajectory back = read_trajectory_csv(ss);
  REQUIRE(back.size() == traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    CHECK(back[i].time == traj[i].time);
    CHECK(back[i].pose == traj[i].pose);
  }
  std::stringstream bad("time,x\n");
  CHECK_ERRC(read_trajectory_csv(bad), Errc::FormatError);
}
