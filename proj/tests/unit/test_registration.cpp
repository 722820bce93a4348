#include <doctest.h>

#include <cmath>
#include <random>

#include "hmc/registration.hpp"
#include "test_util.hpp"

using namespace hmc;

namespace {

const GridSpec kGrid = GridSpec::centered({32, 32, 32}, {4, 4, 4});

// smooth, asymmetric blob image
ImageVolume blobs(const GridSpec& g = kGrid) {
  struct B {
    Vec3 c, s;
    double a;
  };
  const B parts[] = {{{-10, 6, 4}, {14, 10, 12}, 1.0}, {{16, -8, -6}, {8, 12, 7}, 0.7}, {{2, 18, -14}, {9, 6, 8}, 1.3}};
  ImageVolume v(g, 0.0);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 p = g.center(i, j, k);
        double acc = 0;
        for (const auto& b : parts) acc += b.a * std::exp(-0.5 * (p - b.c).cwiseQuotient(b.s).squaredNorm());
        v.at(i, j, k) = acc;
      }
  return v;
}

double max_abs_diff(const ImageVolume& a, const ImageVolume& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

RigidTransform rt(double tx, double ty, double tz, double rx, double ry, double rz) { return {tx, ty, tz, rx, ry, rz}; }

void check_close(const RigidTransform& got, const RigidTransform& want, double mm, double deg) {
  const auto g = got.as_array(), w = want.as_array();
  for (int c = 0; c < 3; ++c) CHECK(std::abs(g[c] - w[c]) < mm);
  for (int c = 3; c < 6; ++c) CHECK(std::abs(g[c] - w[c]) < deg);
}

}  // namespace

TEST_CASE("rigid resampling") {
  const ImageVolume img = blobs();
  CHECK(max_abs_diff(resample_rigid(img, {}), img) == 0);

  // integer-voxel translation is an index shift
  const ImageVolume shifted = resample_rigid(img, rt(8, -4, 4, 0, 0, 0));
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i) {
        const int si = i - 2, sj = j + 1, sk = k - 1;
        const bool inside = si >= 0 && si < 32 && sj >= 0 && sj < 32 && sk >= 0 && sk < 32;
        CHECK(shifted.at(i, j, k) == (inside ? img.at(si, sj, sk) : 0.0));
      }

  // two resamples approximate one composed resample
  const RigidTransform a = rt(6, -4, 2, 12, -6, 4), b = rt(-3, 5, 1, -5, 10, 8);
  const ImageVolume twice = resample_rigid(resample_rigid(img, a), b);
  const ImageVolume once = resample_rigid(img, compose(b, a));
  const ImageVolume wrong = resample_rigid(img, compose(a, b));
  const double good = ssd_metric(once, twice, {}), bad = ssd_metric(wrong, twice, {});
  CHECK(good < 2e-3);
  CHECK(good < 0.1 * bad);
}

TEST_CASE("self registration stays at identity") {
  const ImageVolume img = blobs();
  const RegResult r = register_rigid(img, img, RegConfig{});
  check_close(r.theta, {}, 0.05, 0.05);
  CHECK(r.metric < 1e-8);
}

TEST_CASE("one-voxel shift is recovered") {
  const ImageVolume ref = blobs();
  const RigidTransform truth = rt(4, 0, 0, 0, 0, 0);
  const RegResult r = register_rigid(ref, resample_rigid(ref, truth), RegConfig{});
  check_close(r.theta, truth, 0.2 * 4, 0.2);
  CHECK_FALSE(r.stalled);
  for (const auto& level : r.history) {
    REQUIRE_FALSE(level.empty());
    for (std::size_t i = 1; i < level.size(); ++i) CHECK(level[i] < level[i - 1]);
  }
}

TEST_CASE("general rigid motion is recovered and registration is inverse consistent") {
  const ImageVolume ref = blobs();
  const RigidTransform truth = rt(5.5, -3, 2, 3, -2, 4);
  const ImageVolume mov = resample_rigid(ref, truth);
  const RegResult fwd = register_rigid(ref, mov, RegConfig{});
  check_close(fwd.theta, truth, 0.8, 0.4);
  const RegResult back = register_rigid(mov, ref, RegConfig{});
  check_close(compose(fwd.theta, back.theta), {}, 2 * 0.8, 2 * 0.4);
}

TEST_CASE("noise pair stays finite and bounded") {
  std::mt19937_64 rng(4);
  std::poisson_distribution<int> p(3.0);
  ImageVolume a(kGrid, 0.0), b(kGrid, 0.0);
  for (auto& v : a.data) v = p(rng);
  for (auto& v : b.data) v = p(rng);
  RegConfig cfg;
  cfg.max_iters = 20;
  const RegResult r = register_rigid(a, b, cfg);
  const auto x = r.theta.as_array();
  for (int c = 0; c < 6; ++c) {
    CHECK(std::isfinite(x[c]));
    CHECK(std::abs(x[c]) <= (c < 3 ? cfg.max_translation_mm : cfg.max_rotation_deg));
  }
  CHECK(std::isfinite(r.metric));
}

TEST_CASE("series registration") {
  const ImageVolume ref = blobs(GridSpec::centered({16, 16, 16}, {8, 8, 8}));
  const RigidTransform motions[] = {{}, rt(3, 0, 0, 0, 0, 0), rt(3, -2, 1, 0, 2, 0), rt(-4, 1, 2, 1, 0, -3)};
  std::vector<CloudImage> series;
  for (int s = 0; s < 4; ++s) {
    CloudImage c;
    c.image = resample_rigid(ref, motions[s]);
    c.t_start = s;
    c.t_end = s + 1;
    series.push_back(c);
  }
  for (bool warm : {false, true}) {
    RegConfig cfg;
    cfg.warm_start = warm;
    std::vector<RegResult> details;
    const MotionTrajectory t = register_series(series, cfg, &details);
    REQUIRE(t.size() == 4);
    CHECK(details.size() == 4);
    CHECK(t[0].pose == RigidTransform{});
    for (int s = 1; s < 4; ++s) {
      CHECK(t[s].time == s);
      const Vec3 probe(20, -10, 15);
      // error expressed as displacement of a point inside the object, in voxels
      const double err = (map_point(t[s].pose, probe) - map_point(motions[s], probe)).norm() / 8;
      CHECK(err < 0.5);
    }
  }
  CHECK_ERRC(register_series({}, RegConfig{}), Errc::EmptySeries);
}

TEST_CASE("registration input validation") {
  const ImageVolume a = blobs();
  const ImageVolume b(GridSpec::centered({32, 32, 30}, {4, 4, 4}), 1.0);
  CHECK_ERRC(register_rigid(a, b, RegConfig{}), Errc::GeometryMismatch);
  RegConfig bad;
  bad.tol = 0;
  CHECK_ERRC(register_rigid(a, a, bad), Errc::ConfigError);
}
