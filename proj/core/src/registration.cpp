#include "hmc/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hmc/error.hpp"
#include "hmc/parallel.hpp"

namespace hmc {
namespace {

double snap(double u) {
  const double r = std::round(u);
  return std::abs(u - r) < 1e-9 ? r : u;
}

double sample_trilinear(const ImageVolume& img, double ux, double uy, double uz) {
  const auto& d = img.grid.dims;
  ux = snap(ux);
  uy = snap(uy);
  uz = snap(uz);
  const double fx = std::floor(ux), fy = std::floor(uy), fz = std::floor(uz);
  if (fx < -1 || fy < -1 || fz < -1 || fx >= d[0] || fy >= d[1] || fz >= d[2]) return 0.0;
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  const double wx = ux - fx, wy = uy - fy, wz = uz - fz;
  double acc = 0;
  for (int c = 0; c < 8; ++c) {
    const int x = x0 + (c & 1), y = y0 + ((c >> 1) & 1), z = z0 + ((c >> 2) & 1);
    const double w = ((c & 1) ? wx : 1 - wx) * (((c >> 1) & 1) ? wy : 1 - wy) * (((c >> 2) & 1) ? wz : 1 - wz);
    if (w == 0 || x < 0 || y < 0 || z < 0 || x >= d[0] || y >= d[1] || z >= d[2]) continue;
    acc += w * img.data[img.grid.index(x, y, z)];
  }
  return acc;
}

// Calls f(flat_index, value) with value = img(M v) for every voxel centre v of
// the image grid; M maps output world coordinates to input world coordinates.
template <typename F>
void pull(const ImageVolume& img, const Mat4& M, F&& f) {
  const auto& g = img.grid;
  // continuous input index of output voxel (i,j,k) is affine in (i,j,k)
  Eigen::Matrix3d A;
  Eigen::Vector3d b;
  const Eigen::Matrix3d R = M.topLeftCorner<3, 3>();
  const Eigen::Vector3d t = M.topRightCorner<3, 1>();
  const Eigen::Vector3d s(g.spacing[0], g.spacing[1], g.spacing[2]);
  const Eigen::Vector3d o(g.origin[0], g.origin[1], g.origin[2]);
  const Eigen::Vector3d c0 = o + 0.5 * s;
  A = s.cwiseInverse().asDiagonal() * R * s.asDiagonal();
  b = (R * c0 + t - o).cwiseQuotient(s) - Eigen::Vector3d::Constant(0.5);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j) {
      const Eigen::Vector3d row = b + A.col(1) * j + A.col(2) * k;
      std::size_t idx = g.index(0, j, k);
      for (int i = 0; i < g.dims[0]; ++i, ++idx) {
        const Eigen::Vector3d u = row + A.col(0) * i;
        f(idx, sample_trilinear(img, u[0], u[1], u[2]));
      }
    }
}

std::vector<double> unit_mean(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::vector<double> out(v.size(), 0.0);
  if (m != 0)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / m;
  return out;
}

struct Level {
  ImageVolume ref, mov;
  double ref_ms = 1;  // mean square of ref
};

double level_metric(const Level& L, const RigidTransform& theta) {
  double ss = 0;
  // resample_rigid(mov, inverse(theta)) samples mov at theta * v
  pull(L.mov, to_matrix(theta), [&](std::size_t i, double v) {
    const double d = L.ref.data[i] - v;
    ss += d * d;
  });
  return ss / static_cast<double>(L.ref.data.size()) / L.ref_ms;
}

Level make_level(const ImageVolume& ref, const ImageVolume& mov, int shrink) {
  Level L;
  L.ref = ref;
  L.mov = mov;
  L.ref.data = unit_mean(ref.data);
  L.mov.data = unit_mean(mov.data);
  if (shrink > 1) {
    std::array<int, 3> dims{};
    for (int a = 0; a < 3; ++a) dims[a] = std::max(1, ref.grid.dims[a] / shrink);
    CloudImage r, m;
    r.image = L.ref;
    m.image = L.mov;
    L.ref = downsample_area(r, dims).image;
    L.mov = downsample_area(m, dims).image;
  }
  double ms = 0;
  for (double v : L.ref.data) ms += v * v;
  ms /= static_cast<double>(L.ref.data.size());
  L.ref_ms = ms > 0 ? ms : 1.0;
  return L;
}

}  // namespace

void RegConfig::validate() const {
  if (levels < 1 || max_iters < 1 || !(tol > 0) || line_search_iters < 1)
    fail(Errc::ConfigError, "registration needs levels, iterations and line-search steps >= 1 and tol > 0");
  if (!(max_translation_mm > 0) || !(max_rotation_deg > 0) || !(bracket_mm > 0) || !(bracket_deg > 0))
    fail(Errc::ConfigError, "registration bounds and brackets must be positive");
}

ImageVolume resample_rigid(const ImageVolume& img, const RigidTransform& t) {
  ImageVolume out(img.grid, 0.0);
  pull(img, to_matrix(inverse(t)), [&](std::size_t i, double v) { out.data[i] = v; });
  return out;
}

CloudImage resample_rigid(const CloudImage& img, const RigidTransform& t) {
  CloudImage out = img;
  out.image = resample_rigid(img.image, t);
  return out;
}

double ssd_metric(const ImageVolume& ref, const ImageVolume& mov, const RigidTransform& theta) {
  require_same_geometry(ref.grid, mov.grid, "registration");
  return level_metric(make_level(ref, mov, 1), theta);
}

RegResult register_rigid(const ImageVolume& ref, const ImageVolume& mov, const RegConfig& cfg,
                         const RigidTransform& init) {
  cfg.validate();
  require_same_geometry(ref.grid, mov.grid, "registration");
  const double bound[6] = {cfg.max_translation_mm, cfg.max_translation_mm, cfg.max_translation_mm,
                           cfg.max_rotation_deg,   cfg.max_rotation_deg,   cfg.max_rotation_deg};
  std::array<double, 6> x = init.as_array();
  for (int p = 0; p < 6; ++p) x[p] = std::clamp(x[p], -bound[p], bound[p]);

  RegResult res;
  double first_metric = 0;
  double f = 0;
  constexpr double kInvPhi = 0.6180339887498949;
  for (int level = 0; level < cfg.levels; ++level) {
    const int shrink = 1 << (cfg.levels - 1 - level);
    const Level L = make_level(ref, mov, shrink);
    auto eval = [&](const std::array<double, 6>& p) { return level_metric(L, RigidTransform::from_array(p)); };
    f = eval(x);
    if (level == 0) first_metric = f;
    auto& hist = res.history.emplace_back();
    hist.push_back(f);
    double h[6];
    const double scale = static_cast<double>(shrink);
    for (int p = 0; p < 6; ++p) h[p] = (p < 3 ? cfg.bracket_mm : cfg.bracket_deg) * scale / (level == 0 ? 1 : 2);
    for (int it = 0; it < cfg.max_iters; ++it) {
      ++res.iterations;
      const double f_sweep = f;
      for (int p = 0; p < 6; ++p) {
        double lo = std::max(-bound[p], x[p] - h[p]), hi = std::min(bound[p], x[p] + h[p]);
        auto at = [&](double v) {
          auto q = x;
          q[p] = v;
          return eval(q);
        };
        double a = hi - kInvPhi * (hi - lo), b = lo + kInvPhi * (hi - lo);
        double fa = at(a), fb = at(b);
        for (int s = 0; s < cfg.line_search_iters; ++s) {
          if (fa < fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - kInvPhi * (hi - lo);
            fa = at(a);
          } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + kInvPhi * (hi - lo);
            fb = at(b);
          }
        }
        const double cand = fa < fb ? a : b;
        const double fc = std::min(fa, fb);
        if (fc < f) {  // only accepted steps, so the metric never increases
          x[p] = cand;
          f = fc;
          hist.push_back(f);
        }
      }
      for (double& v : h) v = std::max(0.5 * v, 1e-3);
      if (f_sweep - f <= cfg.tol * std::max(f_sweep, 1e-12)) break;
    }
  }
  res.theta = RigidTransform::from_array(x);
  res.metric = f;
  res.stalled = !(f < first_metric);
  for (int p = 0; p < 6; ++p)
    if (std::abs(x[p]) >= bound[p] * (1 - 1e-9)) res.stalled = true;
  return res;
}

MotionTrajectory register_series(std::span<const CloudImage> pcis, const RegConfig& cfg,
                                 std::vector<RegResult>* details) {
  if (pcis.empty()) fail(Errc::EmptySeries, "no PCIs to register");
  cfg.validate();
  std::vector<RegResult> results(pcis.size());
  if (cfg.warm_start) {
    for (std::size_t i = 1; i < pcis.size(); ++i)
      results[i] = register_rigid(pcis[0].image, pcis[i].image, cfg, results[i - 1].theta);
  } else {
    parallel_for(pcis.size() - 1, [&](std::size_t i) {
      results[i + 1] = register_rigid(pcis[0].image, pcis[i + 1].image, cfg);
    });
  }
  MotionTrajectory out;
  for (std::size_t i = 0; i < pcis.size(); ++i)
    out.push_back({pcis[i].t_start, i == 0 ? RigidTransform::identity() : results[i].theta});
  if (details) *details = std::move(results);
  return out;
}

}  // namespace hmc
