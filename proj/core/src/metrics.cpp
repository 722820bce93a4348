#include "hmc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hmc/error.hpp"
#include "hmc/phantom.hpp"

namespace hmc {

RmseResult rmse_components(const MotionTrajectory& pred, const MotionTrajectory& gold) {
  if (gold.empty()) fail(Errc::EmptySeries, "empty gold trajectory");
  if (pred.size() != gold.size())
    fail(Errc::TimebaseMismatch, "trajectories have " + std::to_string(pred.size()) + " and " +
                                     std::to_string(gold.size()) + " entries");
  std::array<double, 6> ss{};
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (std::abs(pred[i].time - gold[i].time) > 1e-6)
      fail(Errc::TimebaseMismatch, "timestamps differ at entry " + std::to_string(i));
    const auto p = pred[i].pose.as_array();
    const auto g = gold[i].pose.as_array();
    for (int k = 0; k < 6; ++k) ss[k] += (p[k] - g[k]) * (p[k] - g[k]);
  }
  RmseResult r;
  for (int k = 0; k < 6; ++k) r.components[k] = std::sqrt(ss[k] / static_cast<double>(gold.size()));
  r.trans_rmse = (r.components[0] + r.components[1] + r.components[2]) / 3.0;
  r.rot_rmse = (r.components[3] + r.components[4] + r.components[5]) / 3.0;
  return r;
}

MdeResult mde(const ImageVolume& pred, const ImageVolume& gold, const LabelVolume& labels) {
  require_same_geometry(pred.grid, labels.grid, "mde prediction");
  require_same_geometry(gold.grid, labels.grid, "mde gold");
  std::vector<int> rois;
  for (int v : labels.data)
    if (v > 0) rois.push_back(v);
  std::sort(rois.begin(), rois.end());
  rois.erase(std::unique(rois.begin(), rois.end()), rois.end());

  MdeResult r;
  double sum = 0;
  for (int label : rois) {
    try {
      const Vec3 a = roi_center_of_mass(pred, labels, label);
      const Vec3 b = roi_center_of_mass(gold, labels, label);
      r.per_roi[label] = (a - b).norm();
      sum += r.per_roi[label];
    } catch (const Error& e) {
      if (e.code() != Errc::EmptyRoi && e.code() != Errc::ZeroMass) throw;
      r.skipped.push_back(label);
    }
  }
  if (r.per_roi.empty()) fail(Errc::EmptyRoi, "no ROI usable for MDE");
  r.mde = sum / static_cast<double>(r.per_roi.size());
  return r;
}

std::map<int, double> roi_adr(const ImageVolume& pred, const ImageVolume& gold, const LabelVolume& labels) {
  require_same_geometry(pred.grid, labels.grid, "adr prediction");
  require_same_geometry(gold.grid, labels.grid, "adr gold");
  std::map<int, std::array<double, 3>> acc;  // sum_pred, sum_gold, count
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const int l = labels.data[i];
    if (l <= 0) continue;
    auto& a = acc[l];
    a[0] += pred.data[i];
    a[1] += gold.data[i];
    a[2] += 1;
  }
  std::map<int, double> out;
  for (const auto& [l, a] : acc) {
    const double mp = a[0] / a[2], mg = a[1] / a[2];
    if (mg == 0) fail(Errc::ZeroGoldMean, "ROI " + std::to_string(l) + " has zero mean in the gold image");
    out[l] = 100.0 * std::abs(mp - mg) / std::abs(mg);
  }
  return out;
}

double nmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(Errc::ShapeMismatch, "nmse operands differ in size");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  if (den == 0) fail(Errc::ZeroMass, "nmse reference is all zero");
  return num / den;
}

namespace {

// Summed-volume table with a zero border: S(i,j,k) = sum over [0,i)x[0,j)x[0,k).
struct Integral {
  int nx, ny, nz;
  std::vector<double> s;
  Integral(const GridSpec& g, const std::vector<double>& v)
      : nx(g.dims[0]), ny(g.dims[1]), nz(g.dims[2]),
        s(static_cast<std::size_t>(nx + 1) * (ny + 1) * (nz + 1), 0.0) {
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          at(i + 1, j + 1, k + 1) = v[g.index(i, j, k)] + at(i, j + 1, k + 1) + at(i + 1, j, k + 1) +
                                    at(i + 1, j + 1, k) - at(i, j, k + 1) - at(i, j + 1, k) - at(i + 1, j, k) +
                                    at(i, j, k);
        }
  }
  double& at(int i, int j, int k) { return s[(static_cast<std::size_t>(k) * (ny + 1) + j) * (nx + 1) + i]; }
  double at(int i, int j, int k) const { return s[(static_cast<std::size_t>(k) * (ny + 1) + j) * (nx + 1) + i]; }
  double box(int i, int j, int k, int wx, int wy, int wz) const {
    const int I = i + wx, J = j + wy, K = k + wz;
    return at(I, J, K) - at(i, J, K) - at(I, j, K) - at(I, J, k) + at(i, j, K) + at(i, J, k) + at(I, j, k) -
           at(i, j, k);
  }
};

}  // namespace

double ssim(const ImageVolume& a, const ImageVolume& b, int window) {
  require_same_geometry(a.grid, b.grid, "ssim");
  if (window < 1) fail(Errc::ConfigError, "ssim window must be >= 1");
  // joint dynamic range keeps the index symmetric in (a, b); it equals the
  // range of b whenever a stays inside it
  const auto [amn, amx] = std::minmax_element(a.data.begin(), a.data.end());
  const auto [bmn, bmx] = std::minmax_element(b.data.begin(), b.data.end());
  double range = std::max(*amx, *bmx) - std::min(*amn, *bmn);
  if (!(range > 0)) range = 1.0;
  const double C1 = (0.01 * range) * (0.01 * range);
  const double C2 = (0.03 * range) * (0.03 * range);

  const auto& g = a.grid;
  // second moments from globally centred copies (they are shift invariant)
  // to limit cancellation in the summed-volume tables
  const double ca = std::accumulate(a.data.begin(), a.data.end(), 0.0) / static_cast<double>(a.data.size());
  const double cb = std::accumulate(b.data.begin(), b.data.end(), 0.0) / static_cast<double>(b.data.size());
  std::vector<double> xa(a.data.size()), xb(a.data.size()), aa(a.data.size()), bb(a.data.size()), ab(a.data.size());
  for (std::size_t i = 0; i < aa.size(); ++i) {
    xa[i] = a.data[i] - ca;
    xb[i] = b.data[i] - cb;
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  const Integral Sa(g, xa), Sb(g, xb), Saa(g, aa), Sbb(g, bb), Sab(g, ab);
  const int wx = std::min(window, g.dims[0]), wy = std::min(window, g.dims[1]), wz = std::min(window, g.dims[2]);
  const double n = static_cast<double>(wx) * wy * wz;
  double total = 0;
  std::size_t count = 0;
  for (int k = 0; k + wz <= g.dims[2]; ++k)
    for (int j = 0; j + wy <= g.dims[1]; ++j)
      for (int i = 0; i + wx <= g.dims[0]; ++i) {
        const double da = Sa.box(i, j, k, wx, wy, wz) / n;
        const double db = Sb.box(i, j, k, wx, wy, wz) / n;
        const double va = std::max(0.0, Saa.box(i, j, k, wx, wy, wz) / n - da * da);
        const double vb = std::max(0.0, Sbb.box(i, j, k, wx, wy, wz) / n - db * db);
        const double cov = Sab.box(i, j, k, wx, wy, wz) / n - da * db;
        const double ma = da + ca, mb = db + cb;
        total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        ++count;
      }
  return total / static_cast<double>(count);
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd r;
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

}  // namespace hmc
