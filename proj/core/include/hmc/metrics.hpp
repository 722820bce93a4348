#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hmc/geometry.hpp"
#include "hmc/grid.hpp"

namespace hmc {

struct RmseResult {
  double trans_rmse = 0;  // mean of the tx, ty, tz RMSEs (mm)
  double rot_rmse = 0;    // mean of the rx, ry, rz RMSEs (deg)
  std::array<double, 6> components{};
};

// Per-component RMSE over all entries. Throws Errc::TimebaseMismatch when the
// trajectories do not share timestamps, Errc::EmptySeries when empty.
RmseResult rmse_components(const MotionTrajectory& pred, const MotionTrajectory& gold);

struct MdeResult {
  double mde = 0;  // mm
  std::map<int, double> per_roi;
  std::vector<int> skipped;  // ROIs without voxels or mass in either image
};

// Mean over ROIs of |COM_pred - COM_gold|. Throws Errc::GeometryMismatch,
// Errc::EmptyRoi when no ROI is usable.
MdeResult mde(const ImageVolume& pred, const ImageVolume& gold, const LabelVolume& labels);

// Per ROI: 100 |mean_pred - mean_gold| / mean_gold. Throws Errc::ZeroGoldMean,
// Errc::GeometryMismatch.
std::map<int, double> roi_adr(const ImageVolume& pred, const ImageVolume& gold, const LabelVolume& labels);

// sum (a-b)^2 / sum b^2. Throws Errc::ShapeMismatch, Errc::ZeroMass when b is all zero.
double nmse(std::span<const double> a, std::span<const double> b);

// Mean local SSIM over every fully contained 7^3 window (smaller volumes use
// the whole extent per axis). Population statistics; k1 = 0.01 and k2 = 0.03
// scaled by the joint dynamic range of a and b.
double ssim(const ImageVolume& a, const ImageVolume& b, int window = 7);

struct MeanSd {
  double mean = 0;
  double sd = 0;  // sample standard deviation; 0 for a single value
};
MeanSd mean_sd(std::span<const double> values);

}  // namespace hmc
