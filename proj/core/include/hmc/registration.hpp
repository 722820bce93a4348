#pragma once

#include <span>
#include <vector>

#include "hmc/geometry.hpp"
#include "hmc/grid.hpp"
#include "hmc/pci.hpp"

namespace hmc {

struct RegConfig {
  int levels = 2;            // half resolution, then full PCI resolution
  int max_iters = 200;       // coordinate-descent sweeps per level
  double tol = 1e-4;         // relative decrease of the metric per sweep
  bool warm_start = false;   // series: start each second from the previous result
  double max_translation_mm = 40;
  double max_rotation_deg = 20;
  double bracket_mm = 8;     // initial line-search half width
  double bracket_deg = 4;
  int line_search_iters = 14;

  void validate() const;  // Errc::ConfigError
};

struct RegResult {
  RigidTransform theta;   // relative-motion convention: maps mov coordinates into ref
  double metric = 0;      // final normalized SSD
  bool stalled = false;   // no decrease at all, or a parameter pinned at its bound
  int iterations = 0;
  std::vector<std::vector<double>> history;  // per level: start value, then every accepted step
};

// Trilinear pullback out(v) = img(T^-1 v), zero outside the grid.
ImageVolume resample_rigid(const ImageVolume& img, const RigidTransform& t);
CloudImage resample_rigid(const CloudImage& img, const RigidTransform& t);

// Mean squared difference between ref and mov resampled by inverse(theta),
// relative to the mean square of ref. Both images are first scaled to unit mean.
double ssd_metric(const ImageVolume& ref, const ImageVolume& mov, const RigidTransform& theta);

// Minimises ssd_metric by multi-resolution coordinate descent with golden-section
// line searches. Throws Errc::GeometryMismatch.
RegResult register_rigid(const ImageVolume& ref, const ImageVolume& mov, const RegConfig& cfg,
                         const RigidTransform& init = RigidTransform::identity());

// Every PCI registered to the first; entry 0 is identity.
MotionTrajectory register_series(std::span<const CloudImage> pcis, const RegConfig& cfg,
                                 std::vector<RegResult>* details = nullptr);

}  // namespace hmc
