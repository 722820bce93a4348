#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "hmc/geometry.hpp"
#include "hmc/grid.hpp"

namespace hmc {

// Exact ray traversal of the segment a -> b through `grid` (Siddon weights,
// visited in Amanatides-Woo order). Calls visit(flat_index, length_mm) for
// every voxel the segment crosses with non-zero length. The lengths sum to
// the length of the part of the segment inside the grid.
template <typename Visit>
void trace_segment(const GridSpec& grid, const Vec3& a, const Vec3& b, Visit&& visit) {
  const Vec3 d = b - a;
  const double len = d.norm();
  if (!(len > 0)) return;

  double amin = 0.0, amax = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double lo = grid.origin[ax];
    const double hi = lo + grid.dims[ax] * grid.spacing[ax];
    if (d[ax] != 0.0) {
      const double a0 = (lo - a[ax]) / d[ax];
      const double a1 = (hi - a[ax]) / d[ax];
      amin = std::max(amin, std::min(a0, a1));
      amax = std::min(amax, std::max(a0, a1));
    } else if (a[ax] < lo || a[ax] >= hi) {
      return;
    }
  }
  if (!(amin < amax)) return;

  int idx[3];
  int step[3];
  double next[3];
  double delta[3];
  const std::ptrdiff_t stride[3] = {1, grid.dims[0], static_cast<std::ptrdiff_t>(grid.dims[0]) * grid.dims[1]};
  const double amid = 0.5 * (amin + amax);
  std::ptrdiff_t flat = 0;
  for (int ax = 0; ax < 3; ++ax) {
    const double p = a[ax] + amin * d[ax];
    int i = static_cast<int>(std::floor((p - grid.origin[ax]) / grid.spacing[ax]));
    // entry point sits on a boundary plane; pick the voxel the segment moves into
    if (d[ax] < 0 && i > 0) {
      const double plane = grid.origin[ax] + i * grid.spacing[ax];
      if (p <= plane && a[ax] + amid * d[ax] < plane) --i;
    }
    idx[ax] = std::clamp(i, 0, grid.dims[ax] - 1);
    flat += idx[ax] * stride[ax];
    if (d[ax] > 0) {
      step[ax] = 1;
      next[ax] = (grid.origin[ax] + (idx[ax] + 1) * grid.spacing[ax] - a[ax]) / d[ax];
      delta[ax] = grid.spacing[ax] / d[ax];
    } else if (d[ax] < 0) {
      step[ax] = -1;
      next[ax] = (grid.origin[ax] + idx[ax] * grid.spacing[ax] - a[ax]) / d[ax];
      delta[ax] = -grid.spacing[ax] / d[ax];
    } else {
      step[ax] = 0;
      next[ax] = std::numeric_limits<double>::infinity();
      delta[ax] = std::numeric_limits<double>::infinity();
    }
  }

  double acur = amin;
  for (;;) {
    int ax = 0;
    if (next[1] < next[ax]) ax = 1;
    if (next[2] < next[ax]) ax = 2;
    const double anext = std::min(next[ax], amax);
    const double w = (anext - acur) * len;
    if (w > 0) visit(static_cast<std::size_t>(flat), w);
    if (anext >= amax) break;
    idx[ax] += step[ax];
    if (idx[ax] < 0 || idx[ax] >= grid.dims[ax]) break;
    flat += step[ax] * stride[ax];
    acur = anext;
    next[ax] += delta[ax];
  }
}

}  // namespace hmc
