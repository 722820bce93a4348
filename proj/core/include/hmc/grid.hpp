#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "hmc/geometry.hpp"

namespace hmc {

// Regular 3-D voxel grid. `origin` is the world position (mm) of the outer
// corner of voxel (0,0,0); voxel (i,j,k) is centred at origin + (idx + 0.5) * spacing.
// Storage order is x fastest: index = (k * ny + j) * nx + i.
struct GridSpec {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1, 1, 1};
  std::array<double, 3> origin{0, 0, 0};

  // Grid of the given size centred on the world origin.
  static GridSpec centered(std::array<int, 3> dims, std::array<double, 3> spacing);

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  Vec3 center(int i, int j, int k) const {
    return {origin[0] + (i + 0.5) * spacing[0], origin[1] + (j + 0.5) * spacing[1],
            origin[2] + (k + 0.5) * spacing[2]};
  }
  Vec3 lower() const { return {origin[0], origin[1], origin[2]}; }
  Vec3 upper() const {
    return {origin[0] + dims[0] * spacing[0], origin[1] + dims[1] * spacing[1],
            origin[2] + dims[2] * spacing[2]};
  }
  bool valid() const;
};

bool same_geometry(const GridSpec& a, const GridSpec& b, double tol = 1e-6);
// Throws Errc::GeometryMismatch.
void require_same_geometry(const GridSpec& a, const GridSpec& b, const char* what);

template <typename T>
struct Volume {
  GridSpec grid;
  std::vector<T> data;

  Volume() = default;
  explicit Volume(const GridSpec& g, T fill = T{}) : grid(g), data(g.voxel_count(), fill) {}

  T& at(int i, int j, int k) { return data[grid.index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data[grid.index(i, j, k)]; }
};

using LabelVolume = Volume<int>;
using ImageVolume = Volume<double>;

}  // namespace hmc
