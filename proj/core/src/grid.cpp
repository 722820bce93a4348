#include "hmc/grid.hpp"

#include <cmath>
#include <sstream>

#include "hmc/error.hpp"

namespace hmc {

GridSpec GridSpec::centered(std::array<int, 3> dims, std::array<double, 3> spacing) {
  GridSpec g;
  g.dims = dims;
  g.spacing = spacing;
  for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * dims[a] * spacing[a];
  return g;
}

bool GridSpec::valid() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0 || !(spacing[a] > 0) || !std::isfinite(origin[a])) return false;
  }
  return true;
}

bool same_geometry(const GridSpec& a, const GridSpec& b, double tol) {
  for (int k = 0; k < 3; ++k) {
    if (a.dims[k] != b.dims[k]) return false;
    if (std::abs(a.spacing[k] - b.spacing[k]) > tol) return false;
    if (std::abs(a.origin[k] - b.origin[k]) > tol) return false;
  }
  return true;
}

void require_same_geometry(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!same_geometry(a, b)) {
    std::ostringstream msg;
    msg << what << ": grids differ (" << a.dims[0] << "x" << a.dims[1] << "x" << a.dims[2] << " vs "
        << b.dims[0] << "x" << b.dims[1] << "x" << b.dims[2] << ")";
    fail(Errc::GeometryMismatch, msg.str());
  }
}

}  // namespace hmc
