#pragma once

#include <span>
#include <vector>

#include "hmc/geometry.hpp"
#include "hmc/listmode.hpp"
#include "hmc/pci.hpp"

namespace hmc {

// Moves every event into the frame of the first trajectory second. With
// M_rel(t) = relative_motion(traj, t_0, floor(t)) the endpoints become
// M_rel(t)^-1 p, which undoes the head pose change since t_0 under the
// head-to-scanner pose convention. Corrected endpoints may leave the detector
// surface. Throws Errc::TrajectoryGap when a second is missing.
ListmodeFile ebe_correct(const ListmodeFile& events, const MotionTrajectory& traj);

struct MlemOptions {
  double init = 1.0;            // uniform starting value
  double sens_floor = 1e-3;     // voxels with lower sensitivity are held at zero
  double forward_floor = 1e-12;
};

// Listmode MLEM: x <- x / s * P^T (1 / P x) over the event LORs. With no
// events the initial image is returned. `sens` must share `grid`.
CloudImage reconstruct_mlem(std::span<const ListmodeEvent> events, const GridSpec& grid, int n_iters,
                            const ImageVolume& sens, const MlemOptions& opt = {},
                            std::vector<double>* log_likelihood = nullptr);

// Poisson log-likelihood of the events under x, up to a constant:
// sum_e log(P x)_e - sum_v s_v x_v.
double listmode_log_likelihood(std::span<const ListmodeEvent> events, const ImageVolume& x, const ImageVolume& sens,
                               double forward_floor = 1e-12);

// (pred - gold) / max |pred - gold|; all zero when the images are identical.
// Throws Errc::GeometryMismatch.
CloudImage error_map(const CloudImage& pred, const CloudImage& gold);

}  // namespace hmc
