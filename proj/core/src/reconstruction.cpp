#include "hmc/reconstruction.hpp"

#include <algorithm>
#include <cmath>

#include "hmc/error.hpp"
#include "hmc/parallel.hpp"
#include "hmc/siddon.hpp"

namespace hmc {

ListmodeFile ebe_correct(const ListmodeFile& events, const MotionTrajectory& traj) {
  if (traj.empty()) fail(Errc::TrajectoryGap, "empty trajectory");
  ListmodeFile out;
  out.header = events.header;
  out.events = events.events;
  const double t0 = traj[0].time;
  long cached_second = std::numeric_limits<long>::min();
  Mat4 correction = Mat4::Identity();
  bool identity = true;
  for (auto& e : out.events) {
    const long s = static_cast<long>(std::floor(e.t));
    if (s != cached_second) {
      if (!traj.has_time(static_cast<double>(s)))
        fail(Errc::TrajectoryGap, "trajectory has no entry for second " + std::to_string(s));
      const RigidTransform rel = relative_motion(traj, t0, static_cast<double>(s));
      identity = rel == RigidTransform::identity();
      correction = rigid_inverse(to_matrix(rel));
      cached_second = s;
    }
    if (identity) continue;
    e.p1 = map_point(correction, e.p1);
    e.p2 = map_point(correction, e.p2);
  }
  return out;
}

namespace {

// One traversal per event: forward value, then 1/(Px) scattered back along
// the cached path. Chunks are fixed by the worker count and summed in order.
void mlem_pass(std::span<const ListmodeEvent> events, const ImageVolume& x, double floor, ImageVolume& back,
               double* loglik) {
  const auto workers = static_cast<std::size_t>(std::max(1, num_threads()));
  std::vector<ImageVolume> partial;
  std::vector<double> ll(workers, 0.0);
  if (workers > 1) partial.assign(workers, ImageVolume(x.grid, 0.0));
  parallel_for(workers, [&](std::size_t w) {
    ImageVolume& out = workers > 1 ? partial[w] : back;
    std::vector<std::pair<std::size_t, double>> path;
    const double* img = x.data.data();
    double* acc = out.data.data();
    const std::size_t lo = events.size() * w / workers, hi = events.size() * (w + 1) / workers;
    for (std::size_t e = lo; e < hi; ++e) {
      path.clear();
      double s = 0;
      trace_segment(x.grid, events[e].p1, events[e].p2, [&](std::size_t i, double len) {
        path.emplace_back(i, len);
        s += img[i] * len;
      });
      if (path.empty()) continue;
      s = std::max(s, floor);
      ll[w] += std::log(s);
      const double r = 1.0 / s;
      for (const auto& [i, len] : path) acc[i] += r * len;
    }
  });
  for (const auto& p : partial)
    for (std::size_t i = 0; i < back.data.size(); ++i) back.data[i] += p.data[i];
  if (loglik) {
    *loglik = 0;
    for (double v : ll) *loglik += v;
  }
}

}  // namespace

double listmode_log_likelihood(std::span<const ListmodeEvent> events, const ImageVolume& x, const ImageVolume& sens,
                               double forward_floor) {
  require_same_geometry(x.grid, sens.grid, "log-likelihood");
  double ll = 0;
  const double* img = x.data.data();
  for (const auto& e : events) {
    double s = 0;
    bool hit = false;
    trace_segment(x.grid, e.p1, e.p2, [&](std::size_t i, double len) {
      s += img[i] * len;
      hit = true;
    });
    if (hit) ll += std::log(std::max(s, forward_floor));
  }
  for (std::size_t i = 0; i < x.data.size(); ++i) ll -= sens.data[i] * x.data[i];
  return ll;
}

CloudImage reconstruct_mlem(std::span<const ListmodeEvent> events, const GridSpec& grid, int n_iters,
                            const ImageVolume& sens, const MlemOptions& opt, std::vector<double>* log_likelihood) {
  if (n_iters < 1) fail(Errc::ConfigError, "MLEM needs at least one iteration");
  if (!(opt.init > 0)) fail(Errc::ConfigError, "MLEM init must be positive");
  require_same_geometry(grid, sens.grid, "MLEM sensitivity");
  CloudImage img;
  img.image = ImageVolume(grid, opt.init);
  img.kind = ImageKind::Reconstruction;
  img.normalization = Normalization::SensitivityNormalized;
  img.event_count = events.size();
  if (!events.empty()) {
    img.t_start = events.front().t;
    img.t_end = events.back().t;
  }
  auto& x = img.image.data;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (sens.data[i] < opt.sens_floor) x[i] = 0;
  if (events.empty()) {
    std::fill(x.begin(), x.end(), opt.init);
    return img;
  }
  if (log_likelihood) log_likelihood->clear();
  ImageVolume back(grid, 0.0);
  for (int it = 0; it < n_iters; ++it) {
    std::fill(back.data.begin(), back.data.end(), 0.0);
    double ll = 0;
    mlem_pass(events, img.image, opt.forward_floor, back, &ll);
    if (log_likelihood) {
      double sx = 0;
      for (std::size_t i = 0; i < x.size(); ++i) sx += sens.data[i] * x[i];
      log_likelihood->push_back(ll - sx);  // likelihood of the iterate entering this pass
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = sens.data[i] < opt.sens_floor ? 0.0 : x[i] * back.data[i] / sens.data[i];
    }
  }
  return img;
}

CloudImage error_map(const CloudImage& pred, const CloudImage& gold) {
  require_same_geometry(pred.grid(), gold.grid(), "error map");
  CloudImage out = pred;
  out.kind = ImageKind::ErrorMap;
  double mx = 0;
  for (std::size_t i = 0; i < pred.data().size(); ++i) mx = std::max(mx, std::abs(pred.data()[i] - gold.data()[i]));
  for (std::size_t i = 0; i < pred.data().size(); ++i)
    out.data()[i] = mx > 0 ? (pred.data()[i] - gold.data()[i]) / mx : 0.0;
  return out;
}

}  // namespace hmc
