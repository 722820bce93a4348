#include "hmc/listmode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "hmc/binary_io.hpp"
#include "hmc/error.hpp"
#include "hmc/parallel.hpp"
#include "json.hpp"

namespace hmc {
namespace {

constexpr char kMagic[12] = {'H', 'M', 'C', '-', 'L', 'I', 'S', 'T', 'M', 'O', 'D', 'E'};

// Largest float32-representable time inside [second, second + 1), so that the
// on-disk float32 value stays in the same one-second window.
double quantize_time(int second, double u) {
  const double t = second + u;
  auto tf = static_cast<float>(t);
  const auto limit = static_cast<float>(second + 1);
  if (tf >= limit) tf = std::nextafter(limit, 0.0f);
  if (tf < static_cast<float>(second)) tf = static_cast<float>(second);
  return tf;
}

}  // namespace

std::span<const ListmodeEvent> ListmodeFile::window(double start, double end) const {
  auto lo = std::lower_bound(events.begin(), events.end(), start,
                             [](const ListmodeEvent& e, double v) { return e.t < v; });
  auto hi = std::lower_bound(lo, events.end(), end, [](const ListmodeEvent& e, double v) { return e.t < v; });
  return {events.data() + (lo - events.begin()), static_cast<std::size_t>(hi - lo)};
}

std::optional<LorEndpoints> cylinder_intersect(const Vec3& o, const Vec3& d, const ScannerGeometry& geom) {
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-15) return std::nullopt;
  const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
  const double c = o.x() * o.x() + o.y() * o.y() - geom.radius * geom.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc <= 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  // numerically stable root pair
  const double q = -0.5 * (b + std::copysign(sq, b));
  double s1 = q / a;
  double s2 = q != 0 ? c / q : -s1;
  if (s1 > s2) std::swap(s1, s2);
  Vec3 p1 = o + s1 * d;
  Vec3 p2 = o + s2 * d;
  if (std::abs(p1.z()) > geom.axial_half_length || std::abs(p2.z()) > geom.axial_half_length) return std::nullopt;
  return LorEndpoints{p1, p2};
}

EmissionSampler::EmissionSampler(const Phantom& ph) : grid_(ph.labels.grid) {
  const double vv = grid_.voxel_volume();
  double acc = 0;
  for (std::size_t i = 0; i < ph.labels.data.size(); ++i) {
    const double a = ph.voxel_activity(i);
    if (a <= 0) continue;
    acc += a * vv;
    cdf_.push_back(acc);
    voxels_.push_back(static_cast<std::uint32_t>(i));
  }
  total_ = acc;
}

EmissionSampler EmissionSampler::point(const Vec3& position, double activity) {
  EmissionSampler s;
  s.point_ = position;
  s.total_ = activity;
  return s;
}

Vec3 EmissionSampler::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (point_) return *point_;
  const double u = unit(rng) * total_;
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  const std::uint32_t idx = voxels_[static_cast<std::size_t>(it - cdf_.begin())];
  const int nx = grid_.dims[0], ny = grid_.dims[1];
  const int i = static_cast<int>(idx % nx);
  const int j = static_cast<int>((idx / nx) % ny);
  const int k = static_cast<int>(idx / (static_cast<std::uint32_t>(nx) * ny));
  return {grid_.origin[0] + (i + unit(rng)) * grid_.spacing[0], grid_.origin[1] + (j + unit(rng)) * grid_.spacing[1],
          grid_.origin[2] + (k + unit(rng)) * grid_.spacing[2]};
}

void simulate_second(const EmissionSampler& sampler, const Mat4& pose, const ScannerGeometry& geom,
                     double expected_emissions, int second, std::uint64_t master_seed,
                     std::vector<ListmodeEvent>& out) {
  if (!(expected_emissions > 0)) return;
  std::mt19937_64 rng(derive_seed(master_seed, static_cast<std::uint64_t>(second)));
  std::poisson_distribution<long long> poisson(expected_emissions);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const long long n = poisson(rng);

  std::vector<double> times(static_cast<std::size_t>(n));
  for (auto& t : times) t = quantize_time(second, unit(rng));
  std::sort(times.begin(), times.end());

  const Eigen::Matrix3d rot = pose.topLeftCorner<3, 3>();
  const Vec3 trans = pose.topRightCorner<3, 1>();
  for (long long e = 0; e < n; ++e) {
    const Vec3 x = rot * sampler.sample(rng) + trans;
    const double cz = 2.0 * unit(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    const Vec3 dir(sz * std::cos(phi), sz * std::sin(phi), cz);
    auto hit = cylinder_intersect(x, dir, geom);
    if (!hit) continue;
    out.push_back({times[static_cast<std::size_t>(e)], hit->first, hit->second});
  }
}

ListmodeFile simulate_listmode(const EmissionSampler& sampler, const MotionTrajectory& traj,
                               const ScannerGeometry& geom, double rate_scale, double duration,
                               std::uint64_t seed) {
  if (!geom.valid()) fail(Errc::ConfigError, "invalid scanner geometry");
  if (!(duration > 0) || !(rate_scale >= 0)) fail(Errc::ConfigError, "invalid duration or rate");
  const int seconds = static_cast<int>(std::ceil(duration));
  for (int s = 0; s < seconds; ++s) {
    if (!traj.has_time(s)) {
      fail(Errc::TrajectoryTooShort, "trajectory has no pose for second " + std::to_string(s));
    }
  }
  const double expected = rate_scale * sampler.total_activity();

  std::vector<std::vector<ListmodeEvent>> blocks(static_cast<std::size_t>(seconds));
  parallel_for(blocks.size(), [&](std::size_t s) {
    const auto sec = static_cast<int>(s);
    const double frac = std::min(1.0, duration - sec);  // partial last second
    simulate_second(sampler, to_matrix(traj.pose_at(sec)), geom, expected * frac, sec, seed, blocks[s]);
    if (frac < 1.0) {
      std::erase_if(blocks[s], [&](const ListmodeEvent& e) { return e.t >= duration; });
    }
  });

  ListmodeFile file;
  file.header.geometry = geom;
  file.header.duration = duration;
  file.header.seed = seed;
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.size();
  file.events.reserve(total);
  for (auto& b : blocks) file.events.insert(file.events.end(), b.begin(), b.end());
  return file;
}

ListmodeFile simulate_listmode(const Phantom& ph, const MotionTrajectory& traj, const ScannerGeometry& geom,
                               double rate_scale, double duration, std::uint64_t seed) {
  return simulate_listmode(EmissionSampler(ph), traj, geom, rate_scale, duration, seed);
}

void write_listmode(const std::filesystem::path& path, const ListmodeFile& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::IoError, "cannot write " + path.string());
  nlohmann::json h;
  h["format"] = "hmc-listmode";
  h["scanner"] = {{"radius_mm", file.header.geometry.radius},
                  {"axial_half_length_mm", file.header.geometry.axial_half_length}};
  h["duration_s"] = file.header.duration;
  h["event_count"] = file.events.size();
  h["seed"] = file.header.seed;
  h["record"] = "t,p1x,p1y,p1z,p2x,p2y,p2z float32le";
  if (!file.header.config_hash.empty()) h["config_hash"] = file.header.config_hash;
  const std::string header = h.dump();

  os.write(kMagic, sizeof(kMagic));
  io::write_u32(os, kListmodeVersion);
  io::write_u32(os, static_cast<std::uint32_t>(header.size()));
  io::write_bytes(os, header);
  std::vector<float> rec;
  rec.reserve(7 * 4096);
  for (std::size_t i = 0; i < file.events.size(); ++i) {
    const auto& e = file.events[i];
    rec.insert(rec.end(), {static_cast<float>(e.t), static_cast<float>(e.p1.x()), static_cast<float>(e.p1.y()),
                           static_cast<float>(e.p1.z()), static_cast<float>(e.p2.x()), static_cast<float>(e.p2.y()),
                           static_cast<float>(e.p2.z())});
    if (rec.size() >= 7 * 4096 || i + 1 == file.events.size()) {
      io::write_f32_array(os, std::span<const float>(rec));
      rec.clear();
    }
  }
  if (!os) fail(Errc::IoError, "write failed for " + path.string());
}

ListmodeFile read_listmode(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::IoError, "cannot open " + path.string());
  const auto magic = io::read_bytes(is, sizeof(kMagic));
  if (!std::equal(magic.begin(), magic.end(), kMagic)) fail(Errc::FormatError, "not a listmode file: " + path.string());
  const auto version = io::read_u32(is);
  if (version != kListmodeVersion) fail(Errc::FormatError, "unsupported listmode version " + std::to_string(version));
  const auto hlen = io::read_u32(is);
  ListmodeFile file;
  std::uint64_t count = 0;
  try {
    const auto h = nlohmann::json::parse(io::read_bytes(is, hlen));
    file.header.geometry.radius = h.at("scanner").at("radius_mm").get<double>();
    file.header.geometry.axial_half_length = h.at("scanner").at("axial_half_length_mm").get<double>();
    file.header.duration = h.at("duration_s").get<double>();
    file.header.seed = h.value("seed", std::uint64_t{0});
    file.header.config_hash = h.value("config_hash", std::string{});
    count = h.at("event_count").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("listmode header: ") + e.what());
  }
  file.events.resize(count);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t n = std::min<std::size_t>(kChunk, count - start);
    const auto rec = io::read_f32_array(is, 7 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const float* r = rec.data() + 7 * i;
      file.events[start + i] = {r[0], Vec3(r[1], r[2], r[3]), Vec3(r[4], r[5], r[6])};
    }
  }
  for (std::size_t i = 1; i < file.events.size(); ++i) {
    if (file.events[i].t < file.events[i - 1].t) fail(Errc::FormatError, "listmode events not sorted by time");
  }
  return file;
}

}  // namespace hmc
