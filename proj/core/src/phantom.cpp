#include "hmc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "hmc/binary_io.hpp"
#include "hmc/error.hpp"
#include "json.hpp"

namespace hmc {
namespace {

using nlohmann::json;

struct Ellipsoid {
  Vec3 center;
  Vec3 semi;
  bool contains(const Vec3& p) const {
    const Vec3 d = (p - center).cwiseQuotient(semi);
    return d.squaredNorm() <= 1.0;
  }
};

struct RoiSpec {
  int label;
  const char* name;
  Ellipsoid shape;
  double activity;
  bool jitter;
};

constexpr int kScalp = 1;
constexpr int kGrey = 2;
constexpr int kWhite = 3;

}  // namespace

double Phantom::total_activity() const {
  std::map<int, std::size_t> counts;
  for (int l : labels.data) ++counts[l];
  double total = 0;
  for (const auto& [label, n] : counts) {
    auto it = activity.find(label);
    if (it != activity.end()) total += it->second * static_cast<double>(n) * labels.grid.voxel_volume();
  }
  return total;
}

std::vector<int> Phantom::roi_labels() const {
  std::set<int> present;
  for (int l : labels.data)
    if (l > 0) present.insert(l);
  return {present.begin(), present.end()};
}

std::size_t Phantom::voxel_count(int label) const {
  return static_cast<std::size_t>(std::count(labels.data.begin(), labels.data.end(), label));
}

double Phantom::voxel_activity(std::size_t index) const {
  auto it = activity.find(labels.data[index]);
  return it == activity.end() ? 0.0 : it->second;
}

GridSpec default_phantom_grid() { return GridSpec::centered({128, 128, 96}, {2.0, 2.0, 2.0}); }

Phantom build_phantom(std::string_view preset, std::uint64_t seed, const GridSpec& grid) {
  if (preset != "ellipsoid-brain") fail(Errc::UnknownPreset, "unknown phantom preset '" + std::string(preset) + "'");
  if (!grid.valid()) fail(Errc::ConfigError, "invalid phantom grid");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto scale_jitter = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double head_scale = scale_jitter(0.96, 1.04);
  const Ellipsoid head{{0, 0, 0}, Vec3(90, 70, 80) * head_scale};
  const Ellipsoid brain{{0, 0, 2}, Vec3(80, 61, 69) * head_scale};

  // Interior ROIs, later entries take precedence.
  std::vector<RoiSpec> rois = {
      {kWhite, "white_matter", {{0, 0, 8}, {64, 47, 52}}, 1.0, false},
      {4, "caudate_left", {{-12, 14, 12}, {5, 9, 8}}, 4.5, true},
      {5, "caudate_right", {{12, 14, 12}, {5, 9, 8}}, 4.5, true},
      {6, "putamen_left", {{-25, 4, 2}, {6, 12, 9}}, 4.8, true},
      {7, "putamen_right", {{25, 4, 2}, {6, 12, 9}}, 4.8, true},
      {8, "thalamus", {{0, -10, 6}, {11, 9, 7}}, 4.0, true},
      {9, "cerebellum", {{0, -34, -42}, {38, 20, 16}}, 3.5, true},
      {10, "occipital_hot", {{0, -48, 14}, {14, 8, 10}}, 5.5, true},
  };
  for (auto& r : rois) {
    r.shape.center *= head_scale;
    r.shape.semi *= head_scale;
    if (!r.jitter) continue;
    for (int a = 0; a < 3; ++a) r.shape.center[a] += std::clamp(1.5 * normal(rng), -3.0, 3.0);
    r.shape.semi *= scale_jitter(0.93, 1.07);
    r.activity *= scale_jitter(0.9, 1.1);
  }

  Phantom ph;
  ph.labels = LabelVolume(grid, 0);
  ph.activity[0] = 0.0;
  ph.roi_names[0] = "background";
  ph.activity[kScalp] = 0.5;
  ph.roi_names[kScalp] = "scalp";
  ph.activity[kGrey] = 4.0;
  ph.roi_names[kGrey] = "grey_matter";
  for (const auto& r : rois) {
    ph.activity[r.label] = r.activity;
    ph.roi_names[r.label] = r.name;
  }

  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        const Vec3 p = grid.center(i, j, k);
        if (!head.contains(p)) continue;
        int label = kScalp;
        if (brain.contains(p)) {
          label = kGrey;
          for (const auto& r : rois)
            if (r.shape.contains(p)) label = r.label;
        }
        ph.labels.at(i, j, k) = label;
      }

  // drop table entries for ROIs that fell entirely outside a small grid
  const auto present = ph.roi_labels();
  for (auto it = ph.activity.begin(); it != ph.activity.end();) {
    if (it->first != 0 && !std::binary_search(present.begin(), present.end(), it->first)) {
      ph.roi_names.erase(it->first);
      it = ph.activity.erase(it);
    } else {
      ++it;
    }
  }
  return ph;
}

void validate_phantom(const Phantom& ph) {
  if (!ph.labels.grid.valid() || ph.labels.data.size() != ph.labels.grid.voxel_count()) {
    fail(Errc::FormatError, "phantom label grid is malformed");
  }
  const auto present = ph.roi_labels();
  for (const auto& [label, a] : ph.activity) {
    if (!(a >= 0) || !std::isfinite(a)) fail(Errc::FormatError, "negative or non-finite activity");
    if (label == 0) {
      if (a != 0) fail(Errc::FormatError, "background label must have zero activity");
      continue;
    }
    if (!std::binary_search(present.begin(), present.end(), label)) {
      fail(Errc::FormatError, "activity declared for label " + std::to_string(label) + " absent from grid");
    }
  }
}

void save_phantom(const std::filesystem::path& stem_in, const Phantom& ph, const std::string& config_hash) {
  const auto stem = io::strip_known_extension(stem_in);
  {
    std::ofstream os(stem.string() + ".i16", std::ios::binary);
    if (!os) fail(Errc::IoError, "cannot write " + stem.string() + ".i16");
    std::vector<char> buf(ph.labels.data.size() * 2);
    for (std::size_t i = 0; i < ph.labels.data.size(); ++i) {
      const auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(ph.labels.data[i]));
      buf[2 * i] = static_cast<char>(v & 0xFF);
      buf[2 * i + 1] = static_cast<char>(v >> 8);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  json j;
  const auto& g = ph.labels.grid;
  j["kind"] = "phantom";
  j["dims"] = g.dims;
  j["spacing"] = g.spacing;
  j["origin"] = g.origin;
  j["dtype"] = "int16le";
  json act = json::object(), names = json::object();
  for (const auto& [l, a] : ph.activity) act[std::to_string(l)] = a;
  for (const auto& [l, n] : ph.roi_names) names[std::to_string(l)] = n;
  j["activity"] = act;
  j["roi_names"] = names;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  io::write_text_file(stem.string() + ".json", j.dump(2) + "\n");
}

Phantom load_phantom(const std::filesystem::path& stem_in) {
  const auto stem = io::strip_known_extension(stem_in);
  json j;
  try {
    j = json::parse(io::read_text_file(stem.string() + ".json"));
  } catch (const json::exception& e) {
    fail(Errc::FormatError, std::string("phantom sidecar: ") + e.what());
  }
  Phantom ph;
  try {
    ph.labels.grid.dims = j.at("dims").get<std::array<int, 3>>();
    ph.labels.grid.spacing = j.at("spacing").get<std::array<double, 3>>();
    ph.labels.grid.origin = j.at("origin").get<std::array<double, 3>>();
    for (const auto& [k, v] : j.at("activity").items()) ph.activity[std::stoi(k)] = v.get<double>();
    for (const auto& [k, v] : j.at("roi_names").items()) ph.roi_names[std::stoi(k)] = v.get<std::string>();
  } catch (const json::exception& e) {
    fail(Errc::FormatError, std::string("phantom sidecar: ") + e.what());
  }
  const auto raw = io::read_text_file(stem.string() + ".i16");
  const auto n = ph.labels.grid.voxel_count();
  if (raw.size() != 2 * n) fail(Errc::FormatError, "phantom label payload has wrong size");
  ph.labels.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lo = static_cast<unsigned char>(raw[2 * i]);
    const auto hi = static_cast<unsigned char>(raw[2 * i + 1]);
    ph.labels.data[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
  }
  validate_phantom(ph);
  return ph;
}

MotionTrajectory generate_trajectory(const TrajectoryConfig& cfg) {
  if (!(cfg.duration >= 1) || cfg.n_jumps < 0 || cfg.jump_translation_sd < 0 || cfg.jump_rotation_sd < 0 ||
      cfg.drift_rate < 0) {
    fail(Errc::ConfigError, "invalid trajectory config");
  }
  const int seconds = static_cast<int>(std::ceil(cfg.duration));
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // jump times in [1, seconds - 1]
  std::vector<std::pair<int, std::array<double, 6>>> jumps;
  if (seconds > 1) {
    std::uniform_int_distribution<int> when(1, seconds - 1);
    for (int j = 0; j < cfg.n_jumps; ++j) {
      std::array<double, 6> step{};
      const int t = when(rng);
      for (int c = 0; c < 3; ++c) step[c] = cfg.jump_translation_sd * normal(rng);
      for (int c = 3; c < 6; ++c) step[c] = cfg.jump_rotation_sd * normal(rng);
      jumps.emplace_back(t, step);
    }
  }
  std::stable_sort(jumps.begin(), jumps.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  Vec3 drift_dir(normal(rng), normal(rng), normal(rng));
  drift_dir = drift_dir.norm() > 0 ? drift_dir.normalized() : Vec3(1, 0, 0);

  MotionTrajectory traj;
  std::array<double, 6> acc{};
  std::size_t next = 0;
  for (int s = 0; s < seconds; ++s) {
    while (next < jumps.size() && jumps[next].first == s) {
      for (int c = 0; c < 6; ++c) acc[c] += jumps[next].second[c];
      ++next;
    }
    auto p = acc;
    for (int c = 0; c < 3; ++c) p[c] += cfg.drift_rate * s * drift_dir[c];
    traj.push_back({static_cast<double>(s), RigidTransform::from_array(p)});
  }
  return traj;
}

double motion_summary(const MotionTrajectory& traj, double radius) {
  if (traj.empty()) return 0.0;
  // Fibonacci sphere
  constexpr int kPoints = 64;
  std::vector<Vec3> pts;
  pts.reserve(kPoints);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < kPoints; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / kPoints;
    const double r = std::sqrt(1.0 - z * z);
    pts.emplace_back(radius * r * std::cos(golden * i), radius * r * std::sin(golden * i), radius * z);
  }
  const Mat4 m0 = to_matrix(traj[0].pose);
  double sum = 0;
  for (const auto& e : traj.entries()) {
    const Mat4 m = to_matrix(e.pose);
    for (const auto& p : pts) sum += (map_point(m, p) - map_point(m0, p)).norm();
  }
  return sum / (static_cast<double>(traj.size()) * kPoints);
}

Vec3 roi_center_of_mass(const ImageVolume& volume, const LabelVolume& labels, int label) {
  require_same_geometry(volume.grid, labels.grid, "roi_center_of_mass");
  const auto& g = labels.grid;
  double mass = 0;
  Vec3 moment = Vec3::Zero();
  std::size_t count = 0;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const auto idx = g.index(i, j, k);
        if (labels.data[idx] != label) continue;
        ++count;
        const double w = volume.data[idx];
        mass += w;
        moment += w * g.center(i, j, k);
      }
  if (count == 0) fail(Errc::EmptyRoi, "ROI " + std::to_string(label) + " has no voxels");
  if (mass == 0) fail(Errc::ZeroMass, "ROI " + std::to_string(label) + " has zero intensity");
  return moment / mass;
}

LabelVolume resample_labels(const LabelVolume& labels, const GridSpec& target) {
  LabelVolume out(target, 0);
  const auto& src = labels.grid;
  for (int k = 0; k < target.dims[2]; ++k)
    for (int j = 0; j < target.dims[1]; ++j)
      for (int i = 0; i < target.dims[0]; ++i) {
        const Vec3 p = target.center(i, j, k);
        std::array<int, 3> idx{};
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          idx[a] = static_cast<int>(std::floor((p[a] - src.origin[a]) / src.spacing[a]));
          inside = inside && idx[a] >= 0 && idx[a] < src.dims[a];
        }
        if (inside) out.at(i, j, k) = labels.at(idx[0], idx[1], idx[2]);
      }
  return out;
}

}  // namespace hmc
