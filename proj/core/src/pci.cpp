#include "hmc/pci.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "hmc/binary_io.hpp"
#include "hmc/error.hpp"
#include "hmc/parallel.hpp"
#include "hmc/siddon.hpp"
#include "json.hpp"

namespace hmc {
namespace {

using nlohmann::json;

// Splits [0, n) into one contiguous chunk per worker, sums private grids in
// chunk order.
template <typename Body>
void reduce_into(ImageVolume& accum, std::size_t n, Body&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, num_threads()));
  if (workers == 1 || n < 4096) {
    body(0, n, accum);
    return;
  }
  std::vector<ImageVolume> partial(workers, ImageVolume(accum.grid, 0.0));
  parallel_for(workers, [&](std::size_t w) {
    const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
    body(lo, hi, partial[w]);
  });
  for (const auto& p : partial)
    for (std::size_t i = 0; i < accum.data.size(); ++i) accum.data[i] += p.data[i];
}

void resample_axis(const std::vector<double>& src, std::array<int, 3> sdims, int axis, int n_dst,
                   std::vector<double>& dst, std::array<int, 3>& ddims) {
  ddims = sdims;
  ddims[axis] = n_dst;
  const int n_src = sdims[axis];
  dst.assign(static_cast<std::size_t>(ddims[0]) * ddims[1] * ddims[2], 0.0);
  // source voxel i covers [i, i+1) * n_dst; output o covers [o, o+1) * n_src
  // (integer units, so overlaps are exact)
  struct Tap {
    int o, i;
    double w;
  };
  std::vector<Tap> taps;
  for (int o = 0; o < n_dst; ++o) {
    const long lo = static_cast<long>(o) * n_src, hi = lo + n_src;
    for (int i = static_cast<int>(lo / n_dst); i < n_src && static_cast<long>(i) * n_dst < hi; ++i) {
      const long s_lo = static_cast<long>(i) * n_dst, s_hi = s_lo + n_dst;
      const long ov = std::min(hi, s_hi) - std::max(lo, s_lo);
      if (ov > 0) taps.push_back({o, i, static_cast<double>(ov) / static_cast<double>(n_src)});
    }
  }
  const std::size_t sstr[3] = {1, static_cast<std::size_t>(sdims[0]),
                               static_cast<std::size_t>(sdims[0]) * sdims[1]};
  const std::size_t dstr[3] = {1, static_cast<std::size_t>(ddims[0]),
                               static_cast<std::size_t>(ddims[0]) * ddims[1]};
  const int u = (axis + 1) % 3, v = (axis + 2) % 3;
  for (int b = 0; b < ddims[v]; ++b)
    for (int a = 0; a < ddims[u]; ++a) {
      const std::size_t sbase = a * sstr[u] + b * sstr[v];
      const std::size_t dbase = a * dstr[u] + b * dstr[v];
      for (const auto& t : taps) dst[dbase + t.o * dstr[axis]] += t.w * src[sbase + t.i * sstr[axis]];
    }
}

json grid_json(const GridSpec& g) { return {{"dims", g.dims}, {"spacing", g.spacing}, {"origin", g.origin}}; }

GridSpec grid_from_json(const json& j) {
  GridSpec g;
  g.dims = j.at("dims").get<std::array<int, 3>>();
  g.spacing = j.at("spacing").get<std::array<double, 3>>();
  g.origin = j.at("origin").get<std::array<double, 3>>();
  if (!g.valid()) fail(Errc::FormatError, "invalid grid in sidecar");
  return g;
}

void write_raw(const std::filesystem::path& path, const std::vector<double>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(Errc::IoError, "cannot write " + path.string());
  io::write_f32_array(os, std::span<const double>(data));
}

std::vector<double> read_raw(const std::filesystem::path& path, std::size_t n) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Errc::IoError, "cannot open " + path.string());
  const auto f = io::read_f32_array(is, n);
  if (is.peek() != std::char_traits<char>::eof()) fail(Errc::FormatError, "trailing bytes in " + path.string());
  return {f.begin(), f.end()};
}

}  // namespace

std::string to_string(Normalization n) {
  return n == Normalization::Raw ? "raw" : "sensitivity-normalized";
}

std::string to_string(ImageKind k) {
  switch (k) {
    case ImageKind::Pci: return "pci";
    case ImageKind::Sensitivity: return "sensitivity";
    case ImageKind::Reconstruction: return "reconstruction";
    case ImageKind::ErrorMap: return "error_map";
  }
  return "pci";
}

void backproject(std::span<const ListmodeEvent> events, ImageVolume& accum) {
  reduce_into(accum, events.size(), [&](std::size_t lo, std::size_t hi, ImageVolume& out) {
    double* img = out.data.data();
    for (std::size_t e = lo; e < hi; ++e) {
      trace_segment(out.grid, events[e].p1, events[e].p2, [img](std::size_t i, double w) { img[i] += w; });
    }
  });
}

void backproject(std::span<const ListmodeEvent> events, std::span<const double> weights, ImageVolume& accum) {
  if (weights.size() != events.size()) fail(Errc::ShapeMismatch, "one weight per event required");
  reduce_into(accum, events.size(), [&](std::size_t lo, std::size_t hi, ImageVolume& out) {
    double* img = out.data.data();
    for (std::size_t e = lo; e < hi; ++e) {
      const double y = weights[e];
      if (y == 0) continue;
      trace_segment(out.grid, events[e].p1, events[e].p2, [img, y](std::size_t i, double w) { img[i] += y * w; });
    }
  });
}

std::vector<double> forward_project(std::span<const ListmodeEvent> events, const ImageVolume& x) {
  std::vector<double> out(events.size(), 0.0);
  const double* img = x.data.data();
  parallel_for(std::max(1, num_threads()), [&](std::size_t w) {
    const auto workers = static_cast<std::size_t>(std::max(1, num_threads()));
    const std::size_t lo = events.size() * w / workers, hi = events.size() * (w + 1) / workers;
    for (std::size_t e = lo; e < hi; ++e) {
      double s = 0;
      trace_segment(x.grid, events[e].p1, events[e].p2, [&s, img](std::size_t i, double len) { s += img[i] * len; });
      out[e] = s;
    }
  });
  return out;
}

CloudImage backproject_window(const ListmodeFile& events, double window_start, double window_end,
                              const GridSpec& grid) {
  if (!(window_start < window_end)) fail(Errc::ConfigError, "window start must precede window end");
  if (!grid.valid()) fail(Errc::ConfigError, "invalid grid");
  CloudImage img;
  img.image = ImageVolume(grid, 0.0);
  img.t_start = window_start;
  img.t_end = window_end;
  img.normalization = Normalization::Raw;
  const auto win = events.window(window_start, window_end);
  img.event_count = win.size();
  backproject(win, img.image);
  return img;
}

GridSpec default_pci_source_grid() { return GridSpec::centered({64, 64, 64}, {4.88, 4.88, 3.98}); }

SensitivityMap estimate_sensitivity(const ScannerGeometry& geom, const GridSpec& grid, std::uint64_t n_samples,
                                    std::uint64_t seed) {
  if (!geom.valid() || !grid.valid()) fail(Errc::ConfigError, "invalid geometry for sensitivity");
  SensitivityMap sens;
  sens.image = ImageVolume(grid, 0.0);
  // Fixed-size sample blocks with their own seeds keep the result independent
  // of the thread count.
  constexpr std::uint64_t kBlock = 1 << 16;
  const std::uint64_t n_blocks = (n_samples + kBlock - 1) / kBlock;
  const double R = geom.radius, L = geom.axial_half_length;
  auto run_block = [&](std::uint64_t b, ImageVolume& out) {
    std::mt19937_64 rng(derive_seed(seed, b));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::uint64_t count = std::min(kBlock, n_samples - b * kBlock);
    double* img = out.data.data();
    for (std::uint64_t s = 0; s < count; ++s) {
      const double f1 = 2 * std::numbers::pi * unit(rng), z1 = L * (2 * unit(rng) - 1);
      const double f2 = 2 * std::numbers::pi * unit(rng), z2 = L * (2 * unit(rng) - 1);
      const Vec3 n1(std::cos(f1), std::sin(f1), 0), n2(std::cos(f2), std::sin(f2), 0);
      const Vec3 p1 = R * n1 + Vec3(0, 0, z1), p2 = R * n2 + Vec3(0, 0, z2);
      const Vec3 d = p2 - p1;
      const double d2 = d.squaredNorm();
      if (d2 < 1e-12) continue;
      const double dn = std::sqrt(d2);
      const double w = std::abs(n1.dot(d)) * std::abs(n2.dot(d)) / (dn * dn * d2);
      trace_segment(grid, p1, p2, [img, w](std::size_t i, double len) { img[i] += w * len; });
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, num_threads()));
  if (workers == 1) {
    for (std::uint64_t b = 0; b < n_blocks; ++b) run_block(b, sens.image);
  } else {
    // one private grid per block group, reduced in block order
    std::vector<ImageVolume> partial(workers, ImageVolume(grid, 0.0));
    parallel_for(workers, [&](std::size_t w) {
      for (std::uint64_t b = w; b < n_blocks; b += workers) run_block(b, partial[w]);
    });
    for (const auto& p : partial)
      for (std::size_t i = 0; i < p.data.size(); ++i) sens.image.data[i] += p.data[i];
  }

  sens.fov_mask.assign(grid.voxel_count(), 0);
  double sum = 0;
  std::size_t n_in = 0;
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        const Vec3 c = grid.center(i, j, k);
        if (std::hypot(c.x(), c.y()) < R && std::abs(c.z()) < L) {
          const auto idx = grid.index(i, j, k);
          sens.fov_mask[idx] = 1;
          sum += sens.image.data[idx];
          ++n_in;
        }
      }
  if (n_in > 0 && sum > 0) {
    const double scale = static_cast<double>(n_in) / sum;
    for (auto& v : sens.image.data) v *= scale;
  }
  return sens;
}

CloudImage normalize(const CloudImage& img, const SensitivityMap& sens, double eps) {
  require_same_geometry(img.grid(), sens.image.grid, "normalize");
  CloudImage out = img;
  for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] = img.data()[i] / std::max(sens.image.data[i], eps);
  out.normalization = Normalization::SensitivityNormalized;
  return out;
}

GridSpec downsampled_grid(const GridSpec& src, std::array<int, 3> target_dims) {
  GridSpec g = src;
  for (int a = 0; a < 3; ++a) {
    if (target_dims[a] < 1 || target_dims[a] > src.dims[a]) {
      fail(Errc::InvalidTarget, "target dims must be in [1, source dims]");
    }
    g.dims[a] = target_dims[a];
    g.spacing[a] = src.spacing[a] * src.dims[a] / target_dims[a];
  }
  return g;
}

CloudImage downsample_area(const CloudImage& img, std::array<int, 3> target_dims) {
  const GridSpec g = downsampled_grid(img.grid(), target_dims);
  std::vector<double> a = img.data(), b;
  std::array<int, 3> dims = img.grid().dims, next{};
  for (int axis = 0; axis < 3; ++axis) {
    if (dims[axis] == target_dims[axis]) continue;
    resample_axis(a, dims, axis, target_dims[axis], b, next);
    a.swap(b);
    dims = next;
  }
  CloudImage out = img;
  out.image.grid = g;
  out.image.data = std::move(a);
  return out;
}

CloudImage make_pci(std::span<const ListmodeEvent> events, double window_start, double window_end,
                    const SensitivityMap& sens, std::array<int, 3> target_dims) {
  CloudImage raw;
  raw.image = ImageVolume(sens.image.grid, 0.0);
  raw.t_start = window_start;
  raw.t_end = window_end;
  raw.event_count = events.size();
  backproject(events, raw.image);
  return downsample_area(normalize(raw, sens), target_dims);
}

std::vector<CloudImage> make_pci_series(const ListmodeFile& events, const SensitivityMap& sens, double t0,
                                        double t1, std::array<int, 3> target_dims) {
  if (!(t0 < t1)) fail(Errc::ConfigError, "empty PCI time range");
  const auto n = static_cast<std::size_t>(std::floor(t1 - t0 + 1e-9));
  std::vector<CloudImage> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double a = t0 + static_cast<double>(s), b = a + 1.0;
    out.push_back(make_pci(events.window(a, b), a, b, sens, target_dims));
  }
  return out;
}

void save_cloud_image(const std::filesystem::path& stem_in, const CloudImage& img) {
  const auto stem = io::strip_known_extension(stem_in);
  write_raw(stem.string() + ".f32", img.data());
  json j = grid_json(img.grid());
  j["dtype"] = "float32le";
  j["kind"] = to_string(img.kind);
  j["window"] = {img.t_start, img.t_end};
  j["normalization"] = to_string(img.normalization);
  j["event_count"] = img.event_count;
  if (!img.config_hash.empty()) j["config_hash"] = img.config_hash;
  io::write_text_file(stem.string() + ".json", j.dump(2) + "\n");
}

CloudImage load_cloud_image(const std::filesystem::path& stem_in) {
  const auto stem = io::strip_known_extension(stem_in);
  CloudImage img;
  try {
    const auto j = json::parse(io::read_text_file(stem.string() + ".json"));
    img.image.grid = grid_from_json(j);
    const auto w = j.at("window");
    img.t_start = w.at(0).get<double>();
    img.t_end = w.at(1).get<double>();
    img.normalization = j.value("normalization", std::string("raw")) == "raw" ? Normalization::Raw
                                                                             : Normalization::SensitivityNormalized;
    const auto kind = j.value("kind", std::string("pci"));
    img.kind = kind == "sensitivity"      ? ImageKind::Sensitivity
               : kind == "reconstruction" ? ImageKind::Reconstruction
               : kind == "error_map"      ? ImageKind::ErrorMap
                                          : ImageKind::Pci;
    img.event_count = j.value("event_count", std::uint64_t{0});
    img.config_hash = j.value("config_hash", std::string{});
  } catch (const json::exception& e) {
    fail(Errc::FormatError, std::string("image sidecar ") + stem.string() + ".json: " + e.what());
  }
  img.image.data = read_raw(stem.string() + ".f32", img.image.grid.voxel_count());
  return img;
}

void save_sensitivity(const std::filesystem::path& stem_in, const SensitivityMap& sens, const std::string& config_hash) {
  const auto stem = io::strip_known_extension(stem_in);
  CloudImage img;
  img.image = sens.image;
  img.kind = ImageKind::Sensitivity;
  img.config_hash = config_hash;
  save_cloud_image(stem, img);
  const std::string mask(sens.fov_mask.begin(), sens.fov_mask.end());
  io::write_text_file(stem.string() + ".mask", mask);
}

SensitivityMap load_sensitivity(const std::filesystem::path& stem_in) {
  const auto stem = io::strip_known_extension(stem_in);
  auto img = load_cloud_image(stem);
  SensitivityMap sens;
  sens.image = std::move(img.image);
  const std::string mask = io::read_text_file(stem.string() + ".mask");
  if (mask.size() != sens.image.data.size()) fail(Errc::FormatError, "sensitivity mask size mismatch");
  sens.fov_mask.assign(mask.begin(), mask.end());
  return sens;
}

void save_pci_series(const std::filesystem::path& dir, const std::vector<CloudImage>& series) {
  std::filesystem::create_directories(dir);
  json index;
  index["count"] = series.size();
  index["files"] = json::array();
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::ostringstream name;
    name << "pci_" << std::setw(5) << std::setfill('0') << i;
    save_cloud_image(dir / name.str(), series[i]);
    index["files"].push_back(name.str());
  }
  if (!series.empty()) {
    index["t0"] = series.front().t_start;
    index["t1"] = series.back().t_end;
    index["config_hash"] = series.front().config_hash;
  }
  io::write_text_file(dir / "series.json", index.dump(2) + "\n");
}

std::vector<CloudImage> load_pci_series(const std::filesystem::path& dir) {
  std::vector<CloudImage> out;
  json index;
  try {
    index = json::parse(io::read_text_file(dir / "series.json"));
  } catch (const json::exception& e) {
    fail(Errc::FormatError, std::string("series index: ") + e.what());
  }
  for (const auto& f : index.at("files")) out.push_back(load_cloud_image(dir / f.get<std::string>()));
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (!(out[i].t_start > out[i - 1].t_start)) fail(Errc::FormatError, "PCI series not time ordered");
  }
  return out;
}

}  // namespace hmc
