#include "hmc/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hmc/error.hpp"

namespace hmc {
namespace {

constexpr const char* kComponents[6] = {"tx_mm", "ty_mm", "tz_mm", "rx_deg", "ry_deg", "rz_deg"};

std::uint8_t to_gray(double v, double lo, double hi) {
  if (!(hi > lo)) return 0;
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * t));
}

void draw_line(GrayImage& img, double x0, double y0, double x1, double y1, std::uint8_t value) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (x >= 0 && x < img.width && y >= 0 && y < img.height) img.pixels[static_cast<std::size_t>(y) * img.width + x] = value;
  }
}

}  // namespace

GrayImage orthogonal_slices(const ImageVolume& vol, bool signed_values) {
  const auto& d = vol.grid.dims;
  const int cx = d[0] / 2, cy = d[1] / 2, cz = d[2] / 2;
  double lo = 0, hi = 0;
  if (signed_values) {
    lo = -1;
    hi = 1;
  } else if (!vol.data.empty()) {
    hi = *std::max_element(vol.data.begin(), vol.data.end());
  }
  const int gap = 2;
  GrayImage img;
  img.width = d[0] + gap + d[0] + gap + d[1];
  img.height = std::max(d[1], d[2]);
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  auto put = [&](int x, int y, double v) { img.pixels[static_cast<std::size_t>(y) * img.width + x] = to_gray(v, lo, hi); };
  // transverse (x right, y down), coronal (x right, z up), sagittal (y right, z up)
  for (int j = 0; j < d[1]; ++j)
    for (int i = 0; i < d[0]; ++i) put(i, j, vol.at(i, j, cz));
  for (int k = 0; k < d[2]; ++k)
    for (int i = 0; i < d[0]; ++i) put(d[0] + gap + i, img.height - 1 - k, vol.at(i, cy, k));
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j) put(2 * (d[0] + gap) + j, img.height - 1 - k, vol.at(cx, j, k));
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(Errc::IoError, "cannot write " + path.string());
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

GrayImage plot_series(std::span<const std::vector<double>> series, int width, int height) {
  GrayImage img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<std::size_t>(width) * height, 255);
  double lo = 0, hi = 0;
  std::size_t n = 0;
  for (const auto& s : series) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    n = std::max(n, s.size());
  }
  if (!(hi > lo)) hi = lo + 1;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto ypix = [&](double v) { return (height - 1) * (1.0 - (v - lo) / (hi - lo)); };
  draw_line(img, 0, ypix(0), width - 1, ypix(0), 200);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const auto shade = static_cast<std::uint8_t>(160 * k / std::max<std::size_t>(1, series.size()));
    const double dx = n > 1 ? static_cast<double>(width - 1) / static_cast<double>(n - 1) : 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) draw_line(img, dx * (i - 1), ypix(s[i - 1]), dx * i, ypix(s[i]), shade);
  }
  return img;
}

void write_overlay_csv(const std::filesystem::path& path, std::span<const NamedTrajectory> trajs) {
  if (trajs.empty()) return;
  const std::size_t n = trajs[0].second.size();
  for (const auto& [name, t] : trajs)
    if (t.size() != n) fail(Errc::TimebaseMismatch, "trajectory " + name + " differs in length");
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Errc::IoError, "cannot write " + path.string());
  os << "time_s";
  for (const auto& [name, t] : trajs)
    for (const char* c : kComponents) os << "," << name << "_" << c;
  os << "\n";
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", trajs[0].second[i].time);
    os << buf;
    for (const auto& [name, t] : trajs)
      for (double v : t[i].pose.as_array()) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        os << buf;
      }
    os << "\n";
  }
}

void write_overlay_plots(const std::filesystem::path& dir, std::span<const NamedTrajectory> trajs) {
  std::filesystem::create_directories(dir);
  for (int c = 0; c < 6; ++c) {
    std::vector<std::vector<double>> series;
    for (const auto& [name, t] : trajs) {
      std::vector<double> s;
      for (const auto& e : t.entries()) s.push_back(e.pose.as_array()[c]);
      series.push_back(std::move(s));
    }
    write_pgm(dir / (std::string("trajectory_") + kComponents[c] + ".pgm"), plot_series(series));
  }
}

}  // namespace hmc
