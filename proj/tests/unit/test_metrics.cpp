#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hmc/metrics.hpp"
#include "test_util.hpp"

using namespace hmc;

namespace {

MotionTrajectory random_traj(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 2);
  MotionTrajectory t;
  for (int i = 0; i < n; ++i) t.push_back({static_cast<double>(i), {g(rng), g(rng), g(rng), g(rng), g(rng), g(rng)}});
  return t;
}

ImageVolume random_image(const GridSpec& g, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ImageVolume v(g, 0.0);
  for (auto& x : v.data) x = u(rng);
  return v;
}

// two box ROIs and one empty label
LabelVolume box_labels(const GridSpec& g) {
  LabelVolume l(g, 0);
  for (int k = 2; k < 8; ++k)
    for (int j = 2; j < 8; ++j)
      for (int i = 2; i < 8; ++i) l.at(i, j, k) = 1;
  for (int k = 10; k < 14; ++k)
    for (int j = 9; j < 15; ++j)
      for (int i = 8; i < 13; ++i) l.at(i, j, k) = 2;
  return l;
}

}  // namespace

TEST_CASE("RMSE components") {
  const MotionTrajectory gold = random_traj(50, 1);
  const RmseResult zero = rmse_components(gold, gold);
  CHECK(zero.trans_rmse == 0);
  CHECK(zero.rot_rmse == 0);

  MotionTrajectory shifted;
  for (const auto& e : gold.entries()) {
    RigidTransform p = e.pose;
    p.tx += 2;
    shifted.push_back({e.time, p});
  }
  const RmseResult r = rmse_components(shifted, gold);
  CHECK(r.components[0] == doctest::Approx(2.0));
  for (int c = 1; c < 6; ++c) CHECK(r.components[c] == doctest::Approx(0.0));
  CHECK(r.trans_rmse == doctest::Approx(2.0 / 3));
  CHECK(r.rot_rmse == 0);

  // direct per-component oracle on random data
  const MotionTrajectory other = random_traj(50, 2);
  const RmseResult q = rmse_components(other, gold);
  for (int c = 0; c < 6; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      const double d = other[i].pose.as_array()[c] - gold[i].pose.as_array()[c];
      s += d * d;
    }
    CHECK(q.components[c] == doctest::Approx(std::sqrt(s / 50)));
  }
  CHECK(q.trans_rmse > 0);

  CHECK_ERRC(rmse_components(random_traj(49, 1), gold), Errc::TimebaseMismatch);
  MotionTrajectory late;
  for (const auto& e : gold.entries()) late.push_back({e.time + 0.5, e.pose});
  CHECK_ERRC(rmse_components(late, gold), Errc::TimebaseMismatch);
  CHECK_ERRC(rmse_components(MotionTrajectory{}, MotionTrajectory{}), Errc::EmptySeries);
}

TEST_CASE("MDE") {
  const GridSpec g = GridSpec::centered({16, 16, 16}, {2.5, 2, 2});
  const LabelVolume labels = box_labels(g);
  // activity sits at least one voxel inside each ROI, so a one-voxel shift
  // moves every ROI's COM by exactly one spacing
  ImageVolume gold = random_image(g, 3, 0.5, 1.5);
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 16; ++i) {
        const bool inner = (i >= 3 && i < 6 && j >= 3 && j < 7 && k >= 3 && k < 7) ||
                           (i >= 9 && i < 11 && j >= 10 && j < 14 && k >= 11 && k < 13);
        if (!inner) gold.at(i, j, k) = 0;
      }
  CHECK(mde(gold, gold, labels).mde == 0);

  ImageVolume pred(g, 0.0);
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 1; i < 16; ++i) pred.at(i, j, k) = gold.at(i - 1, j, k);
  const MdeResult m = mde(pred, gold, labels);
  CHECK(m.per_roi.size() == 2);
  CHECK(m.mde == doctest::Approx(2.5).epsilon(0.1));

  // order of ROI enumeration does not matter: relabel 1 <-> 2
  LabelVolume swapped = labels;
  for (auto& l : swapped.data) l = l == 1 ? 2 : l == 2 ? 1 : l;
  CHECK(mde(pred, gold, swapped).mde == doctest::Approx(m.mde).epsilon(1e-12));

  // a ROI with no mass in the prediction is skipped
  ImageVolume holes = gold;
  for (std::size_t i = 0; i < holes.data.size(); ++i)
    if (labels.data[i] == 2) holes.data[i] = 0;
  const MdeResult s = mde(holes, gold, labels);
  CHECK(s.skipped == std::vector<int>{2});
  CHECK(s.per_roi.size() == 1);

  CHECK_ERRC(mde(gold, gold, LabelVolume(g, 0)), Errc::EmptyRoi);
  CHECK_ERRC(mde(gold, ImageVolume(GridSpec::centered({16, 16, 15}, {2.5, 2, 2}), 1.0), labels),
             Errc::GeometryMismatch);
}

TEST_CASE("ROI absolute difference ratio") {
  const GridSpec g = GridSpec::centered({16, 16, 16}, {2, 2, 2});
  const LabelVolume labels = box_labels(g);
  const ImageVolume gold = random_image(g, 4, 0.5, 1.5);
  for (const auto& [roi, v] : roi_adr(gold, gold, labels)) CHECK(v == 0);
  ImageVolume scaled = gold;
  for (auto& v : scaled.data) v *= 1.05;
  const auto r = roi_adr(scaled, gold, labels);
  CHECK(r.size() == 2);
  for (const auto& [roi, v] : r) CHECK(v == doctest::Approx(5.0));
  ImageVolume zero = gold;
  for (std::size_t i = 0; i < zero.data.size(); ++i)
    if (labels.data[i] == 1) zero.data[i] = 0;
  CHECK_ERRC(roi_adr(gold, zero, labels), Errc::ZeroGoldMean);
}

TEST_CASE("NMSE") {
  const std::vector<double> b{1, 2, 3, 4};
  CHECK(nmse(b, b) == 0);
  CHECK(nmse(std::vector<double>(4, 0.0), b) == 1.0);
  CHECK(nmse(std::vector<double>{2, 2, 3, 4}, b) == doctest::Approx(1.0 / 30));
  CHECK_ERRC(nmse(std::vector<double>{1, 2}, b), Errc::ShapeMismatch);
  CHECK_ERRC(nmse(b, std::vector<double>(4, 0.0)), Errc::ZeroMass);
}

TEST_CASE("SSIM") {
  const GridSpec g = GridSpec::centered({12, 11, 10}, {1, 1, 1});
  const ImageVolume a = random_image(g, 5), b = random_image(g, 6);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  const double ab = ssim(a, b), ba = ssim(b, a);
  CHECK(std::abs(ab - ba) < 1e-12);
  CHECK(ab >= -1);
  CHECK(ab <= 1);
  CHECK(ab < 0.5);

  ImageVolume neg = a;
  for (auto& v : neg.data) v = 1 - v;
  const double anti = ssim(a, neg);
  CHECK(anti >= -1);
  CHECK(anti < 0);

  // constant offset: contrast-structure term is 1, so SSIM is the mean
  // luminance term over windows, evaluated here by brute force
  const double c = 0.3;
  ImageVolume off = a;
  for (auto& v : off.data) v += c;
  const double lo = *std::min_element(a.data.begin(), a.data.end());
  const double hi = *std::max_element(off.data.begin(), off.data.end());
  const double C1 = std::pow(0.01 * (hi - lo), 2);
  double acc = 0;
  int windows = 0;
  for (int k = 0; k + 7 <= 10; ++k)
    for (int j = 0; j + 7 <= 11; ++j)
      for (int i = 0; i + 7 <= 12; ++i) {
        double m = 0;
        for (int z = 0; z < 7; ++z)
          for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 7; ++x) m += a.at(i + x, j + y, k + z);
        m /= 343;
        acc += (2 * m * (m + c) + C1) / (m * m + (m + c) * (m + c) + C1);
        ++windows;
      }
  CHECK(ssim(off, a) == doctest::Approx(acc / windows).epsilon(1e-9));

  // small volumes fall back to the whole extent
  const ImageVolume s1 = random_image(GridSpec::centered({4, 4, 4}, {1, 1, 1}), 7);
  CHECK(ssim(s1, s1) == doctest::Approx(1.0));
}

TEST_CASE("mean and sample SD") {
  const std::vector<double> v{1, 2, 3, 4};
  const MeanSd m = mean_sd(v);
  CHECK(m.mean == 2.5);
  CHECK(m.sd == doctest::Approx(std::sqrt(5.0 / 3)));
  CHECK(mean_sd(std::vector<double>{7}).sd == 0);
}
