#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "hmc/metrics.hpp"
#include "hmc/optim.hpp"
#include "hmc/training.hpp"
#include "test_util.hpp"

using namespace hmc;

namespace {

// 8^3 blob images following a random translation trajectory
SubjectData blob_subject(int n, std::uint64_t seed, double step_mm = 1.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0, step_mm);
  const GridSpec g = GridSpec::centered({8, 8, 8}, {4, 4, 4});
  SubjectData s;
  s.id = "blob" + std::to_string(seed);
  Vec3 c(1, -2, 0.5);
  for (int t = 0; t < n; ++t) {
    if (t > 0 && t % 3 == 0) c += Vec3(nd(rng), nd(rng), nd(rng));
    RigidTransform pose;
    pose.tx = c.x();
    pose.ty = c.y();
    pose.tz = c.z();
    s.trajectory.push_back({static_cast<double>(t), pose});
    CloudImage img;
    img.image = ImageVolume(g, 0.0);
    img.t_start = t;
    img.t_end = t + 1;
    for (int k = 0; k < 8; ++k)
      for (int j = 0; j < 8; ++j)
        for (int i = 0; i < 8; ++i) img.image.at(i, j, k) = std::exp(-(g.center(i, j, k) - c).squaredNorm() / 50.0);
    s.pcis.push_back(std::move(img));
  }
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.subsample_per_subject = 12;
  c.total_timepoints = 24;
  c.batch_size = 4;
  c.epochs = 3;
  c.lr0 = 1e-3;
  c.seed = 3;
  return c;
}

nn::ModelConfig small_model() {
  auto m = nn::ModelConfig::shrunken();
  m.seed = 5;
  return m;
}

bool same_weights(const nn::MotionNet& a, const nn::MotionNet& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    if (a.parameters()[i].tensor.value() != b.parameters()[i].tensor.value()) return false;
  return true;
}

}  // namespace

TEST_CASE("pair sampler") {
  std::vector<SubjectData> subs{blob_subject(30, 1), blob_subject(30, 2)};
  TrainConfig cfg = small_config();
  std::mt19937_64 rng(9);
  const PairSampler sampler(subs, cfg, rng);
  REQUIRE(sampler.subsets().size() == 2);
  for (const auto& sub : sampler.subsets()) {
    CHECK(sub.size() == 12);
    CHECK(std::set<std::size_t>(sub.begin(), sub.end()).size() == 12);
    for (auto i : sub) CHECK(i < 24);  // only the first total_timepoints seconds
  }

  const auto first = sampler.subsets();
  for (int ep = 0; ep < 5; ++ep) {
    const auto pairs = sampler.epoch(rng);
    CHECK(pairs.size() == 24);
    CHECK(sampler.subsets() == first);
    for (const auto& p : pairs) {
      CHECK(p.t_mov > p.t_ref);
      const auto& sub = sampler.subsets()[p.subject];
      CHECK(std::find(sub.begin(), sub.end(), p.ref_index) != sub.end());
      CHECK(std::find(sub.begin(), sub.end(), p.mov_index) != sub.end());
      const auto expected = relative_motion(subs[p.subject].trajectory, p.t_ref, p.t_mov);
      CHECK(p.theta.as_array() == expected.as_array());
      CHECK(p.ref == &subs[p.subject].pcis[p.ref_index]);
    }
  }

  // a constant global pose composed onto the trajectory leaves labels unchanged
  std::vector<SubjectData> shifted = subs;
  const RigidTransform g{4, -7, 2, 10, -5, 3};
  for (auto& s : shifted) {
    MotionTrajectory t;
    for (const auto& e : s.trajectory.entries()) t.push_back({e.time, compose(g, e.pose)});
    s.trajectory = t;
  }
  std::mt19937_64 r1(4), r2(4);
  const PairSampler a(subs, cfg, r1), b(shifted, cfg, r2);
  const auto pa = a.epoch(r1), pb = b.epoch(r2);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto x = pa[i].theta.as_array(), y = pb[i].theta.as_array();
    for (int k = 0; k < 6; ++k) CHECK(std::abs(x[k] - y[k]) < 1e-9);
  }

  cfg.subsample_per_subject = 40;
  cfg.total_timepoints = 40;
  CHECK_ERRC(PairSampler(subs, cfg, rng), Errc::InsufficientTimepoints);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.subsample_per_subject = 2000;
  CHECK_ERRC(c.validate(), Errc::ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_ERRC(c.validate(), Errc::ConfigError);
  c = {};
  c.lr0 = -1;
  CHECK_ERRC(c.validate(), Errc::ConfigError);
  // the default schedule at step 400
  c = {};
  CHECK(nn::exp_decay_lr(c.lr0, c.gamma, c.lr_step, 400) == doctest::Approx(5e-4 * 0.98 * 0.98).epsilon(1e-12));
}

TEST_CASE("motion loss") {
  const auto pred = nn::Tensor::from({2, 6}, {1, 2, 3, 4, 5, 6, 0, 0, 0, 0, 0, 0});
  const auto zero = nn::Tensor::from({2, 6}, std::vector<double>(12, 0.0));
  // mean over batch of the per-sample mean of 6 squared errors
  CHECK(motion_loss(pred, zero, 1.0).item() == doctest::Approx((1 + 4 + 9 + 16 + 25 + 36) / 12.0));
  CHECK(motion_loss(pred, zero, 2.0).item() == doctest::Approx((1 + 4 + 9 + 2 * (16 + 25 + 36)) / 12.0));
  CHECK(motion_loss(pred, pred, 1.0).item() == 0.0);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int r = 0; r < 20; ++r) {
    std::vector<double> a(12), b(12);
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = n(rng);
    CHECK(motion_loss(nn::Tensor::from({2, 6}, a), nn::Tensor::from({2, 6}, b), 1.0).item() > 0);
  }
}

TEST_CASE("identical pairs with zero labels are learnable") {
  // every PCI is the same image and the trajectory is stationary
  SubjectData s = blob_subject(24, 7, 0.0);
  std::vector<SubjectData> subs{s};
  TrainConfig cfg = small_config();
  cfg.epochs = 1000;
  cfg.max_steps = 200;
  cfg.batch_size = 12;
  cfg.subsample_per_subject = 24;
  cfg.patience = 1000;
  nn::MotionNet net(small_model());
  const TrainResult r = train(net, subs, {}, cfg);
  CHECK(r.steps == 200);
  REQUIRE(!r.log.empty());
  MESSAGE("final loss " << r.log.back().train_loss);
  CHECK(r.log.back().train_loss < 1e-3);
}

TEST_CASE("train is deterministic, logs per epoch and restores the best weights") {
  std::vector<SubjectData> subs{blob_subject(24, 11), blob_subject(24, 12)};
  std::vector<SubjectData> val{blob_subject(24, 13)};
  const TrainConfig cfg = small_config();
  test::TempDir dir("train");
  nn::MotionNet a(small_model()), b(small_model());
  const TrainResult ra = train(a, subs, val, cfg, {dir.path(), "abc123", nullptr});
  int seen = 0;
  const TrainResult rb = train(b, subs, val, cfg, {{}, {}, [&](const EpochLog&) { ++seen; }});
  REQUIRE(ra.log.size() == 3);
  CHECK(seen == 3);
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    CHECK(ra.log[i].train_loss == rb.log[i].train_loss);
    CHECK(ra.log[i].val_trans_rmse_mm == rb.log[i].val_trans_rmse_mm);
    CHECK(ra.log[i].epoch == static_cast<int>(i));
  }
  CHECK(ra.log.back().step == 3 * 6);
  CHECK(same_weights(a, b));

  // the returned model scores the best logged validation value
  std::size_t best = 0;
  for (std::size_t i = 1; i < ra.log.size(); ++i)
    if (ra.log[i].val_trans_rmse_mm + ra.log[i].val_rot_rmse_deg <
        ra.log[best].val_trans_rmse_mm + ra.log[best].val_rot_rmse_deg)
      best = i;
  CHECK(ra.best.epoch == static_cast<int>(best));
  const auto gold = reference_labels(val[0].trajectory, val[0].pcis);
  const auto r = rmse_components(infer_trajectory(a, val[0].pcis, cfg.batch_size), gold);
  CHECK(r.trans_rmse == doctest::Approx(ra.log[best].val_trans_rmse_mm).epsilon(1e-12));

  // outputs on disk
  CHECK(std::filesystem::exists(dir.path() / "best.ckpt"));
  CHECK(std::filesystem::exists(dir.path() / "last.ckpt"));
  std::ifstream log(dir.path() / "train_log.csv");
  std::string line;
  int lines = 0;
  std::getline(log, line);
  CHECK(line == "step,epoch,lr,train_loss,val_trans_rmse_mm,val_rot_rmse_deg");
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 3);

  // reloading the best checkpoint reproduces in-memory inference bit for bit
  auto loaded = nn::load_checkpoint(dir.path() / "best.ckpt");
  CHECK(loaded.meta.config_hash == "abc123");
  CHECK(loaded.meta.epoch == ra.best.epoch);
  const auto p1 = infer_trajectory(a, val[0].pcis), p2 = infer_trajectory(loaded.model, val[0].pcis);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1.entries()[i].pose.as_array() == p2.entries()[i].pose.as_array());
}

TEST_CASE("early stopping") {
  std::vector<SubjectData> subs{blob_subject(24, 21)};
  std::vector<SubjectData> val{blob_subject(24, 22)};
  TrainConfig cfg = small_config();
  cfg.epochs = 40;
  cfg.patience = 2;
  nn::MotionNet net(small_model());
  const TrainResult r = train(net, subs, val, cfg);
  REQUIRE(!r.log.empty());
  if (r.stopped_early) {
    CHECK(r.log.size() < 40);
    CHECK(r.log.size() == static_cast<std::size_t>(r.best.epoch + 1 + cfg.patience));
  } else {
    CHECK(r.log.size() == 40);
  }
}

TEST_CASE("divergence keeps the last good weights") {
  std::vector<SubjectData> subs{blob_subject(24, 31)};
  TrainConfig cfg = small_config();
  cfg.lr0 = 1e300;
  cfg.epochs = 50;
  test::TempDir dir("diverge");
  nn::MotionNet net(small_model());
  CHECK_ERRC(train(net, subs, {}, cfg, {dir.path(), {}, nullptr}), Errc::Divergence);
  for (const auto& p : net.parameters())
    for (double v : p.tensor.value()) REQUIRE(std::isfinite(v));
  CHECK(std::filesystem::exists(dir.path() / "last.ckpt"));
}

TEST_CASE("inference protocol") {
  const SubjectData s = blob_subject(13, 41);
  nn::MotionNet net(small_model());
  const auto traj = infer_trajectory(net, s.pcis, 5);
  REQUIRE(traj.size() == 13);
  CHECK(traj.entries()[0].pose.as_array() == RigidTransform::identity().as_array());
  for (std::size_t i = 0; i < traj.size(); ++i) CHECK(traj.entries()[i].time == s.pcis[i].t_start);
  // batching does not change the predictions
  const auto one = infer_trajectory(net, s.pcis, 1);
  for (std::size_t i = 1; i < traj.size(); ++i) {
    const auto a = traj.entries()[i].pose.as_array(), b = one.entries()[i].pose.as_array();
    for (int k = 0; k < 6; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
  }
  CHECK(net.training());  // mode restored after inference
  CHECK_ERRC(infer_trajectory(net, std::span(s.pcis).first(1)), Errc::EmptySeries);

  const auto gold = reference_labels(s.trajectory, s.pcis);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto e = relative_motion(s.trajectory, 0, static_cast<double>(i)).as_array();
    CHECK(gold.entries()[i].pose.as_array() == e);
  }
}

TEST_CASE("attention stays row-stochastic after training") {
  std::vector<SubjectData> subs{blob_subject(24, 51)};
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  nn::MotionNet net(small_model());
  train(net, subs, {}, cfg);
  const ImageVolume* r[] = {&subs[0].pcis[0].image, &subs[0].pcis[1].image};
  const ImageVolume* m[] = {&subs[0].pcis[5].image, &subs[0].pcis[9].image};
  nn::ForwardTrace trace;
  net.forward(nn::make_input_batch(r, {8, 8, 8}), nn::make_input_batch(m, {8, 8, 8}), &trace);
  const auto& A = trace.attention;
  const int N = A.shape()[1];
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < N; ++i) {
      double sum = 0;
      for (int j = 0; j < N; ++j) sum += A.value()[(static_cast<std::size_t>(b) * N + i) * N + j];
      CHECK(std::abs(sum - 1) < 1e-9);
    }
}
