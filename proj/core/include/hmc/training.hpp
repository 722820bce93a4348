#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hmc/checkpoint.hpp"
#include "hmc/geometry.hpp"
#include "hmc/network.hpp"
#include "hmc/pci.hpp"

namespace hmc {

// One simulated subject: a PCI per second plus the gold-standard trajectory.
struct SubjectData {
  std::string id;
  std::vector<CloudImage> pcis;  // time ordered, one per second
  MotionTrajectory trajectory;
};

struct TrainConfig {
  int subsample_per_subject = 360;
  int total_timepoints = 1800;
  int batch_size = 12;
  double lr0 = 5e-4;
  double gamma = 0.98;
  int lr_step = 200;
  int epochs = 100;
  std::int64_t max_steps = 0;  // 0: no step cap
  int patience = 20;           // epochs without validation improvement
  double rotation_weight = 1.0;
  int val_stride = 1;          // validate on every n-th second
  std::uint64_t seed = 0;

  void validate() const;  // Errc::ConfigError
};

struct PairSample {
  std::size_t subject = 0;
  std::size_t ref_index = 0;
  std::size_t mov_index = 0;
  double t_ref = 0;
  double t_mov = 0;
  const CloudImage* ref = nullptr;
  const CloudImage* mov = nullptr;
  RigidTransform theta;  // relative_motion(traj, t_ref, t_mov)
};

// Keeps a fixed per-subject subset of time points (drawn once at
// construction) and draws ordered pairs with t_mov > t_ref from it.
// Throws Errc::InsufficientTimepoints.
class PairSampler {
 public:
  PairSampler(std::span<const SubjectData> subjects, const TrainConfig& cfg, std::mt19937_64& rng);

  // subsample_per_subject pairs per subject, shuffled across subjects.
  std::vector<PairSample> epoch(std::mt19937_64& rng) const;
  const std::vector<std::vector<std::size_t>>& subsets() const { return subsets_; }

 private:
  PairSample make(std::size_t subject, std::size_t a, std::size_t b) const;
  std::span<const SubjectData> subjects_;
  std::vector<std::vector<std::size_t>> subsets_;
};

struct EpochLog {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_trans_rmse_mm = 0;
  double val_rot_rmse_deg = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  nn::CheckpointMeta best;
  std::int64_t steps = 0;
  bool stopped_early = false;
};

struct TrainOutputs {
  std::filesystem::path dir;  // empty: keep everything in memory
  std::string config_hash;
  std::function<void(const EpochLog&)> on_epoch;
};

// Weighted batch MSE; weights (1,1,1,w,w,w).
nn::Tensor motion_loss(const nn::Tensor& pred, const nn::Tensor& target, double rotation_weight);

// Trains `model` in place and leaves it holding the best-validation weights
// (the last weights when `val` is empty). With an output dir writes
// best.ckpt, last.ckpt and train_log.csv. Throws Errc::Divergence after
// restoring the last good weights.
TrainResult train(nn::MotionNet& model, std::span<const SubjectData> train_set, std::span<const SubjectData> val,
                  const TrainConfig& cfg, const TrainOutputs& out = {});

// Entry i is the predicted motion of pcis[i] against the first PCI; entry 0
// is identity. Throws Errc::EmptySeries for fewer than 2 PCIs.
MotionTrajectory infer_trajectory(nn::MotionNet& model, std::span<const CloudImage> pcis, int batch_size = 12);

// Gold labels for the same protocol: relative_motion(traj, t_0, t_i).
MotionTrajectory reference_labels(const MotionTrajectory& traj, std::span<const CloudImage> pcis);

void write_train_log(const std::filesystem::path& path, std::span<const EpochLog> log);

}  // namespace hmc
