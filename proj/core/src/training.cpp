#include "hmc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hmc/error.hpp"
#include "hmc/metrics.hpp"
#include "hmc/optim.hpp"

namespace hmc {
namespace {

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  // rejection sampling keeps the draw exact and platform independent
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do r = rng();
  while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const nn::MotionNet& m) {
  Snapshot s;
  for (const auto& p : m.parameters()) s.push_back(p.tensor.value());
  for (const auto& [name, t] : m.buffers()) s.push_back(t.value());
  return s;
}

void restore(nn::MotionNet& m, const Snapshot& s) {
  std::size_t i = 0;
  for (auto& p : m.parameters()) p.tensor.value() = s[i++];
  for (auto [name, t] : m.buffers()) t.value() = s[i++];
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (subsample_per_subject < 2) fail(Errc::ConfigError, "subsample_per_subject must be >= 2");
  if (subsample_per_subject > total_timepoints) fail(Errc::ConfigError, "subsample_per_subject exceeds total_timepoints");
  if (batch_size < 1) fail(Errc::ConfigError, "batch_size must be >= 1");
  if (!(lr0 > 0) || !(gamma > 0) || lr_step < 1) fail(Errc::ConfigError, "invalid learning-rate schedule");
  if (epochs < 1) fail(Errc::ConfigError, "epochs must be >= 1");
  if (max_steps < 0 || patience < 1 || val_stride < 1) fail(Errc::ConfigError, "invalid step/patience/stride settings");
  if (!(rotation_weight >= 0)) fail(Errc::ConfigError, "rotation_weight must be >= 0");
}

PairSampler::PairSampler(std::span<const SubjectData> subjects, const TrainConfig& cfg, std::mt19937_64& rng)
    : subjects_(subjects) {
  for (const auto& s : subjects) {
    const std::size_t avail = std::min<std::size_t>(s.pcis.size(), static_cast<std::size_t>(cfg.total_timepoints));
    const auto want = static_cast<std::size_t>(cfg.subsample_per_subject);
    if (avail < want || avail < 2)
      fail(Errc::InsufficientTimepoints, "subject " + s.id + " has " + std::to_string(avail) + " time points, " +
                                             std::to_string(want) + " requested");
    std::vector<std::size_t> idx(avail);
    for (std::size_t i = 0; i < avail; ++i) idx[i] = i;
    shuffle(idx, rng);
    idx.resize(want);
    std::sort(idx.begin(), idx.end());
    subsets_.push_back(std::move(idx));
  }
}

PairSample PairSampler::make(std::size_t subject, std::size_t a, std::size_t b) const {
  const SubjectData& s = subjects_[subject];
  PairSample p;
  p.subject = subject;
  p.ref_index = a;
  p.mov_index = b;
  p.ref = &s.pcis[a];
  p.mov = &s.pcis[b];
  p.t_ref = p.ref->t_start;
  p.t_mov = p.mov->t_start;
  p.theta = relative_motion(s.trajectory, p.t_ref, p.t_mov);
  return p;
}

std::vector<PairSample> PairSampler::epoch(std::mt19937_64& rng) const {
  std::vector<PairSample> out;
  for (std::size_t s = 0; s < subsets_.size(); ++s) {
    const auto& sub = subsets_[s];
    for (std::size_t n = 0; n < sub.size(); ++n) {
      std::size_t i = uniform_index(rng, sub.size());
      std::size_t j = uniform_index(rng, sub.size() - 1);
      if (j >= i) ++j;
      if (i > j) std::swap(i, j);
      out.push_back(make(s, sub[i], sub[j]));
    }
  }
  shuffle(out, rng);
  return out;
}

nn::Tensor motion_loss(const nn::Tensor& pred, const nn::Tensor& target, double rotation_weight) {
  const std::array<double, 6> w{1, 1, 1, rotation_weight, rotation_weight, rotation_weight};
  return nn::mse_loss(pred, target, w);
}

MotionTrajectory reference_labels(const MotionTrajectory& traj, std::span<const CloudImage> pcis) {
  if (pcis.empty()) fail(Errc::EmptySeries, "no PCIs");
  MotionTrajectory out;
  for (const auto& p : pcis) out.push_back({p.t_start, relative_motion(traj, pcis[0].t_start, p.t_start)});
  return out;
}

MotionTrajectory infer_trajectory(nn::MotionNet& model, std::span<const CloudImage> pcis, int batch_size) {
  if (pcis.size() < 2) fail(Errc::EmptySeries, "inference needs at least two PCIs");
  batch_size = std::max(1, batch_size);
  const bool was = model.training();
  model.set_training(false);
  const auto& dims = model.config().input_dims;
  MotionTrajectory out;
  out.push_back({pcis[0].t_start, RigidTransform::identity()});
  for (std::size_t start = 1; start < pcis.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), pcis.size() - start);
    std::vector<const ImageVolume*> refs(n, &pcis[0].image), movs;
    for (std::size_t i = 0; i < n; ++i) movs.push_back(&pcis[start + i].image);
    const nn::Tensor pred = model.forward(nn::make_input_batch(refs, dims), nn::make_input_batch(movs, dims));
    for (std::size_t i = 0; i < n; ++i) {
      const double* v = pred.value().data() + 6 * i;
      out.push_back({pcis[start + i].t_start, {v[0], v[1], v[2], v[3], v[4], v[5]}});
    }
  }
  model.set_training(was);
  return out;
}

void write_train_log(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Errc::IoError, "cannot write " + path.string());
  os << "step,epoch,lr,train_loss,val_trans_rmse_mm,val_rot_rmse_deg\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(e.step), e.epoch, e.lr,
                  e.train_loss, e.val_trans_rmse_mm, e.val_rot_rmse_deg);
    os << buf;
  }
}

TrainResult train(nn::MotionNet& model, std::span<const SubjectData> train_set, std::span<const SubjectData> val,
                  const TrainConfig& cfg, const TrainOutputs& out) {
  cfg.validate();
  if (train_set.empty()) fail(Errc::InsufficientTimepoints, "empty training set");
  std::mt19937_64 rng(cfg.seed);
  const PairSampler sampler(train_set, cfg, rng);
  auto params = model.parameters();
  nn::AdamState adam = nn::AdamState::for_params(params);
  const auto& dims = model.config().input_dims;
  if (!out.dir.empty()) std::filesystem::create_directories(out.dir);

  // strided validation series, labels fixed up front
  std::vector<std::vector<CloudImage>> val_series;
  std::vector<MotionTrajectory> val_gold;
  for (const auto& s : val) {
    std::vector<CloudImage> series;
    for (std::size_t i = 0; i < s.pcis.size(); i += static_cast<std::size_t>(cfg.val_stride)) series.push_back(s.pcis[i]);
    val_gold.push_back(reference_labels(s.trajectory, series));
    val_series.push_back(std::move(series));
  }

  TrainResult result;
  Snapshot best = snapshot(model);
  Snapshot good = best;
  double best_score = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::int64_t step = 0;

  auto meta_for = [&](const EpochLog& e) {
    nn::CheckpointMeta m;
    m.step = e.step;
    m.epoch = e.epoch;
    m.val_trans_rmse_mm = e.val_trans_rmse_mm;
    m.val_rot_rmse_deg = e.val_rot_rmse_deg;
    m.rng_state = rng_text(rng);
    m.config_hash = out.config_hash;
    return m;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.set_training(true);
    const auto pairs = sampler.epoch(rng);
    double loss_sum = 0;
    std::size_t loss_n = 0;
    double lr = nn::exp_decay_lr(cfg.lr0, cfg.gamma, cfg.lr_step, step);
    bool capped = false;
    for (std::size_t b0 = 0; b0 < pairs.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        capped = true;
        break;
      }
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), pairs.size() - b0);
      std::vector<const ImageVolume*> refs, movs;
      std::vector<double> labels;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& p = pairs[b0 + i];
        refs.push_back(&p.ref->image);
        movs.push_back(&p.mov->image);
        const auto a = p.theta.as_array();
        labels.insert(labels.end(), a.begin(), a.end());
      }
      const nn::Tensor target = nn::Tensor::from({static_cast<int>(n), 6}, std::move(labels));
      model.zero_grad();
      const nn::Tensor pred = model.forward(nn::make_input_batch(refs, dims), nn::make_input_batch(movs, dims));
      const nn::Tensor loss = motion_loss(pred, target, cfg.rotation_weight);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        restore(model, good);
        if (!out.dir.empty()) {
          EpochLog e{step, epoch, lr, lv, 0, 0};
          nn::save_checkpoint(out.dir / "last.ckpt", model, meta_for(e));
          write_train_log(out.dir / "train_log.csv", result.log);
        }
        fail(Errc::Divergence, "non-finite training loss at step " + std::to_string(step));
      }
      nn::backward(loss);
      lr = nn::exp_decay_lr(cfg.lr0, cfg.gamma, cfg.lr_step, step);
      nn::adam_step(params, adam, lr);
      ++step;
      loss_sum += lv * static_cast<double>(n);
      loss_n += n;
    }
    if (loss_n == 0) break;
    good = snapshot(model);

    EpochLog e;
    e.step = step;
    e.epoch = epoch;
    e.lr = lr;
    e.train_loss = loss_sum / static_cast<double>(loss_n);
    double score = e.train_loss;
    if (!val_series.empty()) {
      double tr = 0, ro = 0;
      for (std::size_t v = 0; v < val_series.size(); ++v) {
        const RmseResult r = rmse_components(infer_trajectory(model, val_series[v], cfg.batch_size), val_gold[v]);
        tr += r.trans_rmse;
        ro += r.rot_rmse;
      }
      e.val_trans_rmse_mm = tr / static_cast<double>(val_series.size());
      e.val_rot_rmse_deg = ro / static_cast<double>(val_series.size());
      score = e.val_trans_rmse_mm + e.val_rot_rmse_deg;
    }
    result.log.push_back(e);
    if (out.on_epoch) out.on_epoch(e);

    if (score < best_score) {
      best_score = score;
      best = good;
      result.best = meta_for(e);
      since_best = 0;
      if (!out.dir.empty()) nn::save_checkpoint(out.dir / "best.ckpt", model, result.best);
    } else {
      ++since_best;
    }
    if (!out.dir.empty()) {
      nn::save_checkpoint(out.dir / "last.ckpt", model, meta_for(e));
      write_train_log(out.dir / "train_log.csv", result.log);
    }
    if (capped || (cfg.max_steps > 0 && step >= cfg.max_steps)) break;
    if (since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  result.steps = step;
  if (!val_series.empty()) restore(model, best);
  model.set_training(false);
  return result;
}

}  // namespace hmc
