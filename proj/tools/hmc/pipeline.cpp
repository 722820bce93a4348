#include "pipeline.hpp"

#include <json.hpp>

#include <set>

#include "hmc/binary_io.hpp"
#include "hmc/error.hpp"
#include "hmc/parallel.hpp"

namespace hmc::pipeline {
namespace {

using json = nlohmann::ordered_json;

json simulate_json(const SimulateConfig& s) {
  return {{"preset", s.preset},
          {"subjects", s.subjects},
          {"duration_s", s.duration},
          {"event_rate", s.event_rate},
          {"n_jumps", s.trajectory.n_jumps},
          {"jump_translation_sd_mm", s.trajectory.jump_translation_sd},
          {"jump_rotation_sd_deg", s.trajectory.jump_rotation_sd},
          {"drift_rate_mm_s", s.trajectory.drift_rate},
          {"sensitivity_samples", s.sensitivity_samples}};
}

json model_json(const nn::ModelConfig& m) {
  return {{"encoder_channels", m.encoder_channels}, {"encoder_kernel", m.encoder_kernel},
          {"attention", nn::to_string(m.attention)}, {"gating", m.gating},
          {"dnf", m.dnf},                           {"share_branch_dnf", m.share_branch_dnf},
          {"dnf_kernel", m.dnf_kernel},             {"mlp_hidden", m.mlp_hidden}};
}

json train_json(const Config& c) {
  const TrainConfig& t = c.train;
  return {{"subsample_per_subject", t.subsample_per_subject},
          {"total_timepoints", t.total_timepoints},
          {"batch_size", t.batch_size},
          {"lr0", t.lr0},
          {"gamma", t.gamma},
          {"lr_step", t.lr_step},
          {"epochs", t.epochs},
          {"max_steps", t.max_steps},
          {"patience", t.patience},
          {"rotation_weight", t.rotation_weight},
          {"val_stride", t.val_stride},
          {"val_subjects", c.val_subjects},
          {"test_subjects", c.test_subjects}};
}

json reg_json(const RegConfig& r) {
  return {{"levels", r.levels},
          {"max_iters", r.max_iters},
          {"tol", r.tol},
          {"warm_start", r.warm_start},
          {"max_translation_mm", r.max_translation_mm},
          {"max_rotation_deg", r.max_rotation_deg},
          {"bracket_mm", r.bracket_mm},
          {"bracket_deg", r.bracket_deg},
          {"line_search_iters", r.line_search_iters}};
}

json recon_json(const ReconConfig& r) {
  return {{"dims", r.dims},
          {"spacing_mm", r.spacing},
          {"iterations", r.iterations},
          {"sensitivity_samples", r.sensitivity_samples}};
}

json full_json(const Config& c) {
  json j;
  j["seed"] = c.seed;
  j["simulate"] = simulate_json(c.simulate);
  j["pci"] = {{"dims", c.pci_dims}};
  j["model"] = model_json(c.model);
  j["train"] = train_json(c);
  j["register"] = reg_json(c.reg);
  j["reconstruct"] = recon_json(c.recon);
  j["evaluate"] = {{"method", c.method}};
  return j;
}

// Overwrites `out` from j[key] when present.
template <typename T>
void take(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

void check_keys(const json& given, const json& allowed, const std::string& where) {
  if (!given.is_object()) fail(Errc::ConfigError, where + " must be an object");
  for (const auto& [k, v] : given.items())
    if (!allowed.contains(k)) fail(Errc::ConfigError, "unknown key " + where + "." + k);
}

}  // namespace

Config preset(std::string_view name) {
  Config c;
  if (name == "default") {
    c.train.subsample_per_subject = 60;
    c.train.total_timepoints = 300;
    return c;
  }
  if (name == "tiny") {
    c.simulate.subjects = 3;
    c.simulate.duration = 8;
    c.simulate.event_rate = 3000;
    c.simulate.sensitivity_samples = 200'000;
    c.pci_dims = {8, 8, 8};
    c.model = nn::ModelConfig::shrunken();
    c.train.subsample_per_subject = 6;
    c.train.total_timepoints = 8;
    c.train.batch_size = 4;
    c.train.epochs = 2;
    c.val_subjects = 1;
    c.test_subjects = 1;
    c.reg.levels = 1;
    c.reg.max_iters = 10;
    c.recon.dims = {32, 32, 24};
    c.recon.spacing = {8, 8, 8};
    c.recon.iterations = 3;
    c.recon.sensitivity_samples = 200'000;
    return c;
  }
  fail(Errc::UnknownPreset, "unknown config preset '" + std::string(name) + "'");
}

Config parse_config(std::string_view text, const Config& base) {
  Config c = base;
  try {
    const json j = json::parse(text);
    const json ref = full_json(base);
    check_keys(j, ref, "config");
    take(j, "seed", c.seed);
    if (auto it = j.find("simulate"); it != j.end()) {
      const json& s = *it;
      check_keys(s, ref["simulate"], "simulate");
      take(s, "preset", c.simulate.preset);
      take(s, "subjects", c.simulate.subjects);
      take(s, "duration_s", c.simulate.duration);
      take(s, "event_rate", c.simulate.event_rate);
      take(s, "n_jumps", c.simulate.trajectory.n_jumps);
      take(s, "jump_translation_sd_mm", c.simulate.trajectory.jump_translation_sd);
      take(s, "jump_rotation_sd_deg", c.simulate.trajectory.jump_rotation_sd);
      take(s, "drift_rate_mm_s", c.simulate.trajectory.drift_rate);
      take(s, "sensitivity_samples", c.simulate.sensitivity_samples);
    }
    if (auto it = j.find("pci"); it != j.end()) {
      check_keys(*it, ref["pci"], "pci");
      take(*it, "dims", c.pci_dims);
    }
    if (auto it = j.find("model"); it != j.end()) {
      const json& m = *it;
      check_keys(m, ref["model"], "model");
      take(m, "encoder_channels", c.model.encoder_channels);
      take(m, "encoder_kernel", c.model.encoder_kernel);
      if (m.contains("attention")) c.model.attention = nn::attention_from_string(m["attention"].get<std::string>());
      take(m, "gating", c.model.gating);
      take(m, "dnf", c.model.dnf);
      take(m, "share_branch_dnf", c.model.share_branch_dnf);
      take(m, "dnf_kernel", c.model.dnf_kernel);
      take(m, "mlp_hidden", c.model.mlp_hidden);
    }
    if (auto it = j.find("train"); it != j.end()) {
      const json& t = *it;
      check_keys(t, ref["train"], "train");
      take(t, "subsample_per_subject", c.train.subsample_per_subject);
      take(t, "total_timepoints", c.train.total_timepoints);
      take(t, "batch_size", c.train.batch_size);
      take(t, "lr0", c.train.lr0);
      take(t, "gamma", c.train.gamma);
      take(t, "lr_step", c.train.lr_step);
      take(t, "epochs", c.train.epochs);
      take(t, "max_steps", c.train.max_steps);
      take(t, "patience", c.train.patience);
      take(t, "rotation_weight", c.train.rotation_weight);
      take(t, "val_stride", c.train.val_stride);
      take(t, "val_subjects", c.val_subjects);
      take(t, "test_subjects", c.test_subjects);
    }
    if (auto it = j.find("register"); it != j.end()) {
      const json& r = *it;
      check_keys(r, ref["register"], "register");
      take(r, "levels", c.reg.levels);
      take(r, "max_iters", c.reg.max_iters);
      take(r, "tol", c.reg.tol);
      take(r, "warm_start", c.reg.warm_start);
      take(r, "max_translation_mm", c.reg.max_translation_mm);
      take(r, "max_rotation_deg", c.reg.max_rotation_deg);
      take(r, "bracket_mm", c.reg.bracket_mm);
      take(r, "bracket_deg", c.reg.bracket_deg);
      take(r, "line_search_iters", c.reg.line_search_iters);
    }
    if (auto it = j.find("reconstruct"); it != j.end()) {
      const json& r = *it;
      check_keys(r, ref["reconstruct"], "reconstruct");
      take(r, "dims", c.recon.dims);
      take(r, "spacing_mm", c.recon.spacing);
      take(r, "iterations", c.recon.iterations);
      take(r, "sensitivity_samples", c.recon.sensitivity_samples);
    }
    if (auto it = j.find("evaluate"); it != j.end()) {
      check_keys(*it, ref["evaluate"], "evaluate");
      take(*it, "method", c.method);
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("config: ") + e.what());
  }

  if (c.simulate.subjects < 1 || !(c.simulate.duration >= 1) || !(c.simulate.event_rate > 0))
    fail(Errc::ConfigError, "simulate: subjects, duration_s and event_rate must be positive");
  if (c.simulate.trajectory.n_jumps < 0) fail(Errc::ConfigError, "simulate.n_jumps must be >= 0");
  if (c.val_subjects < 0 || c.test_subjects < 0) fail(Errc::ConfigError, "train: negative subject counts");
  if (c.recon.iterations < 1 || !GridSpec::centered(c.recon.dims, c.recon.spacing).valid())
    fail(Errc::ConfigError, "reconstruct: invalid grid or iteration count");
  for (int d : c.pci_dims)
    if (d < 1) fail(Errc::ConfigError, "pci.dims must be positive");
  model_config(c).validate();
  c.train.validate();
  c.reg.validate();
  return c;
}

Config load_config(const std::filesystem::path& path, const Config& base) {
  return parse_config(io::read_text_file(path), base);
}

std::string to_json(const Config& cfg) { return full_json(cfg).dump(2) + "\n"; }

std::string config_hash(const Config& cfg) { return io::fnv1a_hex(full_json(cfg).dump()); }

std::uint64_t seed_for(const Config& cfg, Stream s, std::uint64_t subject) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(s) + subject);
}

nn::ModelConfig model_config(const Config& cfg) {
  nn::ModelConfig m = cfg.model;
  m.input_dims = cfg.pci_dims;
  m.seed = seed_for(cfg, Stream::Model);
  return m;
}

TrainConfig train_config(const Config& cfg) {
  TrainConfig t = cfg.train;
  t.seed = seed_for(cfg, Stream::Train);
  return t;
}

Subject make_subject(const Config& cfg, int index) {
  Subject s;
  char id[32];
  std::snprintf(id, sizeof id, "subject_%03d", index);
  s.id = id;
  const auto i = static_cast<std::uint64_t>(index);
  s.phantom = build_phantom(cfg.simulate.preset, seed_for(cfg, Stream::Phantom, i));
  TrajectoryConfig tc = cfg.simulate.trajectory;
  tc.duration = cfg.simulate.duration;
  tc.seed = seed_for(cfg, Stream::Trajectory, i);
  s.trajectory = generate_trajectory(tc);

  // detector acceptance from a pilot second at the reference pose
  const EmissionSampler es(s.phantom);
  constexpr double kPilot = 20000;
  std::vector<ListmodeEvent> pilot;
  simulate_second(es, Mat4::Identity(), ScannerGeometry{}, kPilot, 0, seed_for(cfg, Stream::Empty, i), pilot);
  const double acceptance = std::max(1e-3, static_cast<double>(pilot.size()) / kPilot);
  s.rate_scale = cfg.simulate.event_rate / (acceptance * s.phantom.total_activity());
  return s;
}

SensitivityMap pci_sensitivity(const Config& cfg) {
  return estimate_sensitivity(ScannerGeometry{}, default_pci_source_grid(), cfg.simulate.sensitivity_samples,
                              seed_for(cfg, Stream::Sensitivity));
}

SensitivityMap recon_sensitivity(const Config& cfg) {
  return estimate_sensitivity(ScannerGeometry{}, cfg.recon.grid(), cfg.recon.sensitivity_samples,
                              seed_for(cfg, Stream::ReconSensitivity));
}

ListmodeFile simulate_events(const Config& cfg, const Subject& s, int index, double fraction, bool motion_free) {
  const int seconds = static_cast<int>(std::ceil(cfg.simulate.duration));
  const MotionTrajectory traj = motion_free ? MotionTrajectory::stationary(seconds) : s.trajectory;
  ListmodeFile f = simulate_listmode(s.phantom, traj, ScannerGeometry{}, s.rate_scale * fraction, cfg.simulate.duration,
                                     seed_for(cfg, Stream::Events, static_cast<std::uint64_t>(index)));
  f.header.config_hash = config_hash(cfg);
  return f;
}

std::vector<CloudImage> simulate_pcis(const Config& cfg, const Subject& s, int index, const SensitivityMap& sens) {
  const EmissionSampler es(s.phantom);
  const double expected = s.rate_scale * es.total_activity();
  const std::uint64_t seed = seed_for(cfg, Stream::Events, static_cast<std::uint64_t>(index));
  const int seconds = static_cast<int>(std::floor(cfg.simulate.duration));
  const std::string hash = config_hash(cfg);
  std::vector<CloudImage> out(static_cast<std::size_t>(seconds));
  parallel_for(out.size(), [&](std::size_t i) {
    const int sec = static_cast<int>(i);
    std::vector<ListmodeEvent> ev;
    simulate_second(es, to_matrix(s.trajectory.pose_at(sec)), ScannerGeometry{}, expected, sec, seed, ev);
    out[i] = make_pci(ev, sec, sec + 1, sens, cfg.pci_dims);
    out[i].config_hash = hash;
  });
  return out;
}

}  // namespace hmc::pipeline
