// hmc: command-line front end for the simulation, estimation, reconstruction
// and evaluation pipeline. Errors go to stderr as one JSON line; exit status
// 2 = config, 3 = data, 4 = numerical failure.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <iostream>
#include <optional>
#include <thread>

#include "hmc/binary_io.hpp"
#include "hmc/error.hpp"
#include "hmc/metrics.hpp"
#include "hmc/parallel.hpp"
#include "hmc/reconstruction.hpp"
#include "hmc/report.hpp"
#include "pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace hmc;

namespace {

struct Globals {
  std::string config_path;
  std::string preset = "default";
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int threads = 0;
};

pipeline::Config resolve(const Globals& g) {
  pipeline::Config c = pipeline::preset(g.preset);
  if (!g.config_path.empty()) c = pipeline::load_config(g.config_path, c);
  if (g.seed) c.seed = *g.seed;
  return c;
}

void write_json(const fs::path& path, const json& j) { io::write_text_file(path, j.dump(2) + "\n"); }

void write_sidecar(const fs::path& out, const std::string& command, const pipeline::Config& cfg, json extra = {}) {
  json j{{"command", command}, {"config_hash", pipeline::config_hash(cfg)}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  write_json(out.string() + ".json", j);
}

std::vector<fs::path> subject_dirs(const fs::path& data) {
  std::vector<fs::path> out;
  if (!fs::is_directory(data)) fail(Errc::IoError, "not a directory: " + data.string());
  for (const auto& e : fs::directory_iterator(data))
    if (e.is_directory() && fs::exists(e.path() / "trajectory.csv") && fs::exists(e.path() / "pcis" / "series.json"))
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---- commands ---------------------------------------------------------------

void cmd_config(const pipeline::Config& cfg) { std::cout << pipeline::to_json(cfg); }

void cmd_simulate(const pipeline::Config& cfg, const fs::path& out) {
  fs::create_directories(out);
  io::write_text_file(out / "config.json", pipeline::to_json(cfg));
  const std::string hash = pipeline::config_hash(cfg);
  save_sensitivity(out / "sensitivity", pipeline::pci_sensitivity(cfg), hash);
  for (int i = 0; i < cfg.simulate.subjects; ++i) {
    const pipeline::Subject s = pipeline::make_subject(cfg, i);
    const fs::path dir = out / s.id;
    fs::create_directories(dir);
    save_phantom(dir / "phantom", s.phantom, hash);
    write_trajectory_csv(dir / "trajectory.csv", s.trajectory);
    write_listmode(dir / "events.lm", pipeline::simulate_events(cfg, s, i));
  }
}

void cmd_make_pci(const pipeline::Config& cfg, const fs::path& listmode, const fs::path& sens_stem, const fs::path& out,
                  std::optional<int> dims) {
  const ListmodeFile lm = read_listmode(listmode);
  const SensitivityMap sens = load_sensitivity(io::strip_known_extension(sens_stem));
  std::array<int, 3> d = cfg.pci_dims;
  if (dims) d = {*dims, *dims, *dims};
  auto series = make_pci_series(lm, sens, 0, std::floor(lm.header.duration), d);
  const std::string hash = pipeline::config_hash(cfg);
  for (auto& p : series) p.config_hash = hash;
  save_pci_series(out, series);
}

void cmd_train(const pipeline::Config& cfg, const fs::path& data, const fs::path& out) {
  const auto dirs = subject_dirs(data);
  const auto held = static_cast<std::size_t>(cfg.val_subjects + cfg.test_subjects);
  if (dirs.size() <= held)
    fail(Errc::InsufficientTimepoints, "need more than " + std::to_string(held) + " subjects in " + data.string());
  std::vector<SubjectData> subjects;
  const std::size_t n_use = dirs.size() - static_cast<std::size_t>(cfg.test_subjects);
  for (std::size_t i = 0; i < n_use; ++i) {
    SubjectData s;
    s.id = dirs[i].filename().string();
    s.pcis = load_pci_series(dirs[i] / "pcis");
    s.trajectory = read_trajectory_csv(dirs[i] / "trajectory.csv");
    subjects.push_back(std::move(s));
  }
  const std::span<const SubjectData> all(subjects);
  const std::size_t n_train = n_use - static_cast<std::size_t>(cfg.val_subjects);
  nn::MotionNet net(pipeline::model_config(cfg));
  fs::create_directories(out);
  io::write_text_file(out / "config.json", pipeline::to_json(cfg));
  TrainOutputs o;
  o.dir = out;
  o.config_hash = pipeline::config_hash(cfg);
  train(net, all.first(n_train), all.subspan(n_train), pipeline::train_config(cfg), o);
}

void cmd_infer(const pipeline::Config& cfg, fs::path ckpt, const fs::path& pcis, const fs::path& out) {
  if (fs::is_directory(ckpt)) ckpt /= "best.ckpt";
  auto loaded = nn::load_checkpoint(ckpt);
  const auto series = load_pci_series(pcis);
  write_trajectory_csv(out, infer_trajectory(loaded.model, series, cfg.train.batch_size));
  write_sidecar(out, "infer", cfg, {{"method", "dl"}, {"model_config_hash", loaded.meta.config_hash}});
}

void cmd_register(const pipeline::Config& cfg, const std::string& method, const fs::path& pcis, const fs::path& out) {
  if (method != "ssd") fail(Errc::ConfigError, "unknown registration method '" + method + "'");
  const auto series = load_pci_series(pcis);
  write_trajectory_csv(out, register_series(series, cfg.reg));
  write_sidecar(out, "register", cfg, {{"method", method}});
}

void cmd_reconstruct(const pipeline::Config& cfg, const fs::path& listmode, const std::string& traj,
                     const std::string& sens_stem, const fs::path& out) {
  ListmodeFile lm = read_listmode(listmode);
  if (traj != "none") lm = ebe_correct(lm, read_trajectory_csv(fs::path(traj)));
  const SensitivityMap sens = sens_stem.empty() ? pipeline::recon_sensitivity(cfg)
                                               : load_sensitivity(io::strip_known_extension(sens_stem));
  if (!(sens.image.grid.dims == cfg.recon.dims))
    fail(Errc::GeometryMismatch, "sensitivity grid differs from the reconstruction grid");
  CloudImage img = reconstruct_mlem(lm.events, cfg.recon.grid(), cfg.recon.iterations, sens.image);
  img.t_start = 0;
  img.t_end = lm.header.duration;
  img.event_count = lm.events.size();
  img.config_hash = pipeline::config_hash(cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_cloud_image(io::strip_known_extension(out), img);
}

json mean_sd_json(const std::vector<double>& v) {
  const MeanSd m = mean_sd(v);
  return {{"mean", m.mean}, {"sd", m.sd}};
}

struct EvalArgs {
  std::vector<std::string> pred, gold, recon_pred, recon_gold, labels;
  std::string method;
};

void cmd_evaluate(const pipeline::Config& cfg, const EvalArgs& a, const fs::path& out) {
  if (a.pred.empty() || a.pred.size() != a.gold.size())
    fail(Errc::ConfigError, "evaluate needs matching --pred and --gold lists");
  const bool recon = !a.recon_pred.empty();
  if (recon && (a.recon_pred.size() != a.pred.size() || a.recon_gold.size() != a.pred.size() ||
                a.labels.size() != a.pred.size()))
    fail(Errc::ConfigError, "--recon-pred, --recon-gold and --labels must be given once per subject");

  json subjects = json::array();
  std::map<std::string, std::vector<double>> cohort;
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    // both sides relative to their first second, the protocol of infer/register
    const auto pred = relative_to_first(read_trajectory_csv(fs::path(a.pred[i])));
    const auto gold = relative_to_first(read_trajectory_csv(fs::path(a.gold[i])));
    const RmseResult r = rmse_components(pred, gold);
    json s{{"index", i}, {"trans_rmse_mm", r.trans_rmse}, {"rot_rmse_deg", r.rot_rmse}, {"components", r.components}};
    cohort["trans_rmse_mm"].push_back(r.trans_rmse);
    cohort["rot_rmse_deg"].push_back(r.rot_rmse);
    if (recon) {
      const CloudImage rp = load_cloud_image(io::strip_known_extension(a.recon_pred[i]));
      const CloudImage rg = load_cloud_image(io::strip_known_extension(a.recon_gold[i]));
      if (!(rp.grid().dims == rg.grid().dims) || rp.grid().spacing != rg.grid().spacing ||
          rp.grid().origin != rg.grid().origin)
        fail(Errc::GeometryMismatch, "reconstructions differ in geometry");
      const Phantom ph = load_phantom(io::strip_known_extension(a.labels[i]));
      const LabelVolume lab = resample_labels(ph.labels, rg.grid());
      const MdeResult m = mde(rp.image, rg.image, lab);
      const auto adr = roi_adr(rp.image, rg.image, lab);
      std::vector<double> adr_v;
      json adr_j = json::object();
      for (const auto& [roi, v] : adr) {
        adr_j[std::to_string(roi)] = v;
        adr_v.push_back(v);
      }
      s["mde_mm"] = m.mde;
      s["adr_percent"] = adr_j;
      s["adr_mean_percent"] = mean_sd(adr_v).mean;
      s["nmse"] = nmse(rp.data(), rg.data());
      s["ssim"] = ssim(rp.image, rg.image);
      for (const char* k : {"mde_mm", "adr_mean_percent", "nmse", "ssim"}) cohort[k].push_back(s[k].get<double>());
    }
    subjects.push_back(std::move(s));
  }
  json c = json::object();
  for (const auto& [k, v] : cohort) c[k] = mean_sd_json(v);
  const json report{{"method", a.method.empty() ? cfg.method : a.method},
                    {"config_hash", pipeline::config_hash(cfg)},
                    {"subjects", subjects},
                    {"cohort", c}};
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json(out, report);
}

void cmd_report(const std::vector<std::string>& inputs, const std::string& reference, const fs::path& out) {
  fs::create_directories(out);
  std::vector<NamedTrajectory> trajs;
  std::optional<CloudImage> ref;
  if (!reference.empty()) ref = load_cloud_image(io::strip_known_extension(reference));
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (p.extension() == ".csv") {
      trajs.emplace_back(p.stem().string(), read_trajectory_csv(p));
      continue;
    }
    const fs::path stem = io::strip_known_extension(p);
    const CloudImage img = load_cloud_image(stem);
    const std::string name = stem.filename().string();
    write_pgm(out / (name + "_slices.pgm"), orthogonal_slices(img.image, img.kind == ImageKind::ErrorMap));
    if (ref) {
      const CloudImage e = error_map(img, *ref);
      save_cloud_image(out / (name + "_error"), e);
      write_pgm(out / (name + "_error_slices.pgm"), orthogonal_slices(e.image, true));
    }
  }
  if (!trajs.empty()) {
    write_overlay_csv(out / "trajectories.csv", trajs);
    write_overlay_plots(out, trajs);
  }
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numerical: return 4;
  }
  return 3;
}

int report_error(std::string_view code, std::string_view category, std::string_view message, int status) {
  std::cerr << json{{"error", code}, {"category", category}, {"message", message}}.dump() << std::endl;
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PET head-motion estimation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON config with per-command sections")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "base config preset: default, tiny");
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_flag("--deterministic", g.deterministic, "sequential kernels and reductions");
  app.add_option("--threads", g.threads, "kernel thread cap (0: all cores)")->check(CLI::NonNegativeNumber);

  std::string out, listmode, sens, pcis, ckpt, data, traj, method = "ssd", reference;
  std::optional<int> dims;
  EvalArgs ev;
  std::vector<std::string> inputs;

  auto* c_config = app.add_subcommand("config", "print the resolved config");
  auto* c_sim = app.add_subcommand("simulate", "phantoms, trajectories, listmode and PCI sensitivity");
  c_sim->add_option("--out", out)->required();
  auto* c_pci = app.add_subcommand("make-pci", "one PCI per second from a listmode file");
  c_pci->add_option("--listmode", listmode)->required();
  c_pci->add_option("--sens", sens)->required();
  c_pci->add_option("--out", out)->required();
  c_pci->add_option("--dims", dims, "cubic PCI size")->check(CLI::PositiveNumber);
  auto* c_train = app.add_subcommand("train", "train the motion network");
  c_train->add_option("--data", data, "directory of subject_*/{trajectory.csv,pcis/}")->required();
  c_train->add_option("--out", out)->required();
  auto* c_infer = app.add_subcommand("infer", "motion trajectory from a checkpoint");
  c_infer->add_option("--ckpt", ckpt)->required();
  c_infer->add_option("--pcis", pcis)->required();
  c_infer->add_option("--out", out)->required();
  auto* c_reg = app.add_subcommand("register", "intensity-based registration baseline");
  c_reg->add_option("--method", method);
  c_reg->add_option("--pcis", pcis)->required();
  c_reg->add_option("--out", out)->required();
  auto* c_rec = app.add_subcommand("reconstruct", "event-by-event corrected MLEM");
  c_rec->add_option("--listmode", listmode)->required();
  c_rec->add_option("--traj", traj, "trajectory CSV, or 'none' for no correction")->required();
  c_rec->add_option("--sens", sens, "sensitivity on the reconstruction grid");
  c_rec->add_option("--out", out)->required();
  auto* c_eval = app.add_subcommand("evaluate", "JSON metrics report");
  c_eval->add_option("--pred", ev.pred)->required();
  c_eval->add_option("--gold", ev.gold)->required();
  c_eval->add_option("--recon-pred", ev.recon_pred);
  c_eval->add_option("--recon-gold", ev.recon_gold);
  c_eval->add_option("--labels", ev.labels, "phantom stems");
  c_eval->add_option("--method", ev.method);
  c_eval->add_option("--out", out)->required();
  auto* c_rep = app.add_subcommand("report", "slice grids, error maps and trajectory plots");
  c_rep->add_option("--inputs", inputs)->required();
  c_rep->add_option("--reference", reference, "gold image for error maps");
  c_rep->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", "config", e.what(), 2);
  }

  try {
    set_deterministic(g.deterministic);
    set_num_threads(g.threads > 0 ? g.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    const pipeline::Config cfg = resolve(g);
    if (c_config->parsed()) cmd_config(cfg);
    else if (c_sim->parsed()) cmd_simulate(cfg, out);
    else if (c_pci->parsed()) cmd_make_pci(cfg, listmode, sens, out, dims);
    else if (c_train->parsed()) cmd_train(cfg, data, out);
    else if (c_infer->parsed()) cmd_infer(cfg, ckpt, pcis, out);
    else if (c_reg->parsed()) cmd_register(cfg, method, pcis, out);
    else if (c_rec->parsed()) cmd_reconstruct(cfg, listmode, traj, sens, out);
    else if (c_eval->parsed()) cmd_evaluate(cfg, ev, out);
    else if (c_rep->parsed()) cmd_report(inputs, reference, out);
  } catch (const Error& e) {
    static constexpr const char* kCategory[] = {"config", "data", "numerical"};
    return report_error(errc_name(e.code()), kCategory[static_cast<int>(e.category())], e.what(),
                        exit_code(e.category()));
  } catch (const fs::filesystem_error& e) {
    return report_error("IoError", "data", e.what(), 3);
  } catch (const std::exception& e) {
    return report_error("InternalError", "numerical", e.what(), 4);
  }
  return 0;
}
