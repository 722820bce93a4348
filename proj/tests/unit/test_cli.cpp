#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hmc/binary_io.hpp"
#include "pipeline.hpp"
#include "test_util.hpp"

using namespace hmc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = 0;
  std::string err;
};

Run hmc_cli(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(HMC_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream is(err);
  std::getline(is, r.err);
  return r;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto base = pipeline::preset("default");
  CHECK(base.train.subsample_per_subject == 60);
  CHECK(base.train.total_timepoints == 300);
  const auto tiny = pipeline::preset("tiny");
  CHECK(tiny.pci_dims == std::array<int, 3>{8, 8, 8});
  CHECK_ERRC(pipeline::preset("huge"), Errc::UnknownPreset);

  // round trip through the printed form
  const auto again = pipeline::parse_config(pipeline::to_json(tiny), base);
  CHECK(pipeline::to_json(again) == pipeline::to_json(tiny));
  CHECK(pipeline::config_hash(again) == pipeline::config_hash(tiny));
  CHECK(pipeline::config_hash(tiny) != pipeline::config_hash(base));
  CHECK(pipeline::config_hash(tiny).size() == 16);

  const auto c = pipeline::parse_config(R"({"seed": 9, "train": {"rotation_weight": 2}, "model": {"attention": "self"}})", base);
  CHECK(c.seed == 9);
  CHECK(c.train.rotation_weight == 2);
  CHECK(c.model.attention == nn::AttentionType::Self);
  CHECK(c.train.batch_size == base.train.batch_size);
  CHECK(pipeline::model_config(c).input_dims == c.pci_dims);
  CHECK(pipeline::train_config(c).seed != pipeline::train_config(base).seed);

  CHECK_ERRC(pipeline::parse_config(R"({"train": {"lr": 1}})"), Errc::ConfigError);
  CHECK_ERRC(pipeline::parse_config(R"({"bogus": {}})"), Errc::ConfigError);
  CHECK_ERRC(pipeline::parse_config(R"({"train": {"batch_size": "x"}})"), Errc::ConfigError);
  CHECK_ERRC(pipeline::parse_config(R"({"train": {"batch_size": 0}})"), Errc::ConfigError);
  CHECK_ERRC(pipeline::parse_config(R"({"model": {"attention": "sideways"}})"), Errc::ConfigError);
  CHECK_ERRC(pipeline::parse_config("{not json"), Errc::ConfigError);
}

TEST_CASE("derived seeds") {
  const auto c = pipeline::preset("tiny");
  CHECK(pipeline::seed_for(c, pipeline::Stream::Phantom, 0) != pipeline::seed_for(c, pipeline::Stream::Phantom, 1));
  CHECK(pipeline::seed_for(c, pipeline::Stream::Phantom, 0) != pipeline::seed_for(c, pipeline::Stream::Trajectory, 0));
  auto d = c;
  d.seed = 1;
  CHECK(pipeline::seed_for(c, pipeline::Stream::Events, 0) != pipeline::seed_for(d, pipeline::Stream::Events, 0));
}

TEST_CASE("subject simulation") {
  auto cfg = pipeline::preset("tiny");
  const auto s = pipeline::make_subject(cfg, 0);
  CHECK(s.id == "subject_000");
  CHECK(s.trajectory.size() == 8);
  const auto ev = pipeline::simulate_events(cfg, s, 0);
  const double rate = static_cast<double>(ev.events.size()) / cfg.simulate.duration;
  CHECK(rate == doctest::Approx(cfg.simulate.event_rate).epsilon(0.1));
  CHECK(ev.header.config_hash == pipeline::config_hash(cfg));

  const auto thin = pipeline::simulate_events(cfg, s, 0, 0.25);
  CHECK(static_cast<double>(thin.events.size()) == doctest::Approx(0.25 * ev.events.size()).epsilon(0.1));

  // in-memory PCIs equal the ones built from the same event stream
  const auto sens = pipeline::pci_sensitivity(cfg);
  const auto pcis = pipeline::simulate_pcis(cfg, s, 0, sens);
  const auto ref = make_pci_series(ev, sens, 0, cfg.simulate.duration, cfg.pci_dims);
  REQUIRE(pcis.size() == ref.size());
  for (std::size_t i = 0; i < pcis.size(); ++i) {
    CHECK(pcis[i].event_count == ref[i].event_count);
    CHECK(pcis[i].data() == ref[i].data());
  }
}

TEST_CASE("cli pipeline on the tiny preset") {
  test::TempDir dir("cli");
  const fs::path d = dir.path();
  const std::string f = "--preset tiny --deterministic --seed 3 ";
  auto run = [&](const std::string& args) { return hmc_cli(f + args, d); };
  auto p = [&](const std::string& rel) { return (d / rel).string(); };

  REQUIRE(run("simulate --out " + p("sim")).status == 0);
  for (const char* s : {"subject_000", "subject_001", "subject_002"}) {
    CHECK(fs::exists(d / "sim" / s / "events.lm"));
    CHECK(fs::exists(d / "sim" / s / "phantom.i16"));
    CHECK(fs::exists(d / "sim" / s / "trajectory.csv"));
    REQUIRE(run(std::string("make-pci --listmode ") + p("sim/") + s + "/events.lm --sens " + p("sim/sensitivity") +
                " --out " + p("sim/") + s + "/pcis")
                .status == 0);
  }
  REQUIRE(run("train --data " + p("sim") + " --out " + p("ckpt")).status == 0);
  for (const char* n : {"best.ckpt", "last.ckpt", "train_log.csv", "config.json"}) CHECK(fs::exists(d / "ckpt" / n));
  REQUIRE(run("infer --ckpt " + p("ckpt") + " --pcis " + p("sim/subject_002/pcis") + " --out " + p("dl.csv")).status == 0);
  REQUIRE(run("register --pcis " + p("sim/subject_002/pcis") + " --out " + p("ssd.csv")).status == 0);
  REQUIRE(run("reconstruct --listmode " + p("sim/subject_002/events.lm") + " --traj none --out " + p("nmc")).status == 0);
  REQUIRE(run("reconstruct --listmode " + p("sim/subject_002/events.lm") + " --traj " + p("sim/subject_002/trajectory.csv") +
              " --out " + p("gold"))
              .status == 0);

  // self-comparison gives an all-zero report
  REQUIRE(run("evaluate --pred " + p("sim/subject_002/trajectory.csv") + " --gold " + p("sim/subject_002/trajectory.csv") +
              " --recon-pred " + p("gold") + " --recon-gold " + p("gold") + " --labels " + p("sim/subject_002/phantom") +
              " --out " + p("self.json"))
              .status == 0);
  const auto self = nlohmann::json::parse(io::read_text_file(d / "self.json"));
  const auto& s0 = self["subjects"][0];
  CHECK(s0["trans_rmse_mm"].get<double>() == 0.0);
  CHECK(s0["rot_rmse_deg"].get<double>() == 0.0);
  CHECK(s0["mde_mm"].get<double>() == 0.0);
  CHECK(s0["nmse"].get<double>() == 0.0);
  CHECK(s0["ssim"].get<double>() == doctest::Approx(1.0));
  CHECK(self["config_hash"].get<std::string>() == pipeline::config_hash(pipeline::parse_config(
                                                      io::read_text_file(d / "sim" / "config.json"))));

  REQUIRE(run("evaluate --pred " + p("dl.csv") + " --pred " + p("ssd.csv") + " --gold " +
              p("sim/subject_002/trajectory.csv") + " --gold " + p("sim/subject_002/trajectory.csv") + " --out " +
              p("two.json"))
              .status == 0);
  const auto two = nlohmann::json::parse(io::read_text_file(d / "two.json"));
  CHECK(two["subjects"].size() == 2);
  CHECK(two["cohort"]["trans_rmse_mm"]["sd"].get<double>() >= 0);

  REQUIRE(run("report --inputs " + p("nmc") + " " + p("dl.csv") + " " + p("ssd.csv") + " --reference " + p("gold") +
              " --out " + p("figs"))
              .status == 0);
  for (const char* n : {"nmc_slices.pgm", "nmc_error_slices.pgm", "nmc_error.json", "trajectories.csv",
                        "trajectory_tx_mm.pgm", "trajectory_rz_deg.pgm"})
    CHECK(fs::exists(d / "figs" / n));

  // mismatched geometry is a data error
  std::ofstream(d / "big.json") << R"({"reconstruct": {"dims": [16, 16, 12], "spacing_mm": [16, 16, 16]}})";
  REQUIRE(hmc_cli(f + "--config " + p("big.json") + " reconstruct --listmode " + p("sim/subject_002/events.lm") +
                      " --traj none --out " + p("small"),
                  d)
              .status == 0);
  const Run mismatch = run("evaluate --pred " + p("dl.csv") + " --gold " + p("dl.csv") + " --recon-pred " + p("small") +
                           " --recon-gold " + p("gold") + " --labels " + p("sim/subject_002/phantom") + " --out " +
                           p("bad.json"));
  CHECK(mismatch.status == 3);
  CHECK(nlohmann::json::parse(mismatch.err)["error"] == "GeometryMismatch");
}

TEST_CASE("cli errors") {
  test::TempDir dir("clierr");
  const fs::path d = dir.path();
  Run r = hmc_cli("frobnicate", d);
  CHECK(r.status == 2);
  CHECK(nlohmann::json::parse(r.err)["category"] == "config");

  std::ofstream(d / "bad.json") << R"({"train": {"nope": 1}})";
  r = hmc_cli("--config " + (d / "bad.json").string() + " config", d);
  CHECK(r.status == 2);
  CHECK(nlohmann::json::parse(r.err)["error"] == "ConfigError");

  r = hmc_cli("register --pcis " + (d / "missing").string() + " --out " + (d / "x.csv").string(), d);
  CHECK(r.status == 3);
  CHECK(nlohmann::json::parse(r.err)["category"] == "data");

  r = hmc_cli("register --method mutual-information --pcis " + d.string() + " --out x.csv", d);
  CHECK(r.status == 2);

  r = hmc_cli("--preset tiny config", d);
  CHECK(r.status == 0);
  CHECK(r.err.empty());
  const auto printed = io::read_text_file(d / "stdout.txt");
  CHECK(printed == pipeline::to_json(pipeline::preset("tiny")));
}
