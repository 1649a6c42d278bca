#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ebnn/config.hpp"
#include "ebnn/harness.hpp"
#include "ebnn/io.hpp"
#include "ebnn/report.hpp"

namespace fs = std::filesystem;
using namespace ebnn;
using sensors::Channel;

namespace {

enum Exit { kOk = 0, kFailure = 1, kCrash = 2, kConfig = 3, kDiverged = 4 };

struct Common {
  std::uint64_t seed = 0;
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool need_seed) {
  auto* seed = cmd->add_option("--seed", c.seed, "Master seed");
  if (need_seed) seed->required();
  cmd->add_option("--config", c.config_path, "Experiment config file (INI)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override, section.key=value (repeatable)");
}

config::ExperimentConfig load_config(const Common& c) {
  std::vector<std::pair<std::string, std::string>> ov;
  for (const std::string& o : c.overrides) ov.push_back(config::split_override(o));
  config::ExperimentConfig cfg =
      c.config_path.empty() ? config::parse("", ov) : config::load(c.config_path, ov);
  cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

int run_collect(const Common& c, const fs::path& out, std::optional<int> laps) {
  config::ExperimentConfig cfg = load_config(c);
  const int n = laps.value_or(cfg.collection.laps);
  fs::create_directories(out);
  io::write_text(out / "config.ini", config::serialize(cfg));
  try {
    harness::Datasets data = harness::collect_dataset(cfg, n);
    for (const auto& ch : data.channels) io::write_text(out / io::dataset_filename(ch.channel), io::dataset_csv(ch, cfg));
    io::write_text(out / "expert_trajectory.csv", io::trajectory_csv(data.trajectory));
    spdlog::info("collected {} rows over {} laps into {}", data.channels[0].observations.rows(), n, out.string());
  } catch (const harness::ExpertCrashed& e) {
    io::write_text(out / "crash_trajectory.csv", io::trajectory_csv(e.trajectory));
    spdlog::error("{}; trajectory written to {}", e.what(), (out / "crash_trajectory.csv").string());
    return kCrash;
  }
  return kOk;
}

int run_train(const Common& c, const fs::path& data_dir, const fs::path& out) {
  config::ExperimentConfig cfg = load_config(c);
  const std::string hash = config::content_hash(cfg);
  harness::Datasets data;
  for (Channel ch : sensors::kChannels) {
    io::DatasetHeader h;
    data.channels[sensors::index(ch)] =
        io::parse_dataset_csv(io::read_text(data_dir / io::dataset_filename(ch)), &h);
    if (h.channel != ch) throw io::FormatError("dataset file holds channel " + std::string(sensors::channel_name(h.channel)));
    if (h.config_hash != hash)
      spdlog::warn("dataset {} was generated with config {} (current {})", sensors::channel_name(ch),
                   h.config_hash, hash);
  }
  harness::TrainOutcome r = harness::train_all(cfg, data);
  fs::create_directories(out);
  io::write_text(out / "config.ini", config::serialize(cfg));
  int code = kOk;
  for (Channel ch : sensors::kChannels) {
    const int i = sensors::index(ch);
    if (!r.learners[i]) {
      spdlog::error("learner {} diverged: {}", sensors::channel_name(ch), r.errors[i]);
      code = kDiverged;
      continue;
    }
    io::write_text(out / io::checkpoint_filename(ch), io::checkpoint_json(*r.learners[i], cfg));
    io::write_text(out / io::loss_filename(ch), io::loss_csv(*r.learners[i]));
    spdlog::info("learner {}: loss {} -> {}", sensors::channel_name(ch), r.learners[i]->loss_history.front(),
                 r.learners[i]->loss_history.back());
  }
  return code;
}

struct DriveArgs {
  fs::path models, out;
  std::string mode = "ensemble";
  std::string learner = "state";
  std::string schedule = "paper";
  std::string fault_channels;
  int fault_after_laps = 4;
  std::optional<int> laps;
  int runs = 1;
};

harness::Learner load_learner(const fs::path& dir, Channel ch) {
  harness::Learner l = io::parse_checkpoint_json(io::read_text(dir / io::checkpoint_filename(ch)));
  if (l.channel != ch) throw io::FormatError("checkpoint holds channel " + std::string(sensors::channel_name(l.channel)));
  return l;
}

int run_drive(const Common& c, const DriveArgs& a) {
  config::ExperimentConfig cfg = load_config(c);
  const bool ensemble = a.mode == "ensemble";
  const Channel own = sensors::parse_channel(a.learner);

  harness::ScheduledFaults faults;
  if (a.schedule == "paper") {
    faults = harness::build_schedule(cfg);
  } else if (a.schedule == "clean") {
    faults = harness::clean_schedule();
  } else {
    std::vector<Channel> chans = a.fault_channels.empty()
                                     ? std::vector<Channel>{own}
                                     : config::parse_window_label(a.fault_channels);
    faults = harness::fault_after(cfg, chans, a.fault_after_laps);
  }

  std::vector<harness::Learner> learners;
  if (ensemble) {
    for (Channel ch : sensors::kChannels) learners.push_back(load_learner(a.models, ch));
  } else {
    learners.push_back(load_learner(a.models, own));
  }

  fs::create_directories(a.out);
  io::write_text(a.out / "config.ini", config::serialize(cfg));
  int code = kOk;
  for (int r = 0; r < a.runs; ++r) {
    harness::DriveOptions opt;
    opt.lap_budget = a.laps.value_or(cfg.schedule.laps);
    opt.seed = derive_seed(cfg.seed, "run/" + std::to_string(r));
    harness::RunLog log;
    if (ensemble) {
      log = harness::run_ensemble(cfg, {&learners[0], &learners[1], &learners[2]}, faults, opt);
    } else {
      log = harness::run_single_learner(cfg, learners[0], faults, opt);
    }
    const fs::path dir = a.out / ("run-" + std::to_string(r));
    io::write_run(dir, log);
    spdlog::info("run {}: {} after {} laps, t = {} s -> {}", r, harness::outcome_name(log.outcome),
                 log.laps_completed, log.end_time, dir.string());
    if (log.outcome != harness::Outcome::completed) code = kCrash;
  }
  return code;
}

int run_report(const fs::path& run_dir, const fs::path& out) {
  harness::RunLog log = io::read_run(run_dir);
  const fs::path dest = out.empty() ? run_dir : out;
  report::emit_report(dest, log);
  for (const auto& row : report::usage_by_window(log))
    std::cout << row.group << ": state " << row.percent[0] << "%, left " << row.percent[1] << "%, right "
              << row.percent[2] << "% (" << row.steps << " steps)\n";
  for (const auto& w : report::window_responses(log))
    std::cout << w.window << " / " << sensors::channel_name(w.channel) << ": median variance ratio " << w.ratio
              << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ebnn"));

  CLI::App app{"Ensemble Bayesian driving pipeline"};
  app.require_subcommand(1);

  Common common;
  fs::path out, data_dir, run_dir;
  std::optional<int> laps;

  auto* collect = app.add_subcommand("collect", "Drive the expert and record one dataset per channel");
  add_common(collect, common, true);
  collect->add_option("--out", out, "Output directory")->required();
  collect->add_option("--laps", laps, "Laps to record (default collection.laps)");

  auto* train = app.add_subcommand("train", "Train the three learners");
  add_common(train, common, true);
  train->add_option("--data", data_dir, "Dataset directory from collect")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out, "Checkpoint directory")->required();

  DriveArgs drive_args;
  auto* drive = app.add_subcommand("drive", "Closed-loop runs with one learner or the ensemble");
  add_common(drive, common, true);
  drive->add_option("--models", drive_args.models, "Checkpoint directory from train")
      ->required()
      ->check(CLI::ExistingDirectory);
  drive->add_option("--out", drive_args.out, "Output directory; one run-<i> subdirectory per run")->required();
  drive->add_option("--mode", drive_args.mode, "ensemble or single")->check(CLI::IsMember({"ensemble", "single"}));
  drive->add_option("--learner", drive_args.learner, "Learner for single mode")
      ->check(CLI::IsMember({"state", "left", "right"}));
  drive->add_option("--schedule", drive_args.schedule, "paper, clean or fault-after")
      ->check(CLI::IsMember({"paper", "clean", "fault-after"}));
  drive->add_option("--fault", drive_args.fault_channels, "Channels for fault-after, '+'-joined (default: the learner)");
  drive->add_option("--fault-after-laps", drive_args.fault_after_laps, "Clean laps before fault-after starts")
      ->check(CLI::NonNegativeNumber);
  drive->add_option("--laps", drive_args.laps, "Lap budget (default schedule.laps)")->check(CLI::PositiveNumber);
  drive->add_option("--runs", drive_args.runs, "Number of runs with derived seeds")->check(CLI::PositiveNumber);

  auto* rep = app.add_subcommand("report", "Usage tables, trajectory segments and summary of a run");
  rep->add_option("--run", run_dir, "Run directory from drive")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--out", out, "Output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*collect) return run_collect(common, out, laps);
    if (*train) return run_train(common, data_dir, out);
    if (*drive) return run_drive(common, drive_args);
    if (*rep) return run_report(run_dir, out);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const nn::TrainingDiverged& e) {
    spdlog::error("training diverged: {}", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
