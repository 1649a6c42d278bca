#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "ebnn/config.hpp"
#include "ebnn/harness.hpp"
#include "ebnn/io.hpp"
#include "ebnn/report.hpp"

using namespace ebnn;
using harness::Channel;
namespace fs = std::filesystem;

namespace {

config::ExperimentConfig small_config(std::uint64_t seed) {
  std::vector<std::pair<std::string, std::string>> ov;
  for (const char* l : {"learner_state", "learner_left", "learner_right"}) {
    ov.push_back({std::string(l) + ".hidden_widths", "16,16"});
    ov.push_back({std::string(l) + ".epochs", "5"});
  }
  ov.push_back({"run.mc_samples", "10"});
  config::ExperimentConfig c = config::parse("", ov);
  c.seed = seed;
  return c;
}

struct Fixture {
  config::ExperimentConfig cfg = small_config(11);
  harness::Datasets data = harness::collect_dataset(cfg, 1);
  harness::TrainOutcome trained = harness::train_all(cfg, data);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

harness::DecisionRecord pick(int step, int lap, int selected, const std::string& window = harness::kCleanLabel) {
  harness::DecisionRecord d;
  d.step = step;
  d.t = 0.05 * step;
  d.lap = lap;
  d.window = window;
  d.selected = selected;
  d.total = {1.0, 2.0, 3.0};
  return d;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("ebnn_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Encode, ReplacesHeadingBySinCos) {
  Eigen::MatrixXd raw(1, 7);
  raw << 1, 2, 0.5, 0, 3, 0, 0.1;
  Eigen::MatrixXd e = harness::encode(Channel::state, raw);
  EXPECT_DOUBLE_EQ(e(0, 2), std::cos(0.5));
  EXPECT_DOUBLE_EQ(e(0, 3), std::sin(0.5));
  EXPECT_DOUBLE_EQ(e(0, 4), 3);
  Eigen::MatrixXd rays = Eigen::MatrixXd::Random(2, 32);
  EXPECT_EQ(harness::encode(Channel::left, rays), rays);
}

TEST(Collect, ZeroLapsGivesEmptyDatasetsWithHeaders) {
  config::ExperimentConfig cfg = small_config(3);
  harness::Datasets d = harness::collect_dataset(cfg, 0);
  for (const auto& ch : d.channels) {
    EXPECT_EQ(ch.observations.rows(), 0);
    EXPECT_EQ(ch.observations.cols(), harness::observation_dim(ch.channel, cfg));
    io::DatasetHeader h;
    harness::ChannelDataset back = io::parse_dataset_csv(io::dataset_csv(ch, cfg), &h);
    EXPECT_EQ(back.observations.rows(), 0);
    EXPECT_EQ(h.channel, ch.channel);
    EXPECT_EQ(h.dims, harness::observation_dim(ch.channel, cfg));
  }
  EXPECT_THROW(harness::collect_dataset(cfg, -1), ConfigError);
}

TEST(Collect, OneLapHasExpectedRowsAndBoundedLabels) {
  const Fixture& f = fixture();
  const double expected = f.cfg.lap_time() / f.cfg.dt;
  for (const auto& ch : f.data.channels) {
    const double n = static_cast<double>(ch.observations.rows());
    EXPECT_NEAR(n, expected, 0.1 * expected) << sensors::channel_name(ch.channel);
    EXPECT_EQ(ch.controls.rows(), ch.observations.rows());
    EXPECT_LE(ch.controls.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_TRUE(ch.observations.allFinite());
  }
  EXPECT_EQ(f.data.trajectory.back().lap, 1);
  EXPECT_FALSE(f.data.trajectory.back().crashed);
}

TEST(Train, InputDimsAndLossDecrease) {
  const Fixture& f = fixture();
  ASSERT_TRUE(f.trained.all_trained());
  for (Channel c : sensors::kChannels) {
    const auto& l = *f.trained.learners[sensors::index(c)];
    EXPECT_EQ(l.channel, c);
    EXPECT_EQ(l.net.spec().input_dim, c == Channel::state ? 7 : 32);
    ASSERT_GE(l.loss_history.size(), 2u);
    EXPECT_LT(l.loss_history.back(), l.loss_history.front()) << sensors::channel_name(c);
  }
}

TEST(Determinism, RepeatedStagesAreByteIdentical) {
  const Fixture& f = fixture();
  harness::Datasets again = harness::collect_dataset(f.cfg, 1);
  for (Channel c : sensors::kChannels) {
    const int i = sensors::index(c);
    EXPECT_EQ(io::dataset_csv(again.channels[i], f.cfg), io::dataset_csv(f.data.channels[i], f.cfg));
  }
  harness::Learner l = harness::train_learner(f.cfg, f.data.channels[1]);
  EXPECT_EQ(io::checkpoint_json(l, f.cfg), io::checkpoint_json(*f.trained.learners[1], f.cfg));

  harness::DriveOptions opt;
  opt.lap_budget = 1;
  opt.seed = 99;
  auto faults = harness::build_schedule(f.cfg);
  std::array<const harness::Learner*, 3> ls{&*f.trained.learners[0], &*f.trained.learners[1],
                                            &*f.trained.learners[2]};
  auto a = harness::run_ensemble(f.cfg, ls, faults, opt);
  auto b = harness::run_ensemble(f.cfg, ls, faults, opt);
  EXPECT_EQ(io::events_jsonl(a), io::events_jsonl(b));
  EXPECT_EQ(io::trajectory_csv(a.trajectory), io::trajectory_csv(b.trajectory));
}

TEST(Isolation, OtherChannelFaultDoesNotAffectSingleLearner) {
  const Fixture& f = fixture();
  harness::DriveOptions opt;
  opt.lap_budget = 1;
  opt.seed = 5;
  const harness::Learner& state = *f.trained.learners[0];
  auto clean = harness::run_single_learner(f.cfg, state, harness::clean_schedule(), opt);
  auto other = harness::run_single_learner(
      f.cfg, state, harness::fault_after(f.cfg, {Channel::left, Channel::right}, 0), opt);
  EXPECT_EQ(io::trajectory_csv(clean.trajectory), io::trajectory_csv(other.trajectory));
  EXPECT_EQ(clean.outcome, other.outcome);
}

TEST(Io, DatasetRoundTrip) {
  const Fixture& f = fixture();
  for (const auto& ch : f.data.channels) {
    io::DatasetHeader h;
    const std::string text = io::dataset_csv(ch, f.cfg);
    harness::ChannelDataset back = io::parse_dataset_csv(text, &h);
    EXPECT_EQ(back.observations, ch.observations);
    EXPECT_EQ(back.controls, ch.controls);
    EXPECT_EQ(h.config_hash, config::content_hash(f.cfg));
    EXPECT_EQ(io::dataset_csv(back, f.cfg), text);
  }
  EXPECT_THROW(io::parse_dataset_csv("garbage"), io::FormatError);
}

TEST(Io, CheckpointRoundTrip) {
  const Fixture& f = fixture();
  const harness::Learner& l = *f.trained.learners[2];
  std::string hash;
  harness::Learner back = io::parse_checkpoint_json(io::checkpoint_json(l, f.cfg), &hash);
  EXPECT_EQ(hash, config::content_hash(f.cfg));
  EXPECT_EQ(back.channel, l.channel);
  EXPECT_EQ(back.seed, l.seed);
  EXPECT_EQ(back.loss_history, l.loss_history);
  EXPECT_EQ(io::checkpoint_json(back, f.cfg), io::checkpoint_json(l, f.cfg));
  EXPECT_THROW(io::parse_checkpoint_json("{\"format\":\"other\"}"), io::FormatError);
}

TEST(Io, RunDirectoryRoundTrip) {
  const Fixture& f = fixture();
  harness::DriveOptions opt;
  opt.lap_budget = 1;
  opt.seed = 8;
  std::array<const harness::Learner*, 3> ls{&*f.trained.learners[0], &*f.trained.learners[1],
                                            &*f.trained.learners[2]};
  auto log = harness::run_ensemble(f.cfg, ls, harness::build_schedule(f.cfg), opt);
  fs::path dir = temp_dir("run");
  io::write_run(dir, log);
  auto back = io::read_run(dir);
  EXPECT_EQ(io::events_jsonl(back), io::events_jsonl(log));
  EXPECT_EQ(io::trajectory_csv(back.trajectory), io::trajectory_csv(log.trajectory));
  const bool crash_row = std::any_of(back.trajectory.begin(), back.trajectory.end(),
                                     [](const auto& r) { return r.crashed; });
  EXPECT_EQ(crash_row, back.outcome == harness::Outcome::crashed);
  fs::remove_all(dir);
}

TEST(Io, CrashFlagMustMatchEvents) {
  harness::RunLog log;
  log.mode = "ensemble";
  log.lap_budget = 1;
  log.decisions = {pick(0, 0, 0)};
  harness::TrajectoryRow row;
  row.t = 0.05;
  row.crashed = true;
  log.trajectory = {row};
  log.outcome = harness::Outcome::completed;
  fs::path dir = temp_dir("crashflag");
  io::write_run(dir, log);
  EXPECT_THROW(io::read_run(dir), io::FormatError);
  fs::remove_all(dir);
}

TEST(Report, UsageTableCountsSelections) {
  harness::RunLog log;
  log.decisions = {pick(0, 0, 0), pick(1, 0, 0), pick(2, 0, 0), pick(3, 0, 1)};
  auto t = report::usage_by_lap(log);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].group, "1");
  EXPECT_EQ(t[0].steps, 4);
  EXPECT_DOUBLE_EQ(t[0].percent[0], 75.0);
  EXPECT_DOUBLE_EQ(t[0].percent[1], 25.0);
  EXPECT_DOUBLE_EQ(t[0].percent[2], 0.0);
}

TEST(Report, UsageIsPermutationEquivariantAndSumsToHundred) {
  harness::RunLog log;
  for (int k = 0; k < 30; ++k) log.decisions.push_back(pick(k, k / 10, (k * 7) % 3, k < 15 ? "clean" : "left"));
  harness::RunLog relabeled = log;
  for (auto& d : relabeled.decisions) d.selected = (d.selected + 1) % 3;
  auto a = report::usage_by_window(log);
  auto b = report::usage_by_window(relabeled);
  ASSERT_EQ(a.size(), 2u);
  ASSERT_EQ(b.size(), 2u);
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(b[r].percent[(i + 1) % 3], a[r].percent[i]);
    EXPECT_NEAR(std::accumulate(a[r].percent.begin(), a[r].percent.end(), 0.0), 100.0, 0.1);
  }
  for (const auto& row : report::usage_by_lap(log))
    EXPECT_NEAR(std::accumulate(row.percent.begin(), row.percent.end(), 0.0), 100.0, 0.1);
}

TEST(Report, EmptyLapIsExcluded) {
  harness::RunLog log;
  log.decisions = {pick(0, 0, 0), pick(1, 2, 1)};
  auto t = report::usage_by_lap(log);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].group, "1");
  EXPECT_EQ(t[1].group, "3");
}

TEST(Report, SegmentsSplitOnSelectionAndLap) {
  harness::RunLog log;
  const int sel[] = {0, 0, 1, 1, 1, 0};
  const int lap[] = {0, 0, 0, 1, 1, 1};
  for (int k = 0; k < 6; ++k) {
    log.decisions.push_back(pick(k, lap[k], sel[k]));
    harness::TrajectoryRow r;
    r.step = k;
    r.t = 0.05 * (k + 1);
    r.lap = lap[k];
    log.trajectory.push_back(r);
  }
  auto segs = report::segments(log);
  ASSERT_EQ(segs.size(), 4u);
  EXPECT_EQ(segs[0].rows.size(), 2u);
  EXPECT_EQ(segs[1].learner, 1);
  EXPECT_EQ(segs[1].lap, 1);
  EXPECT_EQ(segs[2].lap, 2);
  EXPECT_EQ(segs[3].learner, 0);

  std::vector<harness::TrajectoryRow> joined;
  for (const auto& s : segs) joined.insert(joined.end(), s.rows.begin(), s.rows.end());
  EXPECT_EQ(io::trajectory_csv(joined), io::trajectory_csv(log.trajectory));

  harness::RunLog one;
  for (int k = 0; k < 5; ++k) {
    one.decisions.push_back(pick(k, 0, 2));
    harness::TrajectoryRow r;
    r.step = k;
    one.trajectory.push_back(r);
  }
  EXPECT_EQ(report::segments(one).size(), 1u);
}

TEST(Report, SegmentsCsvDropsNothing) {
  const Fixture& f = fixture();
  harness::DriveOptions opt;
  opt.lap_budget = 1;
  opt.seed = 2;
  std::array<const harness::Learner*, 3> ls{&*f.trained.learners[0], &*f.trained.learners[1],
                                            &*f.trained.learners[2]};
  auto log = harness::run_ensemble(f.cfg, ls, harness::clean_schedule(), opt);
  std::istringstream csv(report::segments_csv(report::segments(log)));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(log.trajectory.size()));
}

TEST(Report, Quantiles) {
  auto q = report::quantiles({4, 1, 3, 2, 5, std::nan("")});
  EXPECT_EQ(q.count, 5);
  EXPECT_DOUBLE_EQ(q.q50, 3.0);
  EXPECT_DOUBLE_EQ(q.q25, 2.0);
  EXPECT_DOUBLE_EQ(q.q05, 1.2);
  EXPECT_TRUE(std::isnan(report::quantiles({}).q50));
}

TEST(Report, WindowResponseRatio) {
  harness::RunLog log;
  log.windows = {{"left", {Channel::left}, 1.0, 2.0}};
  for (int k = 0; k < 4; ++k) log.decisions.push_back(pick(k, 0, 0));
  for (int k = 4; k < 8; ++k) {
    auto d = pick(k, 0, 0, "left");
    d.total[1] = 20.0;
    log.decisions.push_back(d);
  }
  auto r = report::window_responses(log);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r[0].ratio, 10.0);
  EXPECT_DOUBLE_EQ(r[0].clean_usage, 0.0);
  EXPECT_EQ(r[0].steps, 4);
}

TEST(Io, AllChannelsFaultedLogStaysWellFormed) {
  const Fixture& f = fixture();
  harness::DriveOptions opt;
  opt.lap_budget = 2;
  opt.seed = 4;
  std::array<const harness::Learner*, 3> ls{&*f.trained.learners[0], &*f.trained.learners[1],
                                            &*f.trained.learners[2]};
  config::ExperimentConfig cfg = f.cfg;
  cfg.schedule.duty_cycle = 1.0;
  auto faults = harness::fault_after(cfg, {Channel::state, Channel::left, Channel::right}, 0);
  auto log = harness::run_ensemble(cfg, ls, faults, opt);
  fs::path dir = temp_dir("allfault");
  io::write_run(dir, log);
  auto back = io::read_run(dir);
  EXPECT_EQ(back.outcome, log.outcome);
  EXPECT_EQ(io::events_jsonl(back), io::events_jsonl(log));
  for (const auto& d : back.decisions) EXPECT_EQ(d.fault, (std::array<bool, 3>{true, true, true}));
  fs::remove_all(dir);
}
