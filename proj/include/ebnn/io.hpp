#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebnn/config.hpp"
#include "ebnn/harness.hpp"

namespace ebnn::io {

namespace fs = std::filesystem;

/// Malformed or mismatched file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

std::string read_text(const fs::path& path);
/// Writes atomically enough for a single writer: temp file, then rename.
void write_text(const fs::path& path, const std::string& text);

struct DatasetHeader {
  sensors::Channel channel = sensors::Channel::state;
  int dims = 0;
  std::string units;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// One row per step: raw observation columns, then steering and throttle.
/// Comment lines carry channel, dims, units, generator seed and config hash.
std::string dataset_csv(const harness::ChannelDataset& data, const config::ExperimentConfig& config);
harness::ChannelDataset parse_dataset_csv(const std::string& text, DatasetHeader* header = nullptr);

std::string dataset_filename(sensors::Channel channel);
std::string checkpoint_filename(sensors::Channel channel);
std::string loss_filename(sensors::Channel channel);

/// Versioned JSON: spec, input standardization, flat parameters, seed,
/// loss history and config hash.
std::string checkpoint_json(const harness::Learner& learner, const config::ExperimentConfig& config);
harness::Learner parse_checkpoint_json(const std::string& text, std::string* config_hash = nullptr);

std::string loss_csv(const harness::Learner& learner);

/// step,t,p_x,p_y,theta,V_x,V_y,theta_dot,steering,throttle,lap,crashed
std::string trajectory_csv(const std::vector<harness::TrajectoryRow>& rows);
std::vector<harness::TrajectoryRow> parse_trajectory_csv(const std::string& text);

/// One JSON object per line: run_start, then per step any fault toggles,
/// the decision, a lap event and a crash event, then end.
std::string events_jsonl(const harness::RunLog& log);
/// Everything but the trajectory, which lives in its own CSV.
harness::RunLog parse_events_jsonl(const std::string& text);

/// Run directory layout shared by the CLI and the report.
inline constexpr const char* kTrajectoryFile = "trajectory.csv";
inline constexpr const char* kEventsFile = "events.jsonl";

void write_run(const fs::path& dir, const harness::RunLog& log);
harness::RunLog read_run(const fs::path& dir);

}  // namespace ebnn::io
