#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ebnn/ensemble.hpp"
#include "ebnn/expert.hpp"
#include "ebnn/nn.hpp"
#include "ebnn/sensors.hpp"
#include "ebnn/track.hpp"

namespace ebnn::config {

inline constexpr int kSchemaVersion = 1;

/// Expert rollouts used as imitation data. The executed control may carry
/// Ornstein-Uhlenbeck exploration noise; the recorded label is always the
/// expert's own control.
struct CollectionConfig {
  int laps = 20;
  double steering_noise = 0.15;  // stationary std of the executed perturbation
  double throttle_noise = 0.1;
  double noise_time_constant = 0.5;  // s

  void validate() const;
};

struct LearnerConfig {
  std::vector<int> hidden_widths{128, 128, 64};
  double dropout_rate = 0.1;
  nn::DropoutMode dropout_mode = nn::DropoutMode::fixed;
  double concrete_temperature = 0.1;
  nn::TrainConfig train;

  nn::MlpSpec spec(int input_dim) const;
  void validate() const;
};

/// Lap-structured fault windows: a clean prefix, then one window per entry
/// of `windows` separated by clean gaps. Converted to seconds with lap_time.
struct ScheduleConfig {
  int laps = 17;
  int clean_prefix_laps = 4;
  int window_laps = 2;
  int gap_laps = 2;
  std::vector<std::vector<sensors::Channel>> windows{
      {sensors::Channel::state}, {sensors::Channel::left}, {sensors::Channel::left, sensors::Channel::right}};
  double lap_time = 0.0;  // s; 0 means track length / v_des
  double duty_cycle = 0.7;
  double burst_period = 1.0;  // s

  void validate() const;
};

struct RunConfig {
  int mc_samples = ensemble::kDefaultMcSamples;
  ensemble::Execution execution = ensemble::Execution::concurrent;
  double stall_timeout = 15.0;  // s without forward progress ends a run
  bool concurrent_training = true;

  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  track::TrackSpec track;
  track::VehicleParams vehicle;
  double dt = 0.05;
  double start_speed = 5.0;  // m/s, initial V_x of every rollout
  ddp::CostConfig cost;
  ddp::DdpConfig ddp;
  sensors::SensorConfig sensors;
  CollectionConfig collection;
  std::array<LearnerConfig, sensors::kChannelCount> learners;
  ScheduleConfig schedule;
  RunConfig run;

  ExperimentConfig();
  void validate() const;  // throws ConfigError

  /// Solver settings with the simulation step.
  ddp::DdpConfig solver_config() const;
  double lap_time() const;
  /// Centerline pose at s = 0 moving at start_speed.
  track::VehicleState initial_state() const;
};

/// Parses INI text over the defaults, then applies `key=value` overrides
/// (keys are `section.name`). Unknown sections or keys are rejected.
ExperimentConfig parse(const std::string& ini_text,
                       const std::vector<std::pair<std::string, std::string>>& overrides = {});

ExperimentConfig load(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Splits "section.key=value".
std::pair<std::string, std::string> split_override(const std::string& text);

/// Canonical INI text: every key, fixed order, shortest round-trip numbers.
std::string serialize(const ExperimentConfig& config);

/// Git blob SHA-1 of the canonical serialization.
std::string content_hash(const ExperimentConfig& config);

std::string window_label(const std::vector<sensors::Channel>& channels);
std::vector<sensors::Channel> parse_window_label(const std::string& label);

}  // namespace ebnn::config
