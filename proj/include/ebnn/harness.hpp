#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebnn/config.hpp"
#include "ebnn/ensemble.hpp"
#include "ebnn/nn.hpp"
#include "ebnn/sensors.hpp"
#include "ebnn/track.hpp"

namespace ebnn::harness {

using config::ExperimentConfig;
using sensors::Channel;

/// Raw observation width of a channel: 7 for the state, ray_count otherwise.
int observation_dim(Channel channel, const ExperimentConfig& config);

/// Learner features from raw observations (one per row). The state channel
/// replaces (theta, psi) by (cos theta, sin theta); psi is identically zero
/// in this vehicle model, so the width stays 7. Ray ranges pass unchanged.
Eigen::MatrixXd encode(Channel channel, const Eigen::MatrixXd& raw);

/// One post-step row of a closed-loop trajectory.
struct TrajectoryRow {
  int step = 0;
  double t = 0.0;  // time after the step
  track::VehicleState state;
  track::Control control;
  int lap = 0;  // laps completed after the step
  bool crashed = false;
};

struct ChannelDataset {
  Channel channel = Channel::state;
  Eigen::MatrixXd observations;  // raw, N x observation_dim
  Eigen::MatrixXd controls;      // expert labels, N x 2
};

struct Datasets {
  std::array<ChannelDataset, sensors::kChannelCount> channels;
  std::vector<TrajectoryRow> trajectory;
};

class ExpertCrashed : public std::runtime_error {
 public:
  ExpertCrashed(const std::string& what, std::vector<TrajectoryRow> trajectory)
      : std::runtime_error(what), trajectory(std::move(trajectory)) {}
  std::vector<TrajectoryRow> trajectory;
};

/// Drives the expert from the initial state for `laps` laps and records the clean
/// observations of all three channels with the expert control at every step.
Datasets collect_dataset(const ExperimentConfig& config, int laps);

struct Learner {
  Channel channel = Channel::state;
  nn::BayesianNetwork net;
  std::vector<double> loss_history;
  std::uint64_t seed = 0;
};

/// Sub-seed of a learner's training run.
std::uint64_t training_seed(const ExperimentConfig& config, Channel channel);

/// Fits the input standardizer and trains one learner. Throws
/// nn::TrainingDiverged.
Learner train_learner(const ExperimentConfig& config, const ChannelDataset& data);

struct TrainOutcome {
  std::array<std::optional<Learner>, sensors::kChannelCount> learners;
  std::array<std::string, sensors::kChannelCount> errors;  // divergence diagnostics

  bool all_trained() const;
};

/// Trains the three learners independently (concurrently if configured). A
/// diverging learner is reported without stopping the others.
TrainOutcome train_all(const ExperimentConfig& config, const Datasets& data);

/// A fault window with its human-readable channel label.
struct ScheduledWindow {
  std::string label;
  std::vector<Channel> channels;
  double start = 0.0;
  double end = 0.0;
};

struct ScheduledFaults {
  sensors::FaultSchedule schedule;
  std::vector<ScheduledWindow> windows;

  /// Label of the window covering t, or "clean".
  std::string label_at(double t) const;
};

inline constexpr const char* kCleanLabel = "clean";

/// Clean prefix, then the configured windows separated by clean gaps.
ScheduledFaults build_schedule(const ExperimentConfig& config);

/// Fault on `channels` from `clean_laps` lap times onward, open-ended.
ScheduledFaults fault_after(const ExperimentConfig& config, const std::vector<Channel>& channels,
                            int clean_laps);

/// No faults at all.
ScheduledFaults clean_schedule();

struct DecisionRecord {
  int step = 0;
  double t = 0.0;  // time the observations were taken
  int lap = 0;     // laps completed when deciding
  std::string window;
  std::array<bool, sensors::kChannelCount> fault{};
  std::array<bool, sensors::kChannelCount> active{};  // learner participated
  std::array<bool, sensors::kChannelCount> valid{};
  std::array<std::vector<double>, sensors::kChannelCount> observation;  // raw, as observed
  std::array<track::Control, sensors::kChannelCount> mean{};             // NaN if inactive
  std::array<double, sensors::kChannelCount> epistemic{};
  std::array<double, sensors::kChannelCount> aleatoric{};
  std::array<double, sensors::kChannelCount> total{};
  int selected = -1;
  track::Control control;
};

struct LapEvent {
  int lap = 0;  // laps completed
  int step = 0;
  double t = 0.0;
};

struct FaultEvent {
  Channel channel = Channel::state;
  bool active = false;
  int step = 0;
  double t = 0.0;
};

enum class Outcome { completed, crashed, stalled };
std::string outcome_name(Outcome o);
Outcome parse_outcome(const std::string& name);

struct RunLog {
  std::string mode;  // "ensemble" or "single:<channel>"
  std::uint64_t seed = 0;
  int lap_budget = 0;
  std::vector<ScheduledWindow> windows;
  std::vector<TrajectoryRow> trajectory;
  std::vector<DecisionRecord> decisions;
  std::vector<LapEvent> laps;
  std::vector<FaultEvent> faults;
  Outcome outcome = Outcome::completed;
  int laps_completed = 0;
  double end_time = 0.0;
};

struct DriveOptions {
  int lap_budget = 17;
  std::uint64_t seed = 0;
};

/// One learner's Monte Carlo mean control drives the vehicle.
RunLog run_single_learner(const ExperimentConfig& config, const Learner& learner,
                          const ScheduledFaults& faults, const DriveOptions& options);

/// Minimum-variance selection over the three learners drives the vehicle.
RunLog run_ensemble(const ExperimentConfig& config,
                    const std::array<const Learner*, sensors::kChannelCount>& learners,
                    const ScheduledFaults& faults, const DriveOptions& options);

}  // namespace ebnn::harness
