#include "ebnn/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

#include "ebnn/expert.hpp"

namespace ebnn::harness {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::MatrixXd rows_to_matrix(const std::vector<double>& flat, Eigen::Index cols) {
  const Eigen::Index rows = cols == 0 ? 0 : static_cast<Eigen::Index>(flat.size()) / cols;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = flat[i * cols + j];
  return m;
}

struct RawObservations {
  std::array<Eigen::VectorXd, sensors::kChannelCount> values;
};

RawObservations observe_all(const ExperimentConfig& cfg, const track::VehicleState& x,
                            const std::array<bool, sensors::kChannelCount>& fault,
                            std::array<Rng, sensors::kChannelCount>& rngs) {
  RawObservations o;
  auto st = sensors::observe_state(x, cfg.track, cfg.sensors.gps, fault[0], rngs[0]);
  o.values[0] = Eigen::Map<const Eigen::VectorXd>(st.values.data(), st.values.size());
  auto left = sensors::observe_rays(x, cfg.track, sensors::Side::left, cfg.sensors.rays, fault[1], rngs[1]);
  auto right =
      sensors::observe_rays(x, cfg.track, sensors::Side::right, cfg.sensors.rays, fault[2], rngs[2]);
  o.values[1] = Eigen::Map<const Eigen::VectorXd>(left.ranges.data(), left.ranges.size());
  o.values[2] = Eigen::Map<const Eigen::VectorXd>(right.ranges.data(), right.ranges.size());
  return o;
}

Eigen::VectorXd encode_one(Channel c, const Eigen::VectorXd& raw) {
  return encode(c, raw.transpose()).row(0).transpose();
}

// Signed station change along the direction of travel, wrapped to half a lap.
double station_delta(double prev, double next, double length) {
  double d = next - prev;
  if (d > length / 2) d -= length;
  if (d < -length / 2) d += length;
  return d;
}

RunLog drive(const ExperimentConfig& cfg,
             const std::array<const Learner*, sensors::kChannelCount>& learners, bool ensemble_mode,
             const ScheduledFaults& faults, const DriveOptions& opt, std::string mode) {
  cfg.validate();
  faults.schedule.validate();
  const double dt = cfg.dt;
  const int K = cfg.run.mc_samples;
  const double L = cfg.track.length();

  RunLog log;
  log.mode = std::move(mode);
  log.seed = opt.seed;
  log.lap_budget = opt.lap_budget;
  log.windows = faults.windows;

  Rng gate(derive_seed(opt.seed, "fault-gate"));
  std::array<Rng, sensors::kChannelCount> sensor_rng, mc_rng;
  for (Channel c : sensors::kChannels) {
    std::string name(sensors::channel_name(c));
    sensor_rng[sensors::index(c)] = Rng(derive_seed(opt.seed, "sensor/" + name));
    mc_rng[sensors::index(c)] = Rng(derive_seed(opt.seed, "mc/" + name));
  }

  track::VehicleState x = cfg.initial_state();
  track::LapCounter laps;
  double prev_s = track::project_to_centerline({x.p_x, x.p_y}, cfg.track).s;
  std::array<bool, sensors::kChannelCount> prev_fault{};
  double progress = 0.0, best_progress = 0.0, best_time = 0.0;

  for (int k = 0;; ++k) {
    const double t = k * dt;
    if (laps.laps() >= opt.lap_budget) {
      log.outcome = Outcome::completed;
      break;
    }

    DecisionRecord d;
    d.step = k;
    d.t = t;
    d.lap = laps.laps();
    d.window = faults.label_at(t);
    for (Channel c : sensors::kChannels) {
      const int i = sensors::index(c);
      d.fault[i] = sensors::fault_active(faults.schedule, c, t, gate);
      if (d.fault[i] != prev_fault[i]) log.faults.push_back({c, d.fault[i], k, t});
      prev_fault[i] = d.fault[i];
      d.active[i] = learners[i] != nullptr;
      d.epistemic[i] = d.aleatoric[i] = d.total[i] = kNaN;
      d.mean[i] = {kNaN, kNaN};
    }
    RawObservations raw = observe_all(cfg, x, d.fault, sensor_rng);
    for (int i = 0; i < sensors::kChannelCount; ++i)
      d.observation[i].assign(raw.values[i].data(), raw.values[i].data() + raw.values[i].size());

    if (ensemble_mode) {
      std::array<Eigen::VectorXd, sensors::kChannelCount> obs;
      std::array<const nn::BayesianNetwork*, sensors::kChannelCount> nets;
      for (Channel c : sensors::kChannels) {
        const int i = sensors::index(c);
        obs[i] = encode_one(c, raw.values[i]);
        nets[i] = &learners[i]->net;
      }
      ensemble::EnsembleDecision e;
      try {
        e = ensemble::ensemble_step(obs, nets, K, mc_rng, t, cfg.run.execution);
      } catch (const ensemble::NoValidLearner&) {
        throw NumericError("drive: no learner produced a finite prediction at t=" + format_double(t));
      }
      for (int i = 0; i < sensors::kChannelCount; ++i) {
        d.valid[i] = e.valid[i];
        d.mean[i] = {e.reports[i].mean(0), e.reports[i].mean(1)};
        d.epistemic[i] = e.reports[i].epistemic;
        d.aleatoric[i] = e.reports[i].aleatoric;
        d.total[i] = e.reports[i].total;
      }
      d.selected = e.selected;
      d.control = {e.control(0), e.control(1)};
    } else {
      int i = 0;
      while (learners[i] == nullptr) ++i;
      Channel c = static_cast<Channel>(i);
      auto report = ensemble::decompose(
          ensemble::mc_sample(learners[i]->net, encode_one(c, raw.values[i]), K, mc_rng[i]));
      if (!report.mean.allFinite() || !std::isfinite(report.total))
        throw NumericError("drive: learner " + std::string(sensors::channel_name(c)) +
                           " produced a non-finite prediction at t=" + format_double(t));
      d.valid[i] = true;
      d.mean[i] = {report.mean(0), report.mean(1)};
      d.epistemic[i] = report.epistemic;
      d.aleatoric[i] = report.aleatoric;
      d.total[i] = report.total;
      d.selected = i;
      d.control = track::Control{report.mean(0), report.mean(1)}.clamped();
    }
    log.decisions.push_back(d);

    x = track::step_dynamics(x, d.control, dt, cfg.vehicle);
    const double s = track::project_to_centerline({x.p_x, x.p_y}, cfg.track).s;
    const int before = laps.laps();
    laps.update(prev_s, s, cfg.track);
    progress += station_delta(prev_s, s, L);
    prev_s = s;
    const bool crashed = track::is_crashed(x, cfg.track);
    log.trajectory.push_back({k, t + dt, x, d.control, laps.laps(), crashed});
    if (laps.laps() > before) log.laps.push_back({laps.laps(), k, t + dt});
    log.end_time = t + dt;

    if (crashed) {
      log.outcome = Outcome::crashed;
      break;
    }
    if (progress > best_progress) {
      best_progress = progress;
      best_time = t + dt;
    }
    if (t + dt - best_time > cfg.run.stall_timeout) {
      log.outcome = Outcome::stalled;
      break;
    }
  }
  log.laps_completed = laps.laps();
  return log;
}

}  // namespace

int observation_dim(Channel channel, const ExperimentConfig& config) {
  return channel == Channel::state ? track::VehicleState::kDim : config.sensors.rays.ray_count;
}

Eigen::MatrixXd encode(Channel channel, const Eigen::MatrixXd& raw) {
  if (channel != Channel::state) return raw;
  if (raw.cols() != track::VehicleState::kDim)
    throw std::invalid_argument("encode: state observations must have 7 columns");
  Eigen::MatrixXd out = raw;
  out.col(2) = raw.col(2).array().cos().matrix();
  out.col(3) = raw.col(2).array().sin().matrix();
  return out;
}

Datasets collect_dataset(const ExperimentConfig& cfg, int laps) {
  cfg.validate();
  if (laps < 0) throw ConfigError("collect: laps must be >= 0");
  const double dt = cfg.dt;
  const int R = cfg.sensors.rays.ray_count;
  ddp::MpcController expert(cfg.track, cfg.vehicle, cfg.cost, cfg.solver_config());
  Rng noise_rng(derive_seed(cfg.seed, "collection/noise"));
  std::array<Rng, sensors::kChannelCount> sensor_rng;
  for (Channel c : sensors::kChannels)
    sensor_rng[sensors::index(c)] =
        Rng(derive_seed(cfg.seed, "collection/sensor/" + std::string(sensors::channel_name(c))));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a = std::exp(-dt / cfg.collection.noise_time_constant);
  const double b = std::sqrt(1.0 - a * a);
  double n_steer = 0.0, n_throttle = 0.0;

  Datasets out;
  std::array<std::vector<double>, sensors::kChannelCount> flat;
  std::vector<double> labels;
  track::VehicleState x = cfg.initial_state();
  track::LapCounter counter;
  double prev_s = 0.0;
  const int max_steps = static_cast<int>(std::ceil(laps * cfg.lap_time() * 10.0 / dt)) + 1;
  for (int k = 0; counter.laps() < laps; ++k) {
    if (k >= max_steps)
      throw ExpertCrashed("collect: expert made no lap progress within the step limit",
                          std::move(out.trajectory));
    RawObservations raw = observe_all(cfg, x, {false, false, false}, sensor_rng);
    track::Control label = expert.act(x);
    n_steer = a * n_steer + b * cfg.collection.steering_noise * normal(noise_rng);
    n_throttle = a * n_throttle + b * cfg.collection.throttle_noise * normal(noise_rng);
    track::Control executed =
        track::Control{label.steering + n_steer, label.throttle + n_throttle}.clamped();

    for (int i = 0; i < sensors::kChannelCount; ++i)
      flat[i].insert(flat[i].end(), raw.values[i].data(), raw.values[i].data() + raw.values[i].size());
    labels.push_back(label.steering);
    labels.push_back(label.throttle);

    x = track::step_dynamics(x, executed, dt, cfg.vehicle);
    const double s = track::project_to_centerline({x.p_x, x.p_y}, cfg.track).s;
    counter.update(prev_s, s, cfg.track);
    prev_s = s;
    const bool crashed = track::is_crashed(x, cfg.track);
    out.trajectory.push_back({k, (k + 1) * dt, x, executed, counter.laps(), crashed});
    if (crashed)
      throw ExpertCrashed("collect: expert crashed at t=" + format_double((k + 1) * dt),
                          std::move(out.trajectory));
  }
  for (Channel c : sensors::kChannels) {
    const int i = sensors::index(c);
    out.channels[i].channel = c;
    out.channels[i].observations = rows_to_matrix(flat[i], i == 0 ? track::VehicleState::kDim : R);
    out.channels[i].controls = rows_to_matrix(labels, 2);
  }
  return out;
}

std::uint64_t training_seed(const ExperimentConfig& config, Channel channel) {
  return derive_seed(config.seed, "train/" + std::string(sensors::channel_name(channel)));
}

Learner train_learner(const ExperimentConfig& cfg, const ChannelDataset& data) {
  const int i = sensors::index(data.channel);
  if (data.observations.rows() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.observations.cols() != observation_dim(data.channel, cfg))
    throw std::invalid_argument("train: dataset width does not match the configured channel");
  Learner l;
  l.channel = data.channel;
  l.seed = training_seed(cfg, data.channel);
  Eigen::MatrixXd features = encode(data.channel, data.observations);
  l.net.input_norm = nn::Standardizer::fit(features);
  nn::TrainBatch batch{l.net.input_norm.apply(features), data.controls};
  nn::TrainResult r =
      nn::train(cfg.learners[i].spec(static_cast<int>(features.cols())), batch, cfg.learners[i].train, l.seed);
  l.net.params = std::move(r.params);
  l.loss_history = std::move(r.loss_history);
  return l;
}

bool TrainOutcome::all_trained() const {
  return std::all_of(learners.begin(), learners.end(), [](const auto& l) { return l.has_value(); });
}

TrainOutcome train_all(const ExperimentConfig& cfg, const Datasets& data) {
  TrainOutcome out;
  auto job = [&](int i) -> std::optional<Learner> {
    try {
      return train_learner(cfg, data.channels[i]);
    } catch (const nn::TrainingDiverged& e) {
      out.errors[i] = e.what();
      spdlog::error("learner {} diverged: {}", sensors::channel_name(static_cast<Channel>(i)), e.what());
      return std::nullopt;
    }
  };
  if (cfg.run.concurrent_training) {
    std::array<std::future<std::optional<Learner>>, sensors::kChannelCount> jobs;
    for (int i = 0; i < sensors::kChannelCount; ++i) jobs[i] = std::async(std::launch::async, job, i);
    for (int i = 0; i < sensors::kChannelCount; ++i) out.learners[i] = jobs[i].get();
  } else {
    for (int i = 0; i < sensors::kChannelCount; ++i) out.learners[i] = job(i);
  }
  return out;
}

std::string ScheduledFaults::label_at(double t) const {
  for (const ScheduledWindow& w : windows)
    if (t >= w.start && t < w.end) return w.label;
  return kCleanLabel;
}

ScheduledFaults build_schedule(const ExperimentConfig& cfg) {
  const auto& s = cfg.schedule;
  const double lap = cfg.lap_time();
  ScheduledFaults out;
  for (std::size_t w = 0; w < s.windows.size(); ++w) {
    const int first = s.clean_prefix_laps + static_cast<int>(w) * (s.window_laps + s.gap_laps);
    ScheduledWindow win;
    win.channels = s.windows[w];
    win.label = config::window_label(win.channels);
    win.start = first * lap;
    win.end = (first + s.window_laps) * lap;
    for (Channel c : win.channels) out.schedule.add(c, {win.start, win.end, s.duty_cycle, s.burst_period});
    out.windows.push_back(std::move(win));
  }
  out.schedule.validate();
  return out;
}

ScheduledFaults fault_after(const ExperimentConfig& cfg, const std::vector<Channel>& channels,
                            int clean_laps) {
  ScheduledFaults out;
  ScheduledWindow win;
  win.channels = channels;
  win.label = config::window_label(channels);
  win.start = clean_laps * cfg.lap_time();
  win.end = std::numeric_limits<double>::infinity();
  for (Channel c : channels)
    out.schedule.add(c, {win.start, win.end, cfg.schedule.duty_cycle, cfg.schedule.burst_period});
  out.windows.push_back(std::move(win));
  out.schedule.validate();
  return out;
}

ScheduledFaults clean_schedule() { return {}; }

std::string outcome_name(Outcome o) {
  switch (o) {
    case Outcome::completed:
      return "completed";
    case Outcome::crashed:
      return "crashed";
    case Outcome::stalled:
      return "stalled";
  }
  return "unknown";
}

Outcome parse_outcome(const std::string& name) {
  if (name == "completed") return Outcome::completed;
  if (name == "crashed") return Outcome::crashed;
  if (name == "stalled") return Outcome::stalled;
  throw std::invalid_argument("unknown run outcome '" + name + "'");
}

RunLog run_single_learner(const ExperimentConfig& config, const Learner& learner,
                          const ScheduledFaults& faults, const DriveOptions& options) {
  std::array<const Learner*, sensors::kChannelCount> set{};
  set[sensors::index(learner.channel)] = &learner;
  return drive(config, set, false, faults, options,
               "single:" + std::string(sensors::channel_name(learner.channel)));
}

RunLog run_ensemble(const ExperimentConfig& config,
                    const std::array<const Learner*, sensors::kChannelCount>& learners,
                    const ScheduledFaults& faults, const DriveOptions& options) {
  for (int i = 0; i < sensors::kChannelCount; ++i)
    if (learners[i] == nullptr || learners[i]->channel != static_cast<Channel>(i))
      throw std::invalid_argument("run_ensemble: need the state, left and right learners in order");
  return drive(config, learners, true, faults, options, "ensemble");
}

}  // namespace ebnn::harness
