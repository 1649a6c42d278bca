#include "ebnn/sensors.hpp"

#include <algorithm>
#include <cmath>

namespace ebnn::sensors {

std::string_view channel_name(Channel c) {
  switch (c) {
    case Channel::state: return "state";
    case Channel::left: return "left";
    case Channel::right: return "right";
  }
  return "?";
}

Channel parse_channel(std::string_view name) {
  for (Channel c : kChannels)
    if (channel_name(c) == name) return c;
  throw ConfigError("unknown sensor channel '" + std::string(name) + "'");
}

void SensorConfig::validate() const {
  if (rays.ray_count < 1 || !(rays.fan_angle >= 0.0) || !(rays.max_range > 0.0) ||
      rays.band_block < 1 || rays.band_stride < 1)
    throw ConfigError("sensors: invalid ray configuration");
  if (!(gps.min_offset_factor > 1.0) || !(gps.max_offset_factor >= gps.min_offset_factor))
    throw ConfigError("sensors: GPS fault offsets must lie outside the track (factor > 1)");
}

StateObservation observe_state(const track::VehicleState& state, const track::TrackSpec& track,
                               const GpsFaultConfig& fault, bool fault_active, Rng& rng) {
  StateObservation obs{state.as_array()};
  if (!fault_active) return obs;

  std::uniform_real_distribution<double> station(0.0, track.length());
  std::uniform_real_distribution<double> offset(fault.min_offset_factor * track.half_width,
                                                fault.max_offset_factor * track.half_width);
  const double s = station(rng);
  const double d = offset(rng);
  // Outward is the right-hand normal of the counterclockwise centerline. The
  // oval is symmetric, so the same point set lies outside either direction.
  track::TrackSpec ccw = track;
  ccw.direction = track::Direction::counterclockwise;
  track::CenterlineFrame f = track::centerline_at(s, ccw);
  obs.values[0] = f.nearest_point.x + d * std::sin(f.tangent_heading);
  obs.values[1] = f.nearest_point.y - d * std::cos(f.tangent_heading);
  return obs;
}

std::vector<int> banded_rays(const RayConfig& config) {
  std::vector<int> out;
  for (int i = 0; i < config.ray_count; ++i)
    if ((i / config.band_block) % config.band_stride == 0) out.push_back(i);
  return out;
}

RayObservation observe_rays(const track::VehicleState& state, const track::TrackSpec& track,
                            Side side, const RayConfig& config, bool fault_active, Rng& /*rng*/) {
  const double center = state.theta + (side == Side::left ? kPi / 2.0 : -kPi / 2.0);
  const int n = config.ray_count;
  RayObservation obs;
  obs.ranges.resize(n);
  for (int i = 0; i < n; ++i) {
    double frac = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1) - 0.5;
    double heading = center + frac * config.fan_angle;
    obs.ranges[i] = track::cast_ray({state.p_x, state.p_y}, heading, track, config.max_range);
  }
  if (fault_active)
    for (int i : banded_rays(config)) obs.ranges[i] = 0.5 * config.max_range;
  return obs;
}

void FaultSchedule::add(Channel c, FaultWindow w) { windows[index(c)].push_back(w); }

void FaultSchedule::validate() const {
  for (const auto& list : windows) {
    std::vector<FaultWindow> sorted = list;
    std::sort(sorted.begin(), sorted.end(),
              [](const FaultWindow& a, const FaultWindow& b) { return a.start < b.start; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const FaultWindow& w = sorted[i];
      if (!(w.start >= 0.0) || !(w.end > w.start) || !(w.duty_cycle > 0.0) ||
          !(w.duty_cycle <= 1.0) || !(w.burst_period > 0.0))
        throw ConfigError("fault schedule: invalid window");
      if (i > 0 && sorted[i - 1].end > w.start)
        throw ConfigError("fault schedule: overlapping windows on one channel");
    }
  }
}

bool FaultSchedule::in_window(Channel c, double t) const {
  for (const FaultWindow& w : windows[index(c)])
    if (t >= w.start && t < w.end) return true;
  return false;
}

bool fault_active(const FaultSchedule& schedule, Channel channel, double t, Rng& /*rng*/) {
  for (const FaultWindow& w : schedule.windows[index(channel)]) {
    if (t < w.start || t >= w.end) continue;
    if (w.duty_cycle >= 1.0) return true;
    double phase = std::fmod(t - w.start, w.burst_period);
    return phase < w.duty_cycle * w.burst_period;
  }
  return false;
}

}  // namespace ebnn::sensors
