#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "ebnn/common.hpp"
#include "ebnn/track.hpp"

namespace ebnn::sensors {

/// One learner per channel: the full-state "GPS" sensor and the two
/// side-looking range arrays standing in for the cameras.
enum class Channel { state = 0, left = 1, right = 2 };
inline constexpr int kChannelCount = 3;
inline constexpr std::array<Channel, kChannelCount> kChannels{Channel::state, Channel::left,
                                                              Channel::right};

std::string_view channel_name(Channel c);
Channel parse_channel(std::string_view name);  // throws ConfigError
inline int index(Channel c) { return static_cast<int>(c); }

enum class Side { left, right };

struct RayConfig {
  int ray_count = 32;
  double fan_angle = 2.0 * kPi / 3.0;  // rad, 120 degrees
  double max_range = 10.0;             // m
  int band_block = 4;                  // rays per gray bar
  int band_stride = 2;                 // every band_stride-th block is corrupted
};

/// Uniform GPS jump annulus, as multiples of half_width outward from the centerline.
struct GpsFaultConfig {
  double min_offset_factor = 1.2;
  double max_offset_factor = 3.0;
};

struct SensorConfig {
  RayConfig rays;
  GpsFaultConfig gps;

  void validate() const;
};

struct StateObservation {
  std::array<double, track::VehicleState::kDim> values{};
};

struct RayObservation {
  std::vector<double> ranges;
};

/// Exact copy when clean. When faulted the position is replaced by a point
/// drawn uniformly (station and offset) outside the outer boundary.
StateObservation observe_state(const track::VehicleState& state, const track::TrackSpec& track,
                               const GpsFaultConfig& fault, bool fault_active, Rng& rng);

/// Fan of rays centered on heading +-90 degrees. The fault overwrites every
/// band_stride-th block of band_block rays with max_range / 2.
RayObservation observe_rays(const track::VehicleState& state, const track::TrackSpec& track,
                            Side side, const RayConfig& config, bool fault_active, Rng& rng);

/// Indices of rays that the banding fault overwrites.
std::vector<int> banded_rays(const RayConfig& config);

struct FaultWindow {
  double start = 0.0;  // s, inclusive
  double end = 0.0;    // s, exclusive
  double duty_cycle = 1.0;
  double burst_period = 1.0;  // s
};

struct FaultSchedule {
  std::array<std::vector<FaultWindow>, kChannelCount> windows;

  void add(Channel c, FaultWindow w);
  void validate() const;  // throws ConfigError on overlap or bad values
  bool in_window(Channel c, double t) const;
};

/// Gate is open for the first duty_cycle fraction of every burst_period,
/// phase measured from the window start. The rng is unused by the
/// deterministic gate.
bool fault_active(const FaultSchedule& schedule, Channel channel, double t, Rng& rng);

}  // namespace ebnn::sensors
