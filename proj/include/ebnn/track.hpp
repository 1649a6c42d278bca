#pragma once

#include <array>

namespace ebnn::track {

enum class Direction { counterclockwise, clockwise };

/// Oval (stadium) track: two straights joined by semicircular ends.
///
/// Arc centers sit at (+-straight_length/2, 0). The centerline station s
/// always increases in the driving direction; s = 0 is the start of the
/// straight that is driven in the +x direction.
struct TrackSpec {
  double straight_length = 10.0;  // m
  double turn_radius = 3.0;       // m, centerline radius of each end
  double half_width = 1.5;        // m, centerline to boundary
  Direction direction = Direction::counterclockwise;

  void validate() const;
  double length() const;
};

/// Kinematic bicycle parameters.
struct VehicleParams {
  double wheelbase = 0.57;     // m
  double max_steer = 0.35;     // rad, steering = +-1 maps to +-max_steer
  double max_speed = 8.0;      // m/s, throttle = 1 target speed
  double velocity_tau = 0.6;   // s, first-order speed lag; +inf disables the lag

  void validate() const;
};

/// [p_x, p_y, theta, psi, V_x, V_y, theta_dot].
struct VehicleState {
  double p_x = 0.0;
  double p_y = 0.0;
  double theta = 0.0;
  double psi = 0.0;
  double V_x = 0.0;
  double V_y = 0.0;
  double theta_dot = 0.0;

  static constexpr int kDim = 7;
  std::array<double, kDim> as_array() const {
    return {p_x, p_y, theta, psi, V_x, V_y, theta_dot};
  }
  static VehicleState from_array(const std::array<double, kDim>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  }
  bool operator==(const VehicleState&) const = default;
};

struct Control {
  double steering = 0.0;
  double throttle = 0.0;

  Control clamped() const;
  bool operator==(const Control&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct CenterlineFrame {
  double s = 0.0;               // station in [0, length)
  double lateral_offset = 0.0;  // positive toward the driver's left
  Point nearest_point;
  double tangent_heading = 0.0;
};

/// Advances the bicycle model by dt. Speed relaxes exponentially toward
/// throttle * max_speed; the heading and position are integrated in closed
/// form for the constant-curvature arc over the step, so constant inputs
/// trace an exact circle of radius wheelbase / tan(delta).
/// Throws NumericError on non-finite input.
VehicleState step_dynamics(const VehicleState& state, const Control& control, double dt,
                           const VehicleParams& params);

/// Exact nearest point on the centerline. Equal distances resolve to the
/// smallest station.
CenterlineFrame project_to_centerline(Point p, const TrackSpec& track);

/// Centerline point and tangent heading at a station (wrapped into range).
CenterlineFrame centerline_at(double s, const TrackSpec& track);

/// True strictly outside the boundary; |offset| == half_width is still on track.
bool is_crashed(const VehicleState& state, const TrackSpec& track);

/// Vehicle at rest on the centerline at station s, facing along the track.
VehicleState start_state(const TrackSpec& track, double s = 0.0);

/// Lap counting with a half-track arming window. A wrap through s = 0 is
/// counted only after the vehicle has advanced through the half-track
/// station since the previous count, so projection jitter around s = 0
/// cannot double count.
class LapCounter {
 public:
  explicit LapCounter(int laps = 0, bool armed = false) : laps_(laps), armed_(armed) {}

  int update(double prev_s, double new_s, const TrackSpec& track);
  int laps() const { return laps_; }
  bool armed() const { return armed_; }

 private:
  int laps_;
  bool armed_;
};

/// Stateless wrap rule: +1 when the station jumps forward through s = 0
/// from the back half of the track, unchanged otherwise (including
/// backward jitter across s = 0).
int update_lap_count(double prev_s, double new_s, const TrackSpec& track, int laps);

/// Distance along a ray from `origin` in direction `heading` to the first
/// inner or outer boundary, clamped to max_range.
double cast_ray(Point origin, double heading, const TrackSpec& track, double max_range);

}  // namespace ebnn::track
