#include "ebnn/track.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ebnn/common.hpp"

namespace ebnn::track {
namespace {

bool finite(const VehicleState& s) {
  for (double v : s.as_array())
    if (!std::isfinite(v)) return false;
  return true;
}

double sinc(double x) {
  if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

// Nearest-point search on the counterclockwise canonical oval.
struct Candidate {
  double dist;
  double s;
  Point q;
  double heading;
};

constexpr double kTieTolerance = 1e-12;

void consider(Candidate& best, const Candidate& c) {
  if (c.dist < best.dist - kTieTolerance ||
      (std::abs(c.dist - best.dist) <= kTieTolerance && c.s < best.s)) {
    best = c;
  }
}

Candidate nearest_on_straight(Point p, double y, double half, bool forward, double s0) {
  double x = std::clamp(p.x, -half, half);
  double s = forward ? s0 + (x + half) : s0 + (half - x);
  return {std::hypot(p.x - x, p.y - y), s, {x, y}, forward ? 0.0 : kPi};
}

Candidate nearest_on_arc(Point p, Point c, double radius, double start_angle, double s0) {
  auto at = [&](double rel) {
    double a = start_angle + rel;
    Point q{c.x + radius * std::cos(a), c.y + radius * std::sin(a)};
    return Candidate{std::hypot(p.x - q.x, p.y - q.y), s0 + radius * rel, q,
                     normalize_angle(a + kPi / 2.0)};
  };
  double dx = p.x - c.x, dy = p.y - c.y;
  if (dx == 0.0 && dy == 0.0) return at(0.0);  // every arc point is equidistant
  double rel = std::atan2(dy, dx) - start_angle;
  rel = std::fmod(rel, 2.0 * kPi);
  if (rel < 0.0) rel += 2.0 * kPi;
  if (rel <= kPi) return at(rel);
  Candidate a = at(0.0), b = at(kPi);
  return b.dist < a.dist - kTieTolerance ? b : a;
}

CenterlineFrame project_canonical(Point p, const TrackSpec& t) {
  const double half = 0.5 * t.straight_length;
  const double r = t.turn_radius;
  const double straight = t.straight_length;
  const double arc = kPi * r;

  Candidate best = nearest_on_straight(p, -r, half, true, 0.0);
  consider(best, nearest_on_arc(p, {half, 0.0}, r, -kPi / 2.0, straight));
  consider(best, nearest_on_straight(p, r, half, false, straight + arc));
  consider(best, nearest_on_arc(p, {-half, 0.0}, r, kPi / 2.0, 2.0 * straight + arc));

  const double length = t.length();
  double s = best.s;
  if (s >= length) s -= length;

  double nx = -std::sin(best.heading), ny = std::cos(best.heading);
  double side = (p.x - best.q.x) * nx + (p.y - best.q.y) * ny;
  double offset = side < 0.0 ? -best.dist : best.dist;
  return {s, offset, best.q, best.heading};
}

CenterlineFrame mirror(const CenterlineFrame& f) {
  return {f.s, -f.lateral_offset, {f.nearest_point.x, -f.nearest_point.y},
          normalize_angle(-f.tangent_heading)};
}

// Smallest t > 0 where origin + t*dir meets a stadium of the given radius.
double hit_stadium(Point o, double dx, double dy, double half, double radius) {
  constexpr double kEps = 1e-12;
  double best = std::numeric_limits<double>::infinity();
  if (dy != 0.0) {
    for (double y : {-radius, radius}) {
      double t = (y - o.y) / dy;
      double x = o.x + t * dx;
      if (t > kEps && x >= -half && x <= half) best = std::min(best, t);
    }
  }
  for (double cx : {half, -half}) {
    double ox = o.x - cx, oy = o.y;
    double b = ox * dx + oy * dy;
    double c = ox * ox + oy * oy - radius * radius;
    double disc = b * b - c;
    if (disc < 0.0) continue;
    double root = std::sqrt(disc);
    for (double t : {-b - root, -b + root}) {
      if (t <= kEps) continue;
      double x = o.x + t * dx;
      bool on_arc = cx > 0.0 ? x >= half : x <= -half;
      if (on_arc) best = std::min(best, t);
    }
  }
  return best;
}

}  // namespace

void TrackSpec::validate() const {
  if (!(straight_length >= 0.0) || !(half_width > 0.0) || !(turn_radius > half_width))
    throw ConfigError("track: require straight_length >= 0 and turn_radius > half_width > 0");
}

double TrackSpec::length() const { return 2.0 * straight_length + 2.0 * kPi * turn_radius; }

void VehicleParams::validate() const {
  if (!(wheelbase > 0.0) || !(max_steer > 0.0) || !(max_steer < kPi / 2.0) ||
      !(max_speed > 0.0) || !(velocity_tau > 0.0))
    throw ConfigError("vehicle: wheelbase, max_steer, max_speed, velocity_tau must be positive");
}

Control Control::clamped() const {
  return {std::clamp(steering, -1.0, 1.0), std::clamp(throttle, -1.0, 1.0)};
}

VehicleState step_dynamics(const VehicleState& state, const Control& control, double dt,
                           const VehicleParams& params) {
  if (!finite(state) || !std::isfinite(control.steering) || !std::isfinite(control.throttle))
    throw NumericError("step_dynamics: non-finite state or control");
  if (!(dt > 0.0)) throw std::invalid_argument("step_dynamics: dt must be positive");

  const Control u = control.clamped();
  const double curvature = std::tan(u.steering * params.max_steer) / params.wheelbase;
  const double target = u.throttle * params.max_speed;

  double v_next, distance;
  if (std::isinf(params.velocity_tau)) {
    v_next = state.V_x;
    distance = state.V_x * dt;
  } else {
    const double decay = std::exp(-dt / params.velocity_tau);
    v_next = target + (state.V_x - target) * decay;
    distance = target * dt + (state.V_x - target) * params.velocity_tau * (1.0 - decay);
  }

  const double turn = distance * curvature;
  const double mid = state.theta + 0.5 * turn;
  const double chord = distance * sinc(0.5 * turn);

  VehicleState next;
  next.p_x = state.p_x + chord * std::cos(mid);
  next.p_y = state.p_y + chord * std::sin(mid);
  next.theta = normalize_angle(state.theta + turn);
  next.psi = 0.0;
  next.V_x = v_next;
  next.V_y = 0.0;
  next.theta_dot = v_next * curvature;
  return next;
}

CenterlineFrame project_to_centerline(Point p, const TrackSpec& track) {
  if (track.direction == Direction::counterclockwise) return project_canonical(p, track);
  return mirror(project_canonical({p.x, -p.y}, track));
}

CenterlineFrame centerline_at(double s, const TrackSpec& t) {
  const double length = t.length();
  s = std::fmod(s, length);
  if (s < 0.0) s += length;
  const double half = 0.5 * t.straight_length;
  const double r = t.turn_radius;
  const double arc = kPi * r;

  CenterlineFrame f;
  f.s = s;
  if (s < t.straight_length) {
    f.nearest_point = {-half + s, -r};
    f.tangent_heading = 0.0;
  } else if (s < t.straight_length + arc) {
    double a = -kPi / 2.0 + (s - t.straight_length) / r;
    f.nearest_point = {half + r * std::cos(a), r * std::sin(a)};
    f.tangent_heading = normalize_angle(a + kPi / 2.0);
  } else if (s < 2.0 * t.straight_length + arc) {
    f.nearest_point = {half - (s - t.straight_length - arc), r};
    f.tangent_heading = kPi;
  } else {
    double a = kPi / 2.0 + (s - 2.0 * t.straight_length - arc) / r;
    f.nearest_point = {-half + r * std::cos(a), r * std::sin(a)};
    f.tangent_heading = normalize_angle(a + kPi / 2.0);
  }
  if (t.direction == Direction::clockwise) f = mirror(f);
  return f;
}

bool is_crashed(const VehicleState& state, const TrackSpec& track) {
  return std::abs(project_to_centerline({state.p_x, state.p_y}, track).lateral_offset) >
         track.half_width;
}

VehicleState start_state(const TrackSpec& track, double s) {
  CenterlineFrame f = centerline_at(s, track);
  VehicleState x;
  x.p_x = f.nearest_point.x;
  x.p_y = f.nearest_point.y;
  x.theta = f.tangent_heading;
  return x;
}

int LapCounter::update(double prev_s, double new_s, const TrackSpec& track) {
  const double half = 0.5 * track.length();
  if (prev_s < half && new_s >= half && new_s - prev_s < half) armed_ = true;
  if (armed_ && prev_s >= half && new_s < half && prev_s - new_s > half) {
    ++laps_;
    armed_ = false;
  }
  return laps_;
}

int update_lap_count(double prev_s, double new_s, const TrackSpec& track, int laps) {
  const double half = 0.5 * track.length();
  if (prev_s >= half && new_s < half && prev_s - new_s > half) return laps + 1;
  return laps;
}

double cast_ray(Point origin, double heading, const TrackSpec& track, double max_range) {
  const double dx = std::cos(heading), dy = std::sin(heading);
  const double half = 0.5 * track.straight_length;
  double t = std::min(hit_stadium(origin, dx, dy, half, track.turn_radius - track.half_width),
                      hit_stadium(origin, dx, dy, half, track.turn_radius + track.half_width));
  return std::clamp(t, 0.0, max_range);
}

}  // namespace ebnn::track
