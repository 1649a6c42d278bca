#include "ebnn/expert.hpp"

#include <algorithm>
#include <cmath>

namespace ebnn::ddp {

void DdpConfig::validate() const {
  if (horizon < 2) throw ConfigError("ddp: horizon must be >= 2");
  if (!(dt > 0.0)) throw ConfigError("ddp: dt must be positive");
  if (max_iterations < 1 || line_search_steps < 1) throw ConfigError("ddp: iteration counts");
  if (!(lambda_init >= 0.0) || !(lambda_growth > 1.0) || !(lambda_shrink > 0.0) ||
      !(lambda_shrink < 1.0))
    throw ConfigError("ddp: invalid regularization schedule");
  if (!(convergence_tol > 0.0)) throw ConfigError("ddp: convergence_tol must be positive");
}

void CostConfig::validate() const {
  if (!(w_lateral >= 0.0) || !(w_velocity >= 0.0) || !(w_control >= 0.0))
    throw ConfigError("cost: weights must be non-negative");
  if (!std::isfinite(v_des)) throw ConfigError("cost: v_des must be finite");
}

double terminal_cost(const track::VehicleState& x, const CostConfig& cost,
                     const track::TrackSpec& track) {
  double e = track::project_to_centerline({x.p_x, x.p_y}, track).lateral_offset;
  double dv = x.V_x - cost.v_des;
  return cost.w_lateral * e * e + cost.w_velocity * dv * dv;
}

double running_cost(const track::VehicleState& x, const track::Control& u, const CostConfig& cost,
                    const track::TrackSpec& track) {
  return terminal_cost(x, cost, track) +
         cost.w_control * (u.steering * u.steering + u.throttle * u.throttle);
}

StateVec to_vector(const track::VehicleState& s) {
  StateVec v;
  v << s.p_x, s.p_y, s.theta, s.psi, s.V_x, s.V_y, s.theta_dot;
  return v;
}

track::VehicleState to_state(const StateVec& v) {
  return {v(0), v(1), v(2), v(3), v(4), v(5), v(6)};
}

ControlVec to_vector(const track::Control& u) { return {u.steering, u.throttle}; }

track::Control to_control(const ControlVec& v) { return {v(0), v(1)}; }

Linearization linearize_dynamics(const track::VehicleState& x, const track::Control& u, double dt,
                                 const track::VehicleParams& vehicle, double h) {
  VehicleProblem p(track::TrackSpec{}, vehicle, CostConfig{}, dt);
  Linearization lin;
  finite_difference_jacobians(p, to_vector(x), to_vector(u), h, lin.A, lin.B);
  return lin;
}

VehicleProblem::State VehicleProblem::step(const State& x, const Control& u) const {
  return to_vector(track::step_dynamics(to_state(x), to_control(u), dt_, vehicle_));
}

double VehicleProblem::running_cost(const State& x, const Control& u) const {
  return ddp::running_cost(to_state(x), to_control(u), cost_, track_);
}

double VehicleProblem::terminal_cost(const State& x) const {
  return ddp::terminal_cost(to_state(x), cost_, track_);
}

void VehicleProblem::state_expansion(const State& x, CostExpansion<7, 2>& q) const {
  track::CenterlineFrame f = track::project_to_centerline({x(0), x(1)}, track_);
  // d(offset)/d(p) is the left normal of the centerline at the projection.
  Eigen::Vector2d n(-std::sin(f.tangent_heading), std::cos(f.tangent_heading));
  q.lx.setZero();
  q.lxx.setZero();
  q.lx.head<2>() = 2.0 * cost_.w_lateral * f.lateral_offset * n;
  q.lxx.topLeftCorner<2, 2>() = 2.0 * cost_.w_lateral * n * n.transpose();
  q.lx(4) = 2.0 * cost_.w_velocity * (x(4) - cost_.v_des);
  q.lxx(4, 4) = 2.0 * cost_.w_velocity;
}

void VehicleProblem::running_expansion(const State& x, const Control& u,
                                       CostExpansion<7, 2>& q) const {
  state_expansion(x, q);
  q.lu = 2.0 * cost_.w_control * u;
  q.luu = 2.0 * cost_.w_control * Eigen::Matrix2d::Identity();
  q.lux.setZero();
}

void VehicleProblem::terminal_expansion(const State& x, CostExpansion<7, 2>& q) const {
  state_expansion(x, q);
  q.lu.setZero();
  q.luu.setZero();
  q.lux.setZero();
}

void VehicleProblem::linearize(const State& x, const Control& u, MatA& A, MatB& B) const {
  finite_difference_jacobians(*this, x, u, kJacobianStep, A, B);
}

VehicleProblem::Control VehicleProblem::clamp(const Control& u) const {
  return u.cwiseMax(-1.0).cwiseMin(1.0);
}

VehicleProblem::State VehicleProblem::difference(const State& a, const State& b) const {
  State d = a - b;
  d(2) = normalize_angle(d(2));
  d(3) = normalize_angle(d(3));
  return d;
}

MpcResult mpc_step(const track::VehicleState& x0, const std::vector<ControlVec>& previous,
                   const VehicleSolver& solver) {
  const int H = solver.config().horizon;
  std::vector<ControlVec> warm(H, ControlVec::Zero());
  if (!previous.empty()) {
    for (int t = 0; t < H; ++t) {
      std::size_t src = std::min<std::size_t>(t + 1, previous.size() - 1);
      warm[t] = previous[src];
    }
  }
  auto result = solver.solve(to_vector(x0), warm);
  MpcResult out;
  out.solution = std::move(result.trajectory.controls);
  out.control = to_control(out.solution.front());
  out.improved = result.improved || result.converged;
  out.iterations = result.iterations;
  return out;
}

MpcController::MpcController(const track::TrackSpec& track, const track::VehicleParams& vehicle,
                             const CostConfig& cost, const DdpConfig& config)
    : solver_(VehicleProblem(track, vehicle, cost, config.dt), config) {}

track::Control MpcController::act(const track::VehicleState& x) {
  last_ = mpc_step(x, last_.solution, solver_);
  return last_.control;
}

}  // namespace ebnn::ddp
