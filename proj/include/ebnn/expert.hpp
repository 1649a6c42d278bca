#pragma once

#include <Eigen/Dense>

#include <vector>

#include "ebnn/ilqg.hpp"
#include "ebnn/track.hpp"

namespace ebnn::ddp {

/// Centerline + forward-speed tracking with one shared control weight.
struct CostConfig {
  double w_lateral = 4.0;   // 1/m^2
  double w_velocity = 0.5;  // s^2/m^2
  double v_des = 5.0;       // m/s
  double w_control = 0.1;

  void validate() const;
};

/// w_lateral * offset^2 + w_velocity * (V_x - v_des)^2 + w_control * |u|^2.
double running_cost(const track::VehicleState& x, const track::Control& u, const CostConfig& cost,
                    const track::TrackSpec& track);

/// State-dependent terms of running_cost.
double terminal_cost(const track::VehicleState& x, const CostConfig& cost,
                     const track::TrackSpec& track);

using StateVec = Eigen::Matrix<double, 7, 1>;
using ControlVec = Eigen::Matrix<double, 2, 1>;
using MatA = Eigen::Matrix<double, 7, 7>;
using MatB = Eigen::Matrix<double, 7, 2>;

StateVec to_vector(const track::VehicleState& s);
track::VehicleState to_state(const StateVec& v);
ControlVec to_vector(const track::Control& u);
track::Control to_control(const ControlVec& v);

inline constexpr double kJacobianStep = 1e-5;

struct Linearization {
  MatA A;
  MatB B;
};

/// Central finite-difference Jacobians of step_dynamics (heading
/// differences wrapped).
Linearization linearize_dynamics(const track::VehicleState& x, const track::Control& u, double dt,
                                 const track::VehicleParams& vehicle, double h = kJacobianStep);

/// Bicycle-on-oval trajectory optimization problem. The lateral term uses a
/// Gauss-Newton Hessian built from the centerline normal at each state's own
/// projection.
class VehicleProblem {
 public:
  static constexpr int kStateDim = 7;
  static constexpr int kControlDim = 2;
  using State = StateVec;
  using Control = ControlVec;

  VehicleProblem(track::TrackSpec track, track::VehicleParams vehicle, CostConfig cost, double dt)
      : track_(track), vehicle_(vehicle), cost_(cost), dt_(dt) {}

  State step(const State& x, const Control& u) const;
  double running_cost(const State& x, const Control& u) const;
  double terminal_cost(const State& x) const;
  void running_expansion(const State& x, const Control& u, CostExpansion<7, 2>& q) const;
  void terminal_expansion(const State& x, CostExpansion<7, 2>& q) const;
  void linearize(const State& x, const Control& u, MatA& A, MatB& B) const;
  Control clamp(const Control& u) const;
  State difference(const State& a, const State& b) const;

  const track::TrackSpec& track() const { return track_; }
  const track::VehicleParams& vehicle() const { return vehicle_; }
  const CostConfig& cost() const { return cost_; }
  double dt() const { return dt_; }

 private:
  void state_expansion(const State& x, CostExpansion<7, 2>& q) const;

  track::TrackSpec track_;
  track::VehicleParams vehicle_;
  CostConfig cost_;
  double dt_;
};

using VehicleSolver = IlqgSolver<VehicleProblem>;
using VehicleTrajectory = Trajectory<7, 2>;

struct MpcResult {
  track::Control control;
  std::vector<ControlVec> solution;  // the full optimized control sequence
  bool improved = true;
  int iterations = 0;
};

/// One receding-horizon step: warm start from the previous solution shifted
/// by one (last control repeated; zeros when there is none), solve, return
/// the first control.
MpcResult mpc_step(const track::VehicleState& x0, const std::vector<ControlVec>& previous,
                   const VehicleSolver& solver);

/// Stateful wrapper carrying the warm start between steps.
class MpcController {
 public:
  MpcController(const track::TrackSpec& track, const track::VehicleParams& vehicle,
                const CostConfig& cost, const DdpConfig& config);

  track::Control act(const track::VehicleState& x);
  const MpcResult& last() const { return last_; }
  const VehicleSolver& solver() const { return solver_; }

 private:
  VehicleSolver solver_;
  MpcResult last_;
};

}  // namespace ebnn::ddp
