#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <vector>

#include "ebnn/common.hpp"

namespace ebnn::ddp {

/// Solver settings. Regularization is added to the control Hessian.
struct DdpConfig {
  int horizon = 40;
  double dt = 0.05;
  int max_iterations = 15;
  double lambda_init = 1e-6;
  double lambda_growth = 10.0;
  double lambda_shrink = 0.5;
  double lambda_min = 1e-9;  // below this the regularization drops to zero
  double lambda_max = 1e10;
  int line_search_steps = 10;
  double convergence_tol = 1e-6;

  void validate() const;
};

template <int Nx, int Nu>
struct CostExpansion {
  Eigen::Matrix<double, Nx, 1> lx = Eigen::Matrix<double, Nx, 1>::Zero();
  Eigen::Matrix<double, Nu, 1> lu = Eigen::Matrix<double, Nu, 1>::Zero();
  Eigen::Matrix<double, Nx, Nx> lxx = Eigen::Matrix<double, Nx, Nx>::Zero();
  Eigen::Matrix<double, Nu, Nu> luu = Eigen::Matrix<double, Nu, Nu>::Zero();
  Eigen::Matrix<double, Nu, Nx> lux = Eigen::Matrix<double, Nu, Nx>::Zero();
};

/// What the solver needs from a problem: dynamics, costs with their
/// quadratic expansions, and control bounds. `difference` lets problems with
/// angular states wrap the deviation used by the feedback term.
template <class P>
concept IlqgProblem = requires(const P& p, const typename P::State& x, const typename P::Control& u,
                               CostExpansion<P::kStateDim, P::kControlDim>& q,
                               Eigen::Matrix<double, P::kStateDim, P::kStateDim>& A,
                               Eigen::Matrix<double, P::kStateDim, P::kControlDim>& B) {
  { p.step(x, u) } -> std::same_as<typename P::State>;
  { p.running_cost(x, u) } -> std::convertible_to<double>;
  { p.terminal_cost(x) } -> std::convertible_to<double>;
  p.running_expansion(x, u, q);
  p.terminal_expansion(x, q);
  p.linearize(x, u, A, B);
  { p.clamp(u) } -> std::same_as<typename P::Control>;
  { p.difference(x, x) } -> std::same_as<typename P::State>;
};

template <int Nx, int Nu>
struct Trajectory {
  std::vector<Eigen::Matrix<double, Nx, 1>> states;    // H + 1
  std::vector<Eigen::Matrix<double, Nu, 1>> controls;  // H
  double total_cost = 0.0;

  int horizon() const { return static_cast<int>(controls.size()); }
};

template <int Nx, int Nu>
struct Gains {
  std::vector<Eigen::Matrix<double, Nu, 1>> k;
  std::vector<Eigen::Matrix<double, Nu, Nx>> K;
  double linear_term = 0.0;     // sum k'Qu
  double quadratic_term = 0.0;  // sum 1/2 k'Quu k

  /// Model-predicted cost reduction for step size alpha (positive is a decrease).
  double expected_decrease(double alpha = 1.0) const {
    return -(alpha * linear_term + alpha * alpha * quadratic_term);
  }
};

struct TraceEntry {
  int iteration = 0;
  double cost = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  bool accepted = false;
};

template <int Nx, int Nu>
struct SolveResult {
  Trajectory<Nx, Nu> trajectory;
  int iterations = 0;
  bool converged = false;
  bool improved = false;  // false: no step accepted, trajectory is the warm-start rollout
  std::vector<TraceEntry> trace;
};

template <IlqgProblem P>
class IlqgSolver {
 public:
  static constexpr int Nx = P::kStateDim;
  static constexpr int Nu = P::kControlDim;
  using State = typename P::State;
  using Control = typename P::Control;
  using Traj = Trajectory<Nx, Nu>;
  using Gain = Gains<Nx, Nu>;
  using MatXX = Eigen::Matrix<double, Nx, Nx>;
  using MatXU = Eigen::Matrix<double, Nx, Nu>;
  using MatUU = Eigen::Matrix<double, Nu, Nu>;
  using MatUX = Eigen::Matrix<double, Nu, Nx>;

  /// Local model of the problem along a trajectory.
  struct Expansion {
    std::vector<MatXX> A;
    std::vector<MatXU> B;
    std::vector<CostExpansion<Nx, Nu>> cost;  // H running + 1 terminal
  };

  IlqgSolver(const P& problem, DdpConfig config) : problem_(problem), config_(config) {}

  const DdpConfig& config() const { return config_; }

  Traj rollout(const State& x0, const std::vector<Control>& controls) const {
    Traj t;
    t.states.reserve(controls.size() + 1);
    t.controls.reserve(controls.size());
    t.states.push_back(x0);
    double cost = 0.0;
    for (const Control& raw : controls) {
      Control u = problem_.clamp(raw);
      cost += problem_.running_cost(t.states.back(), u);
      t.controls.push_back(u);
      t.states.push_back(problem_.step(t.states.back(), u));
    }
    t.total_cost = cost + problem_.terminal_cost(t.states.back());
    return t;
  }

  Expansion expand(const Traj& traj) const {
    const int H = traj.horizon();
    Expansion e;
    e.A.resize(H);
    e.B.resize(H);
    e.cost.resize(H + 1);
    for (int t = 0; t < H; ++t) {
      problem_.linearize(traj.states[t], traj.controls[t], e.A[t], e.B[t]);
      problem_.running_expansion(traj.states[t], traj.controls[t], e.cost[t]);
    }
    problem_.terminal_expansion(traj.states[H], e.cost[H]);
    return e;
  }

  /// iLQG backward recursion. Returns nullopt when the regularized control
  /// Hessian is not positive definite at some step.
  std::optional<Gain> backward_pass(const Expansion& e, double lambda) const {
    const int H = static_cast<int>(e.A.size());
    Gain g;
    g.k.resize(H);
    g.K.resize(H);
    Eigen::Matrix<double, Nx, 1> Vx = e.cost[H].lx;
    MatXX Vxx = e.cost[H].lxx;
    for (int t = H - 1; t >= 0; --t) {
      const auto& A = e.A[t];
      const auto& B = e.B[t];
      const auto& l = e.cost[t];
      Eigen::Matrix<double, Nx, 1> Qx = l.lx + A.transpose() * Vx;
      Eigen::Matrix<double, Nu, 1> Qu = l.lu + B.transpose() * Vx;
      MatXX Qxx = l.lxx + A.transpose() * Vxx * A;
      MatUU Quu = l.luu + B.transpose() * Vxx * B;
      MatUX Qux = l.lux + B.transpose() * Vxx * A;

      MatUU Quu_reg = Quu + lambda * MatUU::Identity();
      Eigen::LLT<MatUU> llt(Quu_reg);
      if (llt.info() != Eigen::Success) return std::nullopt;
      Eigen::Matrix<double, Nu, 1> k = -llt.solve(Qu);
      MatUX K = -llt.solve(Qux);
      if (!k.allFinite() || !K.allFinite())
        throw NumericError("backward_pass: non-finite gains at step " + std::to_string(t));

      g.linear_term += k.dot(Qu);
      g.quadratic_term += 0.5 * k.dot(Quu * k);

      Vx = Qx + K.transpose() * Quu * k + K.transpose() * Qu + Qux.transpose() * k;
      Vxx = Qxx + K.transpose() * Quu * K + K.transpose() * Qux + Qux.transpose() * K;
      Vxx = 0.5 * (Vxx + Vxx.transpose()).eval();
      g.k[t] = k;
      g.K[t] = K;
    }
    return g;
  }

  /// u_t = ubar_t + alpha k_t + K_t (x_t - xbar_t), clamped, rolled out.
  Traj forward_pass(const Traj& nominal, const Gain& g, double alpha) const {
    const int H = nominal.horizon();
    Traj t;
    t.states.reserve(H + 1);
    t.controls.reserve(H);
    t.states.push_back(nominal.states[0]);
    double cost = 0.0;
    for (int i = 0; i < H; ++i) {
      const State& x = t.states.back();
      Control u = nominal.controls[i] + alpha * g.k[i] +
                  g.K[i] * problem_.difference(x, nominal.states[i]);
      u = problem_.clamp(u);
      cost += problem_.running_cost(x, u);
      t.controls.push_back(u);
      t.states.push_back(problem_.step(x, u));
    }
    t.total_cost = cost + problem_.terminal_cost(t.states.back());
    return t;
  }

  /// Backward/forward iterations with backtracking line search and
  /// Levenberg-style regularization. Only cost-decreasing steps are kept.
  SolveResult<Nx, Nu> solve(const State& x0, const std::vector<Control>& warm_start) const {
    SolveResult<Nx, Nu> r;
    r.trajectory = rollout(x0, warm_start);
    if (!std::isfinite(r.trajectory.total_cost))
      throw NumericError("ilqg: non-finite warm-start cost");
    r.trace.push_back({0, r.trajectory.total_cost, config_.lambda_init, 0.0, true});
    if (warm_start.empty()) {
      r.converged = true;
      return r;
    }

    double lambda = config_.lambda_init;
    for (int it = 1; it <= config_.max_iterations; ++it) {
      r.iterations = it;
      Expansion e = expand(r.trajectory);
      std::optional<Gain> g = backward_pass(e, lambda);
      while (!g) {
        lambda = std::max(lambda * config_.lambda_growth, config_.lambda_min);
        if (lambda > config_.lambda_max) return r;
        g = backward_pass(e, lambda);
      }
      if (g->expected_decrease() < config_.convergence_tol) {
        r.converged = true;
        return r;
      }

      bool accepted = false;
      double alpha = 1.0;
      for (int ls = 0; ls < config_.line_search_steps; ++ls, alpha *= 0.5) {
        Traj candidate = forward_pass(r.trajectory, *g, alpha);
        if (std::isfinite(candidate.total_cost) &&
            candidate.total_cost < r.trajectory.total_cost) {
          double improvement = r.trajectory.total_cost - candidate.total_cost;
          r.trajectory = std::move(candidate);
          r.improved = true;
          accepted = true;
          lambda *= config_.lambda_shrink;
          if (lambda < config_.lambda_min) lambda = 0.0;
          r.trace.push_back({it, r.trajectory.total_cost, lambda, alpha, true});
          if (improvement < config_.convergence_tol) {
            r.converged = true;
            return r;
          }
          break;
        }
      }
      if (!accepted) {
        lambda = std::max(lambda * config_.lambda_growth, config_.lambda_min);
        r.trace.push_back({it, r.trajectory.total_cost, lambda, 0.0, false});
        if (lambda > config_.lambda_max) return r;
      }
    }
    return r;
  }

 private:
  P problem_;
  DdpConfig config_;
};

/// Central finite-difference Jacobians of a step function.
template <IlqgProblem P>
void finite_difference_jacobians(const P& p, const typename P::State& x,
                                 const typename P::Control& u, double h,
                                 Eigen::Matrix<double, P::kStateDim, P::kStateDim>& A,
                                 Eigen::Matrix<double, P::kStateDim, P::kControlDim>& B) {
  for (int i = 0; i < P::kStateDim; ++i) {
    typename P::State xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    A.col(i) = p.difference(p.step(xp, u), p.step(xm, u)) / (2.0 * h);
  }
  for (int j = 0; j < P::kControlDim; ++j) {
    typename P::Control up = u, um = u;
    up(j) += h;
    um(j) -= h;
    B.col(j) = p.difference(p.step(x, up), p.step(x, um)) / (2.0 * h);
  }
  if (!A.allFinite() || !B.allFinite())
    throw NumericError("linearize: non-finite dynamics at perturbed point");
}

}  // namespace ebnn::ddp
