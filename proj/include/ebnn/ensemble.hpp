#pragma once

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <vector>

#include "ebnn/common.hpp"
#include "ebnn/nn.hpp"

namespace ebnn::ensemble {

/// K stochastic forward passes of one network on one observation.
struct PredictiveSamples {
  Eigen::MatrixXd means;           // K x output_dim
  Eigen::VectorXd aleatoric_vars;  // K, exp(s_k)

  int count() const { return static_cast<int>(means.rows()); }
};

struct UncertaintyReport {
  Eigen::VectorXd mean;
  double epistemic = 0.0;
  double aleatoric = 0.0;
  double total = 0.0;  // epistemic + aleatoric
};

struct Selection {
  int index = -1;
  Eigen::VectorXd control;  // selected mean clamped to [-1, 1]
};

struct EnsembleDecision {
  double t = 0.0;
  std::vector<UncertaintyReport> reports;
  std::vector<bool> valid;
  int selected = -1;
  Eigen::VectorXd control;
};

class NoValidLearner : public std::runtime_error {
 public:
  NoValidLearner() : std::runtime_error("ensemble: no learner produced a finite variance") {}
};

inline constexpr int kDefaultMcSamples = 10;

/// K passes of the (standardized) observation with fresh dropout masks.
/// Row k is the k-th pass drawn from the stream and equals a single
/// forward_dropout call at that stream state.
PredictiveSamples mc_sample(const nn::BayesianNetwork& net, const Eigen::VectorXd& observation,
                            int K, Rng& rng);

/// Predictive mean and the population-variance split into epistemic (trace
/// of the sample covariance of the means) and aleatoric (mean of exp(s)).
UncertaintyReport decompose(const PredictiveSamples& samples);

/// Argmin of total variance; ties go to the lowest index and non-finite
/// totals are skipped. Throws NoValidLearner when nothing remains.
Selection min_variance_select(std::span<const UncertaintyReport> reports);

/// Inverse-variance weighted mean of the learner means, clamped. A learner
/// with zero variance takes all the weight. Not used by the controller.
Eigen::VectorXd inverse_variance_blend(std::span<const UncertaintyReport> reports);

enum class Execution { sequential, concurrent };

/// Samples and decomposes every learner on its own observation and stream,
/// then selects. A learner that throws or yields a non-finite variance is
/// marked invalid; the decision is identical in both execution modes.
EnsembleDecision ensemble_step(std::span<const Eigen::VectorXd> observations,
                               std::span<const nn::BayesianNetwork* const> networks, int K,
                               std::span<Rng> rngs, double t = 0.0,
                               Execution mode = Execution::sequential);

}  // namespace ebnn::ensemble
