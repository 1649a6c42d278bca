#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "ebnn/common.hpp"

namespace ebnn::nn {

enum class Activation { relu };
enum class DropoutMode { fixed, concrete };

/// Fully connected ReLU network with dropout on every hidden layer and a
/// head emitting output_dim means plus one log-variance s = log sigma^2.
struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden_widths{64, 64};
  int output_dim = 2;
  Activation activation = Activation::relu;
  double dropout_rate = 0.1;  // fixed rate, or the initial rate in concrete mode
  DropoutMode dropout_mode = DropoutMode::fixed;
  double concrete_temperature = 0.1;

  void validate() const;
  int layer_count() const { return static_cast<int>(hidden_widths.size()) + 1; }
  int layer_inputs(int layer) const;
  int layer_outputs(int layer) const;
  std::size_t parameter_count() const;

  bool operator==(const MlpSpec&) const = default;
};

/// Width preset of the fully connected state network (1024-512-256-128).
MlpSpec large_state_preset(int input_dim);

/// All trainable values in one flat array: per layer the weight matrix
/// (inputs x outputs, column-major) then the bias, followed by one
/// dropout-probability logit per hidden layer in concrete mode. Gradients
/// and Adam moments share this layout.
class NetworkParams {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
  using VectorMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  NetworkParams() = default;
  explicit NetworkParams(MlpSpec spec);  // zero-filled

  const MlpSpec& spec() const { return spec_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  MatrixMap weight(int layer);
  ConstMatrixMap weight(int layer) const;
  VectorMap bias(int layer);
  ConstVectorMap bias(int layer) const;
  double& p_logit(int hidden_layer);
  double p_logit(int hidden_layer) const;
  /// Effective drop probability of a hidden layer.
  double drop_probability(int hidden_layer) const;

  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;
  std::size_t logit_offset(int hidden_layer) const;

  bool all_finite() const;
  bool operator==(const NetworkParams&) const = default;

 private:
  MlpSpec spec_;
  std::vector<double> values_;
};

/// He-normal weights on ReLU layers, fan-in scaled output layer, zero biases.
NetworkParams initialize(const MlpSpec& spec, Rng& rng);

/// Uniform draws that fix every stochastic mask of a batch forward pass.
/// Drawn row by row, so a K-row batch equals K single-row passes taken in
/// order from the same stream.
struct DropoutNoise {
  std::vector<Eigen::MatrixXd> uniforms;  // per hidden layer, rows x width
};

DropoutNoise sample_noise(const MlpSpec& spec, int rows, Rng& rng);

/// Everything the backward pass needs.
struct ForwardTrace {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;         // per layer, rows x outputs
  std::vector<Eigen::MatrixXd> activation;  // per hidden layer, after ReLU
  std::vector<Eigen::MatrixXd> mask;        // per hidden layer, multiplicative (incl. scaling)
  std::vector<Eigen::MatrixXd> drop_relax;  // concrete mode: relaxed drop values
  double temperature = 0.0;
  Eigen::MatrixXd output;  // rows x (output_dim + 1); last column is s

  Eigen::MatrixXd means() const { return output.leftCols(output.cols() - 1); }
  Eigen::VectorXd log_variances() const { return output.col(output.cols() - 1); }
};

/// Guard added inside the logs of the concrete relaxation.
inline constexpr double kUniformEps = 1e-7;

/// Batch forward pass with the masks fixed by `noise`. Fixed mode keeps a
/// unit when u >= p and scales survivors by 1/(1-p). Concrete mode uses the
/// relaxed keep mask 1 - sigmoid((logit p + log u - log(1-u)) / temperature),
/// also scaled by 1/(1-p). Throws NumericError naming the layer on
/// non-finite activations.
ForwardTrace forward(const NetworkParams& params, const Eigen::MatrixXd& inputs,
                     const DropoutNoise& noise, double temperature);

/// Same, using the spec's temperature.
ForwardTrace forward(const NetworkParams& params, const Eigen::MatrixXd& inputs,
                     const DropoutNoise& noise);

/// Dropout disabled; all masks are one.
Eigen::MatrixXd forward_deterministic(const NetworkParams& params, const Eigen::MatrixXd& inputs);

struct Prediction {
  Eigen::VectorXd mean;
  double log_variance = 0.0;
  ForwardTrace trace;
};

/// One stochastic pass for a single input with fresh masks from `rng`.
Prediction forward_dropout(const NetworkParams& params, const Eigen::VectorXd& x, Rng& rng);

struct ConcreteForward {
  Prediction prediction;
  double regularizer = 0.0;
};

struct ConcreteRegularization {
  double weight = 0.0;   // l^2 / N
  double dropout = 0.0;  // 2 / N
};

/// Concrete-dropout pass with an explicit temperature (must be > 0), plus
/// the weight and dropout-entropy regularizer of the current parameters.
ConcreteForward concrete_dropout_forward(const NetworkParams& params, const Eigen::VectorXd& x,
                                         double temperature, const ConcreteRegularization& reg,
                                         Rng& rng);

inline constexpr double kLogVarianceBound = 20.0;

/// 1/2 exp(-s) |u* - u|^2 + 1/2 s with s clamped to +-20.
double heteroscedastic_loss(const Eigen::VectorXd& mean, double s, const Eigen::VectorXd& target);

struct LossGradient {
  double loss = 0.0;           // mean over rows
  Eigen::MatrixXd d_output;    // d(mean loss)/d(output), rows x (output_dim + 1)
  Eigen::VectorXd per_example;
};

LossGradient heteroscedastic_batch(const Eigen::MatrixXd& output, const Eigen::MatrixXd& targets);

/// Reverse-mode gradient of a loss given d(loss)/d(output) under the masks
/// recorded in `trace`. In concrete mode the dropout logits receive the
/// gradient flowing through the relaxed masks and the 1/(1-p) scaling.
NetworkParams backward(const NetworkParams& params, const ForwardTrace& trace,
                       const Eigen::MatrixXd& d_output);

/// Concrete-dropout regularizer: sum over hidden layers of
/// weight * |W_next|^2 / (1 - p) + dropout * width * (p log p + (1-p) log(1-p)).
/// Adds its gradient to `grad` when given.
double concrete_regularizer(const NetworkParams& params, const ConcreteRegularization& reg,
                            NetworkParams* grad = nullptr);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// Bias-corrected Adam update in place; increments state.step first.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config);

/// One observation/expert-control pair per row.
struct TrainBatch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  AdamConfig adam;
  double length_scale = 1e-4;  // concrete mode prior length scale

  void validate() const;
};

struct TrainResult {
  NetworkParams params;
  std::vector<double> loss_history;  // epoch mean heteroscedastic loss
};

/// Thrown when the training loss or parameters become non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minibatch Adam on the mean heteroscedastic loss (plus the concrete
/// regularizer in concrete mode) with fresh masks per example and visit.
/// Deterministic given the seed.
TrainResult train(const MlpSpec& spec, const TrainBatch& data, const TrainConfig& config,
                  std::uint64_t seed);

/// Same, continuing from given parameters.
TrainResult train(NetworkParams init, const TrainBatch& data, const TrainConfig& config,
                  std::uint64_t seed);

/// Per-feature affine standardization; zero-variance features pass with unit scale.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& inputs);
  static Standardizer identity(int dim);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& inputs) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

/// A trained learner: parameters plus the input standardization they expect.
struct BayesianNetwork {
  NetworkParams params;
  Standardizer input_norm;

  const MlpSpec& spec() const { return params.spec(); }
};

}  // namespace ebnn::nn
