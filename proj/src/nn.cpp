#include "ebnn/nn.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>

namespace ebnn::nn {
namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Clamped-s warnings are rate limited to the first few occurrences.
void warn_clamped(double s) {
  static std::atomic<int> count{0};
  int n = count.fetch_add(1);
  if (n < 5) spdlog::warn("log-variance head {} clamped to +-{}", s, kLogVarianceBound);
  if (n == 5) spdlog::warn("further log-variance clamp warnings suppressed");
}

}  // namespace

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw ConfigError("mlp: dimensions must be >= 1");
  for (int w : hidden_widths)
    if (w < 1) throw ConfigError("mlp: hidden widths must be >= 1");
  if (!(dropout_rate >= 0.0) || !(dropout_rate < 1.0))
    throw ConfigError("mlp: dropout rate must lie in [0, 1)");
  if (dropout_mode == DropoutMode::concrete) {
    if (!(dropout_rate > 0.0)) throw ConfigError("mlp: concrete dropout needs an initial rate > 0");
    if (!(concrete_temperature > 0.0)) throw ConfigError("mlp: concrete temperature must be > 0");
  }
}

int MlpSpec::layer_inputs(int layer) const {
  return layer == 0 ? input_dim : hidden_widths[layer - 1];
}

int MlpSpec::layer_outputs(int layer) const {
  return layer == layer_count() - 1 ? output_dim + 1 : hidden_widths[layer];
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layer_count(); ++l)
    n += static_cast<std::size_t>(layer_inputs(l) + 1) * layer_outputs(l);
  if (dropout_mode == DropoutMode::concrete) n += hidden_widths.size();
  return n;
}

MlpSpec large_state_preset(int input_dim) {
  MlpSpec s;
  s.input_dim = input_dim;
  s.hidden_widths = {1024, 512, 256, 128};
  return s;
}

NetworkParams::NetworkParams(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  values_.assign(spec_.parameter_count(), 0.0);
}

std::size_t NetworkParams::weight_offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l)
    off += static_cast<std::size_t>(spec_.layer_inputs(l) + 1) * spec_.layer_outputs(l);
  return off;
}

std::size_t NetworkParams::bias_offset(int layer) const {
  return weight_offset(layer) +
         static_cast<std::size_t>(spec_.layer_inputs(layer)) * spec_.layer_outputs(layer);
}

std::size_t NetworkParams::logit_offset(int hidden_layer) const {
  return weight_offset(spec_.layer_count()) + hidden_layer;
}

NetworkParams::MatrixMap NetworkParams::weight(int layer) {
  return {values_.data() + weight_offset(layer), spec_.layer_inputs(layer),
          spec_.layer_outputs(layer)};
}

NetworkParams::ConstMatrixMap NetworkParams::weight(int layer) const {
  return {values_.data() + weight_offset(layer), spec_.layer_inputs(layer),
          spec_.layer_outputs(layer)};
}

NetworkParams::VectorMap NetworkParams::bias(int layer) {
  return {values_.data() + bias_offset(layer), spec_.layer_outputs(layer)};
}

NetworkParams::ConstVectorMap NetworkParams::bias(int layer) const {
  return {values_.data() + bias_offset(layer), spec_.layer_outputs(layer)};
}

double& NetworkParams::p_logit(int hidden_layer) { return values_[logit_offset(hidden_layer)]; }

double NetworkParams::p_logit(int hidden_layer) const {
  return values_[logit_offset(hidden_layer)];
}

double NetworkParams::drop_probability(int hidden_layer) const {
  if (spec_.dropout_mode == DropoutMode::concrete) return sigmoid(p_logit(hidden_layer));
  return spec_.dropout_rate;
}

bool NetworkParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

NetworkParams initialize(const MlpSpec& spec, Rng& rng) {
  NetworkParams p(spec);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < spec.layer_count(); ++l) {
    bool hidden = l < spec.layer_count() - 1;
    double scale = std::sqrt((hidden ? 2.0 : 1.0) / spec.layer_inputs(l));
    auto w = p.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
  }
  if (spec.dropout_mode == DropoutMode::concrete) {
    double logit = std::log(spec.dropout_rate) - std::log1p(-spec.dropout_rate);
    for (std::size_t h = 0; h < spec.hidden_widths.size(); ++h) p.p_logit(static_cast<int>(h)) = logit;
  }
  return p;
}

DropoutNoise sample_noise(const MlpSpec& spec, int rows, Rng& rng) {
  DropoutNoise noise;
  const auto& widths = spec.hidden_widths;
  for (int w : widths) noise.uniforms.emplace_back(rows, w);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (int r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < widths.size(); ++h)
      for (int j = 0; j < widths[h]; ++j) noise.uniforms[h](r, j) = uniform(rng);
  return noise;
}

ForwardTrace forward(const NetworkParams& params, const Eigen::MatrixXd& inputs,
                     const DropoutNoise& noise, double temperature) {
  const MlpSpec& spec = params.spec();
  if (inputs.cols() != spec.input_dim)
    throw std::invalid_argument("forward: input has " + std::to_string(inputs.cols()) +
                                " columns, network expects " + std::to_string(spec.input_dim));
  const bool concrete = spec.dropout_mode == DropoutMode::concrete;
  if (concrete && !(temperature > 0.0))
    throw std::invalid_argument("forward: concrete temperature must be > 0");
  const int L = spec.layer_count();
  const Eigen::Index rows = inputs.rows();

  ForwardTrace t;
  t.input = inputs;
  t.temperature = temperature;
  Eigen::MatrixXd a = inputs;
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = a * params.weight(l);
    z.rowwise() += params.bias(l).transpose();
    if (!z.allFinite()) throw NumericError("forward: non-finite activation in layer " + std::to_string(l));
    t.pre.push_back(z);
    if (l == L - 1) {
      t.output = std::move(z);
      break;
    }
    const Eigen::MatrixXd& u = noise.uniforms.at(l);
    if (u.rows() != rows || u.cols() != z.cols())
      throw std::invalid_argument("forward: dropout noise shape mismatch in layer " + std::to_string(l));
    Eigen::MatrixXd act = z.cwiseMax(0.0);
    Eigen::MatrixXd mask(rows, z.cols());
    const double p = params.drop_probability(l);
    const double keep_scale = 1.0 / (1.0 - p);
    if (concrete) {
      const double logit = params.p_logit(l);
      Eigen::MatrixXd relax(rows, z.cols());
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
          double uu = u(i, j);
          double d = sigmoid((logit + std::log(uu + kUniformEps) - std::log(1.0 - uu + kUniformEps)) /
                             temperature);
          relax(i, j) = d;
          mask(i, j) = (1.0 - d) * keep_scale;
        }
      }
      t.drop_relax.push_back(std::move(relax));
    } else {
      for (Eigen::Index j = 0; j < z.cols(); ++j)
        for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = u(i, j) >= p ? keep_scale : 0.0;
    }
    a = act.cwiseProduct(mask);
    t.activation.push_back(std::move(act));
    t.mask.push_back(std::move(mask));
  }
  return t;
}

ForwardTrace forward(const NetworkParams& params, const Eigen::MatrixXd& inputs,
                     const DropoutNoise& noise) {
  return forward(params, inputs, noise, params.spec().concrete_temperature);
}

Eigen::MatrixXd forward_deterministic(const NetworkParams& params, const Eigen::MatrixXd& inputs) {
  const MlpSpec& spec = params.spec();
  const int L = spec.layer_count();
  Eigen::MatrixXd a = inputs;
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = a * params.weight(l);
    z.rowwise() += params.bias(l).transpose();
    if (!z.allFinite()) throw NumericError("forward: non-finite activation in layer " + std::to_string(l));
    a = l == L - 1 ? std::move(z) : z.cwiseMax(0.0);
  }
  return a;
}

Prediction forward_dropout(const NetworkParams& params, const Eigen::VectorXd& x, Rng& rng) {
  DropoutNoise noise = sample_noise(params.spec(), 1, rng);
  Prediction p;
  p.trace = forward(params, x.transpose(), noise);
  p.mean = p.trace.output.row(0).head(params.spec().output_dim).transpose();
  p.log_variance = p.trace.output(0, params.spec().output_dim);
  return p;
}

ConcreteForward concrete_dropout_forward(const NetworkParams& params, const Eigen::VectorXd& x,
                                         double temperature, const ConcreteRegularization& reg,
                                         Rng& rng) {
  if (params.spec().dropout_mode != DropoutMode::concrete)
    throw std::invalid_argument("concrete_dropout_forward: network is not in concrete mode");
  if (!(temperature > 0.0))
    throw std::invalid_argument("concrete_dropout_forward: temperature must be > 0");
  DropoutNoise noise = sample_noise(params.spec(), 1, rng);
  ConcreteForward out;
  out.prediction.trace = forward(params, x.transpose(), noise, temperature);
  const int d = params.spec().output_dim;
  out.prediction.mean = out.prediction.trace.output.row(0).head(d).transpose();
  out.prediction.log_variance = out.prediction.trace.output(0, d);
  out.regularizer = concrete_regularizer(params, reg);
  return out;
}

double heteroscedastic_loss(const Eigen::VectorXd& mean, double s, const Eigen::VectorXd& target) {
  double sc = std::clamp(s, -kLogVarianceBound, kLogVarianceBound);
  if (sc != s) warn_clamped(s);
  return 0.5 * std::exp(-sc) * (target - mean).squaredNorm() + 0.5 * sc;
}

LossGradient heteroscedastic_batch(const Eigen::MatrixXd& output, const Eigen::MatrixXd& targets) {
  const Eigen::Index rows = output.rows();
  const Eigen::Index d = output.cols() - 1;
  if (targets.rows() != rows || targets.cols() != d)
    throw std::invalid_argument("heteroscedastic_batch: target shape mismatch");
  LossGradient g;
  g.d_output.resize(rows, d + 1);
  g.per_example.resize(rows);
  const double inv = 1.0 / static_cast<double>(rows);
  double total = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    double s = output(i, d);
    double sc = std::clamp(s, -kLogVarianceBound, kLogVarianceBound);
    if (sc != s) warn_clamped(s);
    Eigen::RowVectorXd r = targets.row(i) - output.row(i).head(d);
    double sq = r.squaredNorm();
    double w = std::exp(-sc);
    double loss = 0.5 * w * sq + 0.5 * sc;
    g.per_example(i) = loss;
    total += loss;
    g.d_output.row(i).head(d) = -w * inv * r;
    g.d_output(i, d) = sc == s ? inv * (0.5 - 0.5 * w * sq) : 0.0;
  }
  g.loss = total * inv;
  return g;
}

NetworkParams backward(const NetworkParams& params, const ForwardTrace& trace,
                       const Eigen::MatrixXd& d_output) {
  const MlpSpec& spec = params.spec();
  const int L = spec.layer_count();
  if (d_output.rows() != trace.output.rows() || d_output.cols() != trace.output.cols())
    throw std::invalid_argument("backward: gradient shape does not match the recorded output");
  if (static_cast<int>(trace.pre.size()) != L)
    throw std::invalid_argument("backward: trace does not match network depth");
  const bool concrete = spec.dropout_mode == DropoutMode::concrete;

  NetworkParams grad(spec);
  Eigen::MatrixXd g = d_output;
  for (int l = L - 1; l >= 0; --l) {
    if (l == 0) {
      grad.weight(0) = trace.input.transpose() * g;
    } else {
      grad.weight(l) = trace.activation[l - 1].cwiseProduct(trace.mask[l - 1]).transpose() * g;
    }
    grad.bias(l) = g.colwise().sum().transpose();
    if (l == 0) break;

    const int h = l - 1;
    Eigen::MatrixXd d_in = g * params.weight(l).transpose();
    if (concrete) {
      const double p = params.drop_probability(h);
      const double t = trace.temperature;
      const Eigen::MatrixXd& d = trace.drop_relax[h];
      // d(mask)/d(logit) = (-d(1-d)/t + (1-d) p) / (1-p)
      Eigen::ArrayXXd dmask =
          (-(d.array() * (1.0 - d.array())) / t + (1.0 - d.array()) * p) / (1.0 - p);
      grad.p_logit(h) = (d_in.array() * trace.activation[h].array() * dmask).sum();
    }
    g = d_in.cwiseProduct(trace.mask[h]);
    g = (trace.pre[h].array() > 0.0).select(g, 0.0);
  }
  return grad;
}

double concrete_regularizer(const NetworkParams& params, const ConcreteRegularization& reg,
                            NetworkParams* grad) {
  const MlpSpec& spec = params.spec();
  if (spec.dropout_mode != DropoutMode::concrete) return 0.0;
  double total = 0.0;
  for (int h = 0; h < static_cast<int>(spec.hidden_widths.size()); ++h) {
    const double logit = params.p_logit(h);
    const double p = sigmoid(logit);
    const double width = spec.hidden_widths[h];
    auto w = params.weight(h + 1);
    const double sq = w.squaredNorm();
    const double entropy_term = p * std::log(p) + (1.0 - p) * std::log1p(-p);
    total += reg.weight * sq / (1.0 - p) + reg.dropout * width * entropy_term;
    if (grad) {
      grad->weight(h + 1) += (2.0 * reg.weight / (1.0 - p)) * w;
      grad->p_logit(h) += reg.weight * sq * p / (1.0 - p) + reg.dropout * width * logit * p * (1.0 - p);
    }
  }
  return total;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& c) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    double m_hat = state.m[i] / bc1;
    double v_hat = state.v[i] / bc2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw ConfigError("train: epochs >= 0 and batch_size >= 1");
  if (!(adam.learning_rate > 0.0) || !(adam.beta1 >= 0.0) || !(adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0) || !(adam.beta2 < 1.0) || !(adam.epsilon > 0.0))
    throw ConfigError("train: invalid Adam settings");
}

TrainResult train(const MlpSpec& spec, const TrainBatch& data, const TrainConfig& config,
                  std::uint64_t seed) {
  spec.validate();
  Rng init_rng(derive_seed(seed, "init"));
  return train(initialize(spec, init_rng), data, config, seed);
}

TrainResult train(NetworkParams init, const TrainBatch& data, const TrainConfig& config,
                  std::uint64_t seed) {
  config.validate();
  TrainResult result{std::move(init), {}};
  NetworkParams& params = result.params;
  const MlpSpec& spec = params.spec();
  const Eigen::Index n = data.inputs.rows();
  if (n == 0) throw std::invalid_argument("train: empty dataset");
  if (data.targets.rows() != n || data.inputs.cols() != spec.input_dim ||
      data.targets.cols() != spec.output_dim)
    throw std::invalid_argument("train: dataset shape does not match the network");
  if (!data.inputs.allFinite() || !data.targets.allFinite())
    throw std::invalid_argument("train: dataset contains non-finite values");

  Rng rng(derive_seed(seed, "minibatch"));
  AdamState adam;
  const ConcreteRegularization reg{config.length_scale * config.length_scale / n, 2.0 / n};

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      Eigen::Index count = std::min<Eigen::Index>(config.batch_size, n - start);
      std::vector<Eigen::Index> idx(order.begin() + start, order.begin() + start + count);
      Eigen::MatrixXd x = data.inputs(idx, Eigen::all);
      Eigen::MatrixXd y = data.targets(idx, Eigen::all);
      DropoutNoise noise = sample_noise(spec, static_cast<int>(count), rng);
      ForwardTrace trace;
      try {
        trace = forward(params, x, noise);
      } catch (const NumericError& e) {
        throw TrainingDiverged(std::string("train: ") + e.what() + " at epoch " +
                               std::to_string(epoch));
      }
      LossGradient lg = heteroscedastic_batch(trace.output, y);
      NetworkParams grad = backward(params, trace, lg.d_output);
      concrete_regularizer(params, reg, &grad);
      adam_step(params.values(), grad.values(), adam, config.adam);
      epoch_loss += lg.per_example.sum();
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss) || !params.all_finite())
      throw TrainingDiverged("train: loss diverged at epoch " + std::to_string(epoch));
    result.loss_history.push_back(epoch_loss);
  }
  return result;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& inputs) {
  Standardizer s;
  const Eigen::Index n = inputs.rows();
  s.mean = inputs.colwise().mean().transpose();
  s.scale.resize(inputs.cols());
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
    double var = n > 0 ? (inputs.col(j).array() - s.mean(j)).square().sum() / n : 0.0;
    double sd = std::sqrt(var);
    s.scale(j) = sd > 1e-12 ? sd : 1.0;
  }
  if (n == 0) s.mean.setZero();
  return s;
}

Standardizer Standardizer::identity(int dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& inputs) const {
  return ((inputs.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array())
      .matrix();
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
  return ((x - mean).array() / scale.array()).matrix();
}

}  // namespace ebnn::nn
