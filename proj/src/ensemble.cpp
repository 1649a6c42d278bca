#include "ebnn/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>

namespace ebnn::ensemble {

PredictiveSamples mc_sample(const nn::BayesianNetwork& net, const Eigen::VectorXd& observation,
                            int K, Rng& rng) {
  if (K < 1) throw std::invalid_argument("mc_sample: K must be >= 1");
  const nn::MlpSpec& spec = net.spec();
  Eigen::RowVectorXd x = net.input_norm.apply(observation).transpose();
  nn::DropoutNoise noise = nn::sample_noise(spec, K, rng);
  PredictiveSamples out;
  out.means.resize(K, spec.output_dim);
  out.aleatoric_vars.resize(K);
  // Row-at-a-time passes keep every sample bit-identical to a single pass.
  nn::DropoutNoise row;
  row.uniforms.resize(noise.uniforms.size());
  for (int k = 0; k < K; ++k) {
    for (std::size_t h = 0; h < noise.uniforms.size(); ++h) row.uniforms[h] = noise.uniforms[h].row(k);
    nn::ForwardTrace trace = nn::forward(net.params, x, row);
    out.means.row(k) = trace.output.row(0).head(spec.output_dim);
    out.aleatoric_vars(k) =
        std::exp(std::clamp(trace.output(0, spec.output_dim), -nn::kLogVarianceBound,
                            nn::kLogVarianceBound));
  }
  return out;
}

UncertaintyReport decompose(const PredictiveSamples& samples) {
  const int K = samples.count();
  if (K < 1) throw std::invalid_argument("decompose: no samples");
  const Eigen::Index d = samples.means.cols();
  // Welford accumulation per output dimension.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(d);
  double aleatoric = 0.0;
  for (int k = 0; k < K; ++k) {
    const double n = k + 1;
    for (Eigen::Index j = 0; j < d; ++j) {
      double x = samples.means(k, j);
      double delta = x - mean(j);
      mean(j) += delta / n;
      m2(j) += delta * (x - mean(j));
    }
    aleatoric += (samples.aleatoric_vars(k) - aleatoric) / n;
  }
  UncertaintyReport r;
  r.mean = mean;
  r.epistemic = m2.sum() / K;
  r.aleatoric = aleatoric;
  r.total = r.epistemic + r.aleatoric;
  return r;
}

Selection min_variance_select(std::span<const UncertaintyReport> reports) {
  Selection s;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    double v = reports[i].total;
    if (!std::isfinite(v) || !reports[i].mean.allFinite()) continue;
    if (s.index < 0 || v < best) {
      best = v;
      s.index = static_cast<int>(i);
    }
  }
  if (s.index < 0) throw NoValidLearner();
  s.control = reports[s.index].mean.cwiseMax(-1.0).cwiseMin(1.0);
  return s;
}

Eigen::VectorXd inverse_variance_blend(std::span<const UncertaintyReport> reports) {
  if (reports.empty()) throw std::invalid_argument("inverse_variance_blend: no learners");
  for (const UncertaintyReport& r : reports)
    if (r.total == 0.0) return r.mean.cwiseMax(-1.0).cwiseMin(1.0);
  Eigen::VectorXd num = Eigen::VectorXd::Zero(reports.front().mean.size());
  double den = 0.0;
  for (const UncertaintyReport& r : reports) {
    if (!(r.total > 0.0)) throw std::invalid_argument("inverse_variance_blend: totals must be > 0");
    num += r.mean / r.total;
    den += 1.0 / r.total;
  }
  return (num / den).cwiseMax(-1.0).cwiseMin(1.0);
}

namespace {

struct LearnerOutcome {
  UncertaintyReport report;
  bool valid = false;
};

LearnerOutcome evaluate(const nn::BayesianNetwork& net, const Eigen::VectorXd& obs, int K,
                        Rng& rng) {
  LearnerOutcome out;
  try {
    out.report = decompose(mc_sample(net, obs, K, rng));
    out.valid = std::isfinite(out.report.total) && out.report.mean.allFinite();
  } catch (const NumericError&) {
    out.valid = false;
  }
  if (!out.valid) {
    out.report.total = std::numeric_limits<double>::quiet_NaN();
    if (out.report.mean.size() == 0)
      out.report.mean = Eigen::VectorXd::Constant(net.spec().output_dim,
                                                  std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

}  // namespace

EnsembleDecision ensemble_step(std::span<const Eigen::VectorXd> observations,
                               std::span<const nn::BayesianNetwork* const> networks, int K,
                               std::span<Rng> rngs, double t, Execution mode) {
  const std::size_t n = networks.size();
  if (observations.size() != n || rngs.size() != n || n == 0)
    throw std::invalid_argument("ensemble_step: need one observation and one stream per learner");

  std::vector<LearnerOutcome> outcomes(n);
  if (mode == Execution::concurrent && n > 1) {
    std::vector<std::future<LearnerOutcome>> jobs;
    jobs.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      jobs.push_back(std::async(std::launch::async, evaluate, std::cref(*networks[i]),
                                std::cref(observations[i]), K, std::ref(rngs[i])));
    for (std::size_t i = 0; i < n; ++i) outcomes[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < n; ++i)
      outcomes[i] = evaluate(*networks[i], observations[i], K, rngs[i]);
  }

  EnsembleDecision d;
  d.t = t;
  for (auto& o : outcomes) {
    d.reports.push_back(std::move(o.report));
    d.valid.push_back(o.valid);
  }
  Selection s = min_variance_select(d.reports);
  d.selected = s.index;
  d.control = std::move(s.control);
  return d;
}

}  // namespace ebnn::ensemble
