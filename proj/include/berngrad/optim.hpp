#pragma once

// Parameter updates (projected theta-space descent, logit-space SGD and Adam)
// and the training loop that records a Trajectory.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "berngrad/core.hpp"
#include "berngrad/estimators.hpp"
#include "berngrad/objectives.hpp"
#include "berngrad/variance.hpp"

namespace berngrad {

enum class ParamMode { ProjectedTheta, LogitSgd, LogitAdam };

inline std::string_view param_mode_name(ParamMode m) {
  switch (m) {
    case ParamMode::ProjectedTheta: return "projected-theta";
    case ParamMode::LogitSgd: return "logit-sgd";
    case ParamMode::LogitAdam: return "logit-adam";
  }
  return "?";
}

inline ParamMode parse_param_mode(std::string_view s) {
  for (ParamMode m : {ParamMode::ProjectedTheta, ParamMode::LogitSgd, ParamMode::LogitAdam})
    if (s == param_mode_name(m)) return m;
  throw std::invalid_argument("unknown parameterization '" + std::string(s) + "'");
}

struct OptimizerConfig {
  ParamMode mode = ParamMode::ProjectedTheta;
  double learning_rate = 0.8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t iterations = 1000;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0,1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be > 0");
  }
};

// theta' = clamp(theta - lr g, 0, 1)
inline ThetaVec projected_step(const ThetaVec& theta, const GradEstimate& g, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("projected_step: lr must be > 0");
  detail::check_dims(theta.size(), g.size(), "projected_step");
  std::vector<double> out(theta.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = std::clamp(theta[j] - lr * g[j], 0.0, 1.0);
  return ThetaVec(std::move(out));
}

namespace detail {

// d/dphi = d/dtheta * theta (1 - theta)
inline std::vector<double> chain_to_logit(const LogitVec& phi, const GradEstimate& g) {
  check_dims(phi.size(), g.size(), "logit gradient");
  std::vector<double> out(phi.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double th = sigmoid(phi[j]);
    out[j] = g[j] * th * (1.0 - th);
  }
  return out;
}

}  // namespace detail

inline LogitVec logit_step(const LogitVec& phi, const GradEstimate& g_theta, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("logit_step: lr must be > 0");
  const auto g = detail::chain_to_logit(phi, g_theta);
  std::vector<double> out(phi.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = phi[j] - lr * g[j];
  return LogitVec(std::move(out));
}

struct AdamState {
  LogitVec phi;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(LogitVec start)
      : phi(std::move(start)), m(phi.size(), 0.0), v(phi.size(), 0.0) {}
};

// Bias-corrected Adam update on the chain-ruled logit gradient.
inline AdamState adam_logit_step(AdamState state, const GradEstimate& g_theta,
                                 const OptimizerConfig& cfg) {
  cfg.validate();
  const auto g = detail::chain_to_logit(state.phi, g_theta);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::vector<double> phi(state.phi.values().begin(), state.phi.values().end());
  for (std::size_t j = 0; j < phi.size(); ++j) {
    state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g[j];
    state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
    const double m_hat = state.m[j] / c1;
    const double v_hat = state.v[j] / c2;
    phi[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
  state.phi = LogitVec(std::move(phi));
  return state;
}

// ---------------------------------------------------------------------------

struct TrajectoryRecord {
  std::size_t iteration = 0;
  double loss_mc = std::numeric_limits<double>::quiet_NaN();  // NaN when disabled
  std::optional<double> loss_exact;
  std::uint64_t evals_cum = 0;  // estimator evaluations only
  std::vector<double> theta;
  std::vector<double> variance;  // empty unless probed at this iteration
};

struct Trajectory {
  std::size_t dim = 0;
  std::vector<TrajectoryRecord> records;

  const TrajectoryRecord& last() const { return records.back(); }
  ThetaVec final_theta() const { return ThetaVec(records.back().theta); }
};

struct TrainingOptions {
  std::size_t variance_every = 0;  // 0 disables variance probes
  std::size_t variance_samples = 100;
  std::size_t loss_samples = 500;  // 0 disables the MC loss estimate
  std::size_t loss_every = 1;      // MC loss every this many iterations, and at the end
  EndpointPolicy endpoint_policy = EndpointPolicy::Freeze;
};

class RunAborted : public std::runtime_error {
 public:
  RunAborted(std::size_t iteration, const std::string& what)
      : std::runtime_error("run aborted at iteration " + std::to_string(iteration) + ": " +
                           what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

namespace detail {

inline double mc_loss(const Objective& f, const ThetaVec& theta, std::size_t samples,
                      const RngStream& rng) {
  if (samples == 0) return std::numeric_limits<double>::quiet_NaN();
  auto eng = rng.with_purpose(Purpose::LossEstimate).engine();
  std::vector<double> vals(samples);
  for (double& v : vals) v = f(sample_bernoulli(theta, eng));
  return pairwise_sum(vals) / static_cast<double>(samples);
}

}  // namespace detail

// Iterates estimator -> update for cfg.iterations steps. Step i draws from
// rng.at_iteration(i); loss and variance probes use their own purposes, so
// enabling them never changes the parameter path.
inline Trajectory run_training(const Objective& objective, const EstimatorKind& kind,
                               const OptimizerConfig& cfg, const ThetaVec& init,
                               const RngStream& rng, const TrainingOptions& opts = {}) {
  cfg.validate();
  if (init.size() != objective.dim())
    throw std::invalid_argument("run_training: init dimension differs from objective");
  if (cfg.iterations >= std::numeric_limits<std::uint32_t>::max())
    throw std::invalid_argument("run_training: too many iterations");
  const std::size_t k = init.size();

  ThetaVec theta = init;
  std::optional<LogitVec> phi;
  std::optional<AdamState> adam;
  if (cfg.mode != ParamMode::ProjectedTheta) {
    phi = logit_transform(init);
    if (cfg.mode == ParamMode::LogitAdam) adam.emplace(*phi);
  }

  Trajectory traj;
  traj.dim = k;
  traj.records.reserve(cfg.iterations + 1);
  std::uint64_t evals = 0;

  auto record = [&](std::size_t it) {
    const RngStream here = rng.at_iteration(static_cast<std::uint32_t>(it));
    TrajectoryRecord r;
    r.iteration = it;
    if (opts.loss_every > 0 && (it % opts.loss_every == 0 || it == cfg.iterations))
      r.loss_mc = detail::mc_loss(objective, theta, opts.loss_samples, here);
    r.loss_exact = objective.expected_value(theta);
    r.evals_cum = evals;
    r.theta.assign(theta.begin(), theta.end());
    if (opts.variance_every > 0 && it % opts.variance_every == 0) {
      if (kind.tag() == Estimator::Exact) {
        r.variance.assign(k, 0.0);
      } else {
        // Runs are the unit of parallelism, so probes stay on this thread.
        r.variance = summarize(mc_samples(objective, theta, kind, opts.variance_samples,
                                          here.with_purpose(Purpose::VarianceProbe),
                                          opts.endpoint_policy, 1))
                         .variance;
      }
    }
    traj.records.push_back(std::move(r));
  };

  record(0);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    GradEstimate g;
    try {
      g = estimate(kind, objective, theta, rng.at_iteration(static_cast<std::uint32_t>(it)),
                   opts.endpoint_policy);
    } catch (const std::domain_error& e) {
      throw RunAborted(it, e.what());
    } catch (const std::invalid_argument& e) {
      throw RunAborted(it, e.what());
    }
    evals += g.evals;
    switch (cfg.mode) {
      case ParamMode::ProjectedTheta:
        theta = projected_step(theta, g, cfg.learning_rate);
        break;
      case ParamMode::LogitSgd:
        phi = logit_step(*phi, g, cfg.learning_rate);
        theta = sigmoid_transform(*phi);
        break;
      case ParamMode::LogitAdam:
        adam = adam_logit_step(std::move(*adam), g, cfg);
        theta = sigmoid_transform(adam->phi);
        break;
    }
    record(it);
  }
  return traj;
}

// Columns: iter,loss_mc[,loss_exact],evals_cum[,theta_0..][,var_0..]. The
// optional groups appear when any record carries them; missing cells are empty.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj,
                                 bool include_theta) {
  bool has_exact = false, has_var = false;
  for (const auto& r : traj.records) {
    has_exact = has_exact || r.loss_exact.has_value();
    has_var = has_var || !r.variance.empty();
  }
  const auto old_precision = out.precision(17);
  out << "iter,loss_mc";
  if (has_exact) out << ",loss_exact";
  out << ",evals_cum";
  if (include_theta)
    for (std::size_t j = 0; j < traj.dim; ++j) out << ",theta_" << j;
  if (has_var)
    for (std::size_t j = 0; j < traj.dim; ++j) out << ",var_" << j;
  out << '\n';
  for (const auto& r : traj.records) {
    out << r.iteration << ',';
    if (!std::isnan(r.loss_mc)) out << r.loss_mc;
    if (has_exact) {
      out << ',';
      if (r.loss_exact) out << *r.loss_exact;
    }
    out << ',' << r.evals_cum;
    if (include_theta)
      for (double th : r.theta) out << ',' << th;
    if (has_var) {
      for (std::size_t j = 0; j < traj.dim; ++j) {
        out << ',';
        if (!r.variance.empty()) out << r.variance[j];
      }
    }
    out << '\n';
  }
  out.precision(old_precision);
}

}  // namespace berngrad
