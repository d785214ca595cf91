#pragma once

// Experiment drivers behind the `berngrad` command: resolved configuration
// with per-experiment defaults, the runs, and their CSV/JSON outputs.
//
// Output layout (one directory per invocation):
//   config.json                 resolved configuration
//   <est>_trial<NN>.csv         trajectory per training run (p1, p2, subset)
//   aggregate_<est>.csv         mean and standard error across trials
//   final_losses.csv            per-run final losses (p1, p2)
//   support.csv                 per-replicate TPR/FPR (subset)
//   dataset_<NN>.csv            generated regression data (subset)
//   metrics.json                per-estimator summary
//   sweep_<est>.csv             variance sweep
//   audit.csv                   unbiasedness audit

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "berngrad/core.hpp"
#include "berngrad/estimators.hpp"
#include "berngrad/objectives.hpp"
#include "berngrad/optim.hpp"
#include "berngrad/parallel.hpp"
#include "berngrad/variance.hpp"

namespace berngrad::cli {

enum class Experiment { P1, P2, Subset, VarianceSweep, UnbiasednessAudit };

inline std::string_view experiment_name(Experiment e) {
  switch (e) {
    case Experiment::P1: return "p1";
    case Experiment::P2: return "p2";
    case Experiment::Subset: return "subset";
    case Experiment::VarianceSweep: return "variance-sweep";
    case Experiment::UnbiasednessAudit: return "unbiasedness-audit";
  }
  return "?";
}

inline Experiment parse_experiment(std::string_view s) {
  for (Experiment e : {Experiment::P1, Experiment::P2, Experiment::Subset,
                       Experiment::VarianceSweep, Experiment::UnbiasednessAudit})
    if (s == experiment_name(e)) return e;
  throw std::invalid_argument("unknown experiment '" + std::string(s) + "'");
}

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRun = 2;

// The audit refuses sample sizes below this; standard errors would be too
// wide for a 4-SE check to mean anything.
inline constexpr std::size_t kMinAuditSamples = 1000;
inline constexpr std::size_t kMaxAuditDim = 8;

// Variance clip applied to DisARM and Reinforce-LOO curves, and the window of
// the trailing moving average applied to every variance curve.
inline constexpr double kVarianceClip = 10000.0;
inline constexpr std::size_t kSmoothingWindow = 20;

struct ExperimentConfig {
  Experiment experiment = Experiment::P1;
  std::vector<std::string> estimators;
  std::size_t k = 20;
  double t = 0.499;
  double lr = 0.8;
  std::size_t iterations = 1000;
  std::optional<double> tau;  // UGC threshold; unset means 1/(2K)
  ParamMode mode = ParamMode::ProjectedTheta;
  std::optional<double> init_theta;  // unset means logistic-normal init
  std::size_t variance_every = 1;
  std::size_t variance_samples = 100;
  std::size_t loss_samples = 500;
  std::size_t loss_every = 1;
  std::size_t trials = 10;
  std::uint64_t seed = 1;
  // subset
  std::size_t n_obs = 60;
  std::size_t n_features = 200;
  double snr = 3.81;
  double lambda = 1.0;
  // variance sweep and audit
  std::vector<double> sweep_grid;
  std::size_t samples = 100000;

  std::string out = "out";
  bool record_theta = false;

  bool is_training() const {
    return experiment == Experiment::P1 || experiment == Experiment::P2 ||
           experiment == Experiment::Subset;
  }
  // Dimension of theta for this experiment.
  std::size_t dim() const { return experiment == Experiment::Subset ? n_features : k; }

  EstimatorKind kind(const std::string& name) const {
    const EstimatorKind parsed = EstimatorKind::parse(name);
    return parsed.tag() == Estimator::Ugc ? EstimatorKind::ugc(tau) : parsed;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
    if (estimators.empty()) fail("at least one estimator is required");
    for (const auto& name : estimators) {
      const auto kd = kind(name);
      if (kd.tag() == Estimator::Exact && dim() > kExactMaxDim)
        fail("exact estimator needs K <= " + std::to_string(kExactMaxDim));
    }
    if (tau) EstimatorKind::validate_tau(*tau);
    if (dim() < 1) fail("K must be >= 1");
    if (trials < 1) fail("trials must be >= 1");
    if (trials >= std::numeric_limits<std::uint32_t>::max()) fail("too many trials");
    if (is_training()) {
      OptimizerConfig oc;
      oc.mode = mode;
      oc.learning_rate = lr;
      oc.iterations = iterations;
      oc.validate();
      if (iterations >= std::numeric_limits<std::uint32_t>::max()) fail("too many iterations");
      if (variance_every > 0 && variance_samples < 2)
        fail("variance probes need at least 2 samples");
      if (init_theta) {
        const double v = *init_theta;
        const bool logit = mode != ParamMode::ProjectedTheta;
        if (!(v >= 0.0 && v <= 1.0) || (logit && (v == 0.0 || v == 1.0)))
          fail("initial theta must lie in [0,1], and strictly inside for logit modes");
      }
    }
    if (experiment == Experiment::Subset) {
      if (n_obs < 1 || n_features < 1) fail("subset needs n >= 1 and p >= 1");
      if (!(snr > 0.0)) fail("SNR must be positive");
      if (!(lambda >= 0.0)) fail("lambda must be >= 0");
    }
    if (experiment == Experiment::VarianceSweep) {
      if (sweep_grid.empty()) fail("variance sweep needs a grid");
      for (double g : sweep_grid)
        if (!(g > 0.0 && g < 1.0)) fail("sweep grid values must lie in (0,1)");
      if (samples < 2) fail("variance sweep needs at least 2 samples");
    }
    if (experiment == Experiment::UnbiasednessAudit) {
      if (k > kMaxAuditDim) fail("audit needs K <= " + std::to_string(kMaxAuditDim));
      if (samples < kMinAuditSamples)
        fail("audit needs at least " + std::to_string(kMinAuditSamples) +
             " samples; with N = " + std::to_string(samples) +
             " the standard errors are too wide for a 4-SE check to mean anything");
    }
  }

  // Resolved configuration. The output directory is left out so that two
  // runs into different directories produce identical files.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["experiment"] = experiment_name(experiment);
    j["estimators"] = estimators;
    j["seed"] = seed;
    j["trials"] = trials;
    if (is_training()) {
      j["param_mode"] = param_mode_name(mode);
      j["lr"] = lr;
      j["iterations"] = iterations;
      j["init_theta"] = init_theta ? nlohmann::ordered_json(*init_theta)
                                   : nlohmann::ordered_json("logistic-normal");
      j["variance_every"] = variance_every;
      j["variance_samples"] = variance_samples;
      j["loss_samples"] = loss_samples;
      j["loss_every"] = loss_every;
      j["record_theta"] = record_theta;
    }
    if (experiment == Experiment::Subset) {
      j["n"] = n_obs;
      j["p"] = n_features;
      j["snr"] = snr;
      j["lambda"] = lambda;
      j["beta_nonzero"] = {3.0, 2.0, 1.5};
    } else {
      j["K"] = k;
      j["t"] = t;
    }
    j["tau"] = tau ? nlohmann::ordered_json(*tau) : nlohmann::ordered_json("1/(2K)");
    if (experiment == Experiment::VarianceSweep) j["sweep_grid"] = sweep_grid;
    if (experiment == Experiment::VarianceSweep || experiment == Experiment::UnbiasednessAudit)
      j["samples"] = samples;
    return j;
  }
};

inline const std::vector<std::string>& main_estimators() {
  static const std::vector<std::string> names = {"disarm", "reinforce_loo", "bitflip1", "ugc"};
  return names;
}

inline ExperimentConfig defaults_for(Experiment e) {
  ExperimentConfig c;
  c.experiment = e;
  c.estimators = main_estimators();
  switch (e) {
    case Experiment::P1:
      break;
    case Experiment::P2:
      c.mode = ParamMode::LogitSgd;
      c.lr = 2.0;
      c.init_theta = 0.2;
      c.tau = 0.2;
      c.variance_samples = 1000;
      break;
    case Experiment::Subset:
      c.lr = 0.01;
      c.iterations = 2000;
      c.init_theta = 0.1;
      c.tau = 0.33;
      c.variance_every = 10;
      c.variance_samples = 5;
      c.loss_samples = 100;
      c.loss_every = 10;
      c.k = c.n_features;
      break;
    case Experiment::VarianceSweep:
      c.estimators.clear();
      for (Estimator est : EstimatorKind::all())
        c.estimators.emplace_back(EstimatorKind::name_of(est));
      c.sweep_grid = {0.01, 0.025, 0.05, 0.1, 0.3, 0.5};
      c.samples = 100000;
      c.trials = 1;
      break;
    case Experiment::UnbiasednessAudit:
      c.estimators.clear();
      for (Estimator est : EstimatorKind::all())
        if (est != Estimator::Exact) c.estimators.emplace_back(EstimatorKind::name_of(est));
      c.k = 6;
      c.samples = 200000;
      c.trials = 1;
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Output helpers

namespace detail {

inline std::string cell(double v) {
  if (std::isnan(v)) return {};
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << content;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

inline std::string trial_tag(std::size_t i) {
  std::ostringstream s;
  s << std::setw(2) << std::setfill('0') << i;
  return s.str();
}

inline double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? std::numeric_limits<double>::quiet_NaN()
                    : pairwise_sum(xs) / static_cast<double>(xs.size());
}

// Sample standard deviation (n - 1); 0 for a single value.
inline double sd_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return xs.empty() ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  const double m = mean_of(xs);
  std::vector<double> d(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) d[i] = (xs[i] - m) * (xs[i] - m);
  return std::sqrt(pairwise_sum(d) / static_cast<double>(xs.size() - 1));
}

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t h = xs.size() / 2;
  return xs.size() % 2 ? xs[h] : 0.5 * (xs[h - 1] + xs[h]);
}

inline nlohmann::ordered_json number_or_null(double v) {
  return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training experiments (p1, p2, subset)

struct RunSummary {
  std::vector<double> loss_mc;     // per record, NaN when not estimated
  std::vector<double> loss_exact;  // per record, NaN when unavailable
  std::vector<double> var_mean;    // coordinate mean per record, NaN when not probed
  std::vector<double> final_theta;
  std::uint64_t evals = 0;

  double final_loss_exact() const { return loss_exact.back(); }
  double final_loss_mc() const { return loss_mc.back(); }
};

struct TrainingResult {
  std::vector<std::string> estimators;
  std::vector<std::vector<RunSummary>> runs;         // [estimator][trial]
  std::vector<std::vector<SupportMetrics>> support;  // subset only, [estimator][trial]
  std::vector<RegressionDataset> datasets;           // subset only
};

namespace detail {

inline RunSummary summarize_run(const Trajectory& traj) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RunSummary s;
  for (const auto& r : traj.records) {
    s.loss_mc.push_back(r.loss_mc);
    s.loss_exact.push_back(r.loss_exact.value_or(nan));
    s.var_mean.push_back(r.variance.empty() ? nan : mean_of(r.variance));
  }
  s.final_theta = traj.last().theta;
  s.evals = traj.last().evals_cum;
  return s;
}

inline ThetaVec initial_theta(const ExperimentConfig& c, const RngStream& trial) {
  const std::size_t k = c.dim();
  if (c.init_theta) return ThetaVec::filled(k, *c.init_theta);
  // theta_j = sigmoid(eps_j), eps_j ~ N(0, 1)
  auto eng = trial.with_purpose(Purpose::Init).engine();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> th(k);
  for (double& x : th) x = sigmoid(normal(eng));
  return ThetaVec(std::move(th));
}

}  // namespace detail

// Runs every (estimator, trial) pair. Trial i draws its data, initialization
// and training noise from streams derived from (seed, i), shared by all
// estimators. When trial_dir is set, each run's trajectory CSV is written
// there as soon as the run finishes.
inline TrainingResult run_training_experiment(
    const ExperimentConfig& c, const std::optional<std::filesystem::path>& trial_dir = {}) {
  c.validate();
  if (!c.is_training()) throw std::invalid_argument("not a training experiment");
  const std::size_t n_est = c.estimators.size();
  const RngStream root(c.seed);

  std::vector<Objective> objectives;
  TrainingResult res;
  res.estimators = c.estimators;
  for (std::size_t i = 0; i < c.trials; ++i) {
    switch (c.experiment) {
      case Experiment::P1: objectives.push_back(p1(c.k, c.t)); break;
      case Experiment::P2: objectives.push_back(p2(c.k, c.t)); break;
      default: {
        const auto beta = default_beta(c.n_features);
        res.datasets.push_back(gen_regression(c.n_obs, c.n_features, beta,
                                              sigma_for_snr(beta, c.snr), root.split(i),
                                              c.lambda));
        objectives.push_back(subset_objective(res.datasets.back()));
      }
    }
  }

  OptimizerConfig oc;
  oc.mode = c.mode;
  oc.learning_rate = c.lr;
  oc.iterations = c.iterations;
  TrainingOptions opts;
  opts.variance_every = c.variance_every;
  opts.variance_samples = c.variance_samples;
  opts.loss_samples = c.loss_samples;
  opts.loss_every = c.loss_every;

  res.runs.assign(n_est, std::vector<RunSummary>(c.trials));
  parallel_for(n_est * c.trials, [&](std::size_t task) {
    const std::size_t e = task / c.trials, i = task % c.trials;
    const RngStream trial = root.split(i);
    const auto traj = run_training(objectives[i], c.kind(c.estimators[e]), oc,
                                   detail::initial_theta(c, trial), trial.split(1), opts);
    if (trial_dir) {
      std::ostringstream csv;
      write_trajectory_csv(csv, traj, c.record_theta);
      detail::write_file(*trial_dir / (c.estimators[e] + "_trial" + detail::trial_tag(i) + ".csv"),
                         csv.str());
    }
    res.runs[e][i] = detail::summarize_run(traj);
  });

  if (c.experiment == Experiment::Subset) {
    res.support.assign(n_est, {});
    for (std::size_t e = 0; e < n_est; ++e)
      for (std::size_t i = 0; i < c.trials; ++i)
        res.support[e].push_back(support_metrics(ThetaVec(res.runs[e][i].final_theta),
                                                 res.datasets[i].true_support));
  }
  return res;
}

// Columns: iter,loss_mc_mean,loss_mc_se,loss_exact_mean,loss_exact_se,
// var_mean,var_se,var_smoothed. Means are over trials, se = sd / sqrt(trials).
// var_smoothed clips (DisARM and Reinforce-LOO only) and smooths the var_mean
// series over probed iterations. Unavailable cells are empty.
inline std::string aggregate_csv(const std::vector<RunSummary>& runs, bool clip) {
  const std::size_t records = runs.front().loss_mc.size();
  const double root_n = std::sqrt(static_cast<double>(runs.size()));
  auto column = [&](auto member, std::size_t r) {
    std::vector<double> xs;
    for (const auto& run : runs) {
      const double v = (run.*member)[r];
      if (!std::isnan(v)) xs.push_back(v);
    }
    return xs;
  };
  auto se = [&](const std::vector<double>& xs) {
    return xs.size() == runs.size() ? detail::sd_of(xs) / root_n
                                    : std::numeric_limits<double>::quiet_NaN();
  };

  std::vector<double> var_series;
  std::vector<std::size_t> var_rows;
  for (std::size_t r = 0; r < records; ++r) {
    const auto v = column(&RunSummary::var_mean, r);
    if (v.size() == runs.size()) {
      var_series.push_back(detail::mean_of(v));
      var_rows.push_back(r);
    }
  }
  const auto smoothed = clip_and_smooth(
      var_series, clip ? kVarianceClip : std::numeric_limits<double>::infinity(),
      kSmoothingWindow);

  std::ostringstream out;
  out << "iter,loss_mc_mean,loss_mc_se,loss_exact_mean,loss_exact_se,var_mean,var_se,"
         "var_smoothed\n";
  std::size_t next_var = 0;
  for (std::size_t r = 0; r < records; ++r) {
    const auto mc = column(&RunSummary::loss_mc, r);
    const auto ex = column(&RunSummary::loss_exact, r);
    const auto va = column(&RunSummary::var_mean, r);
    const bool full_mc = mc.size() == runs.size(), full_ex = ex.size() == runs.size();
    const bool probed = next_var < var_rows.size() && var_rows[next_var] == r;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out << r << ',' << detail::cell(full_mc ? detail::mean_of(mc) : nan) << ','
        << detail::cell(se(mc)) << ',' << detail::cell(full_ex ? detail::mean_of(ex) : nan)
        << ',' << detail::cell(se(ex)) << ','
        << detail::cell(probed ? var_series[next_var] : nan) << ','
        << detail::cell(probed ? se(va) : nan) << ','
        << detail::cell(probed ? smoothed[next_var] : nan) << '\n';
    if (probed) ++next_var;
  }
  return out.str();
}

inline bool clips_variance(const std::string& estimator) {
  return estimator == "disarm" || estimator == "reinforce_loo";
}

// ---------------------------------------------------------------------------
// Variance sweep

struct SweepRow {
  std::string problem;
  std::string estimator;
  double theta_last = 0.0;
  std::size_t coord = 0;
  double var_mc = 0.0;
  double var_se = 0.0;
  std::optional<double> var_analytic;
};

// theta = (0.5, ..., 0.5, theta_last) for each grid value, on P1 and P2.
// Every estimator at a grid point sees the same replicate streams.
inline std::vector<SweepRow> run_variance_sweep(const ExperimentConfig& c) {
  c.validate();
  const std::vector<std::string> problems = {"p1", "p2"};
  const std::size_t n_est = c.estimators.size(), n_grid = c.sweep_grid.size();
  const std::size_t tasks = problems.size() * n_grid * n_est;
  std::vector<std::vector<SweepRow>> blocks(tasks);
  parallel_for(tasks, [&](std::size_t task) {
    const std::size_t pi = task / (n_grid * n_est);
    const std::size_t gi = (task / n_est) % n_grid;
    const std::size_t ei = task % n_est;
    std::vector<double> th(c.k, 0.5);
    th.back() = c.sweep_grid[gi];
    const ThetaVec theta(th);
    const Objective f = pi == 0 ? p1(c.k, c.t) : p2(c.k, c.t);
    const EstimatorKind kind = c.kind(c.estimators[ei]);
    const RngStream rng = RngStream(c.seed).split(pi).split(gi);
    const auto rep = summarize(mc_samples(f, theta, kind, c.samples, rng,
                                          EndpointPolicy::Reject, 1));
    for (std::size_t j = 0; j < c.k; ++j) {
      SweepRow row{problems[pi], c.estimators[ei], th.back(), j, rep.variance[j],
                   rep.variance_se[j], std::nullopt};
      if (kind.tag() == Estimator::Exact) row.var_analytic = 0.0;
      if (pi == 0 && kind.tag() == Estimator::Bitflip1)
        row.var_analytic = analytic_var_bitflip1_p1(c.k, c.t);
      if (pi == 0 && kind.tag() == Estimator::DisArm)
        row.var_analytic = analytic_var_disarm_p1(theta, j, c.t);
      if (pi == 1 && kind.tag() == Estimator::Bitflip1)
        row.var_analytic = analytic_var_bitflip1_p2(theta, j, c.t);
      blocks[task].push_back(std::move(row));
    }
  });
  std::vector<SweepRow> rows;
  for (auto& b : blocks)
    for (auto& r : b) rows.push_back(std::move(r));
  return rows;
}

// ---------------------------------------------------------------------------
// Unbiasedness audit

struct AuditRow {
  std::string estimator;
  std::size_t coord = 0;
  double exact = 0.0;
  double mean = 0.0;
  double se = 0.0;
  double z = 0.0;
  bool pass = false;
};

struct AuditResult {
  std::vector<double> theta;
  std::vector<AuditRow> rows;

  bool all_pass() const {
    return std::all_of(rows.begin(), rows.end(), [](const AuditRow& r) { return r.pass; });
  }
};

inline constexpr double kAuditZ = 4.0;

// P2 at theta ~ Uniform(0.05, 0.95)^K (drawn once from the seed); each
// estimator's MC mean against exact enumeration, as z = (mean - exact) / se.
inline AuditResult run_unbiasedness_audit(const ExperimentConfig& c) {
  c.validate();
  const RngStream root(c.seed);
  auto eng = root.with_purpose(Purpose::Init).engine();
  AuditResult res;
  res.theta.resize(c.k);
  for (double& x : res.theta) x = 0.05 + 0.9 * eng.uniform();
  const ThetaVec theta(res.theta);
  const auto f = p2(c.k, c.t);
  const auto exact = exact_gradient(f, theta);

  std::vector<std::vector<AuditRow>> blocks(c.estimators.size());
  parallel_for(c.estimators.size(), [&](std::size_t e) {
    const auto rep = summarize(mc_samples(f, theta, c.kind(c.estimators[e]), c.samples,
                                          root.split(1), EndpointPolicy::Reject, 1));
    for (std::size_t j = 0; j < c.k; ++j) {
      AuditRow row;
      row.estimator = c.estimators[e];
      row.coord = j;
      row.exact = exact[j];
      row.mean = rep.mean[j];
      row.se = rep.mean_se(j);
      const double diff = row.mean - row.exact;
      if (row.se > 0.0) {
        row.z = diff / row.se;
        row.pass = std::fabs(row.z) <= kAuditZ;
      } else {
        row.z = 0.0;
        row.pass = std::fabs(diff) <= 1e-12 * (1.0 + std::fabs(row.exact));
      }
      blocks[e].push_back(row);
    }
  });
  for (auto& b : blocks) res.rows.insert(res.rows.end(), b.begin(), b.end());
  return res;
}

// ---------------------------------------------------------------------------
// Commands. Each writes into c.out and returns an exit code; configuration
// errors throw std::invalid_argument (mapped to kExitConfig by run_command).

namespace detail {

inline std::filesystem::path prepare_out(const ExperimentConfig& c) {
  c.validate();
  const std::filesystem::path dir(c.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw std::invalid_argument("cannot create output directory " + c.out);
  write_file(dir / "config.json", c.to_json().dump(2) + "\n");
  return dir;
}

inline void write_training_outputs(const ExperimentConfig& c, const TrainingResult& res,
                                   const std::filesystem::path& dir, std::ostream& log) {
  for (std::size_t e = 0; e < res.estimators.size(); ++e)
    write_file(dir / ("aggregate_" + res.estimators[e] + ".csv"),
               aggregate_csv(res.runs[e], clips_variance(res.estimators[e])));

  nlohmann::ordered_json metrics;
  if (c.experiment == Experiment::Subset) {
    std::ostringstream csv;
    csv << "estimator,replicate,tpr,fpr\n";
    for (std::size_t e = 0; e < res.estimators.size(); ++e) {
      std::vector<double> tpr, fpr;
      for (std::size_t i = 0; i < res.support[e].size(); ++i) {
        const auto& m = res.support[e][i];
        tpr.push_back(m.tpr);
        fpr.push_back(m.fpr);
        csv << res.estimators[e] << ',' << i << ',' << cell(m.tpr) << ',' << cell(m.fpr) << '\n';
      }
      metrics[res.estimators[e]] = {{"tpr_mean", mean_of(tpr)},
                                    {"tpr_sd", sd_of(tpr)},
                                    {"fpr_mean", mean_of(fpr)},
                                    {"fpr_sd", sd_of(fpr)}};
      log << res.estimators[e] << ": TPR " << mean_of(tpr) << " (" << sd_of(tpr) << "), FPR "
          << mean_of(fpr) << " (" << sd_of(fpr) << ")\n";
    }
    write_file(dir / "support.csv", csv.str());
    for (std::size_t i = 0; i < res.datasets.size(); ++i) {
      std::ostringstream d;
      write_dataset_csv(d, res.datasets[i]);
      write_file(dir / ("dataset_" + trial_tag(i) + ".csv"), d.str());
    }
  } else {
    std::ostringstream csv;
    csv << "estimator,trial,loss_exact,loss_mc,evals\n";
    for (std::size_t e = 0; e < res.estimators.size(); ++e) {
      std::vector<double> ex, mc;
      for (std::size_t i = 0; i < res.runs[e].size(); ++i) {
        const auto& run = res.runs[e][i];
        ex.push_back(run.final_loss_exact());
        if (!std::isnan(run.final_loss_mc())) mc.push_back(run.final_loss_mc());
        csv << res.estimators[e] << ',' << i << ',' << cell(run.final_loss_exact()) << ','
            << cell(run.final_loss_mc()) << ',' << run.evals << '\n';
      }
      metrics[res.estimators[e]] = {{"final_loss_exact_mean", number_or_null(mean_of(ex))},
                                    {"final_loss_exact_sd", number_or_null(sd_of(ex))},
                                    {"final_loss_exact_median", number_or_null(median_of(ex))},
                                    {"final_loss_mc_mean", number_or_null(mean_of(mc))}};
      log << res.estimators[e] << ": final expected loss mean " << mean_of(ex) << ", median "
          << median_of(ex) << '\n';
    }
    write_file(dir / "final_losses.csv", csv.str());
  }
  write_file(dir / "metrics.json", metrics.dump(2) + "\n");
}

}  // namespace detail

// Runs a training experiment and writes all of its files into c.out.
inline TrainingResult run_and_write_training(const ExperimentConfig& c, std::ostream& log) {
  const auto dir = detail::prepare_out(c);
  auto res = run_training_experiment(c, dir);
  detail::write_training_outputs(c, res, dir, log);
  return res;
}

inline int cmd_training(const ExperimentConfig& c, std::ostream& log) {
  run_and_write_training(c, log);
  return kExitOk;
}

inline int cmd_p1(const ExperimentConfig& c, std::ostream& log) { return cmd_training(c, log); }
inline int cmd_p2(const ExperimentConfig& c, std::ostream& log) { return cmd_training(c, log); }
inline int cmd_subset(const ExperimentConfig& c, std::ostream& log) {
  return cmd_training(c, log);
}

// One CSV per estimator: problem,theta_last,coord,var_mc,var_mc_se,var_analytic
inline int cmd_variance_sweep(const ExperimentConfig& c, std::ostream& log) {
  const auto dir = detail::prepare_out(c);
  const auto rows = run_variance_sweep(c);
  for (const auto& est : c.estimators) {
    std::ostringstream csv;
    csv << "problem,theta_last,coord,var_mc,var_mc_se,var_analytic\n";
    for (const auto& r : rows) {
      if (r.estimator != est) continue;
      csv << r.problem << ',' << detail::cell(r.theta_last) << ',' << r.coord << ','
          << detail::cell(r.var_mc) << ',' << detail::cell(r.var_se) << ','
          << (r.var_analytic ? detail::cell(*r.var_analytic) : std::string()) << '\n';
    }
    detail::write_file(dir / ("sweep_" + est + ".csv"), csv.str());
  }
  log << "wrote " << c.estimators.size() << " sweep files to " << dir.string() << '\n';
  return kExitOk;
}

// Prints the z-score table; audit.csv has columns
// estimator,coord,exact,mc_mean,se,z,pass. Exit kExitRun if any |z| > 4.
inline int cmd_unbiasedness_audit(const ExperimentConfig& c, std::ostream& log) {
  const auto dir = detail::prepare_out(c);
  const auto res = run_unbiasedness_audit(c);
  std::ostringstream csv;
  csv << "estimator,coord,exact,mc_mean,se,z,pass\n";
  log << "theta =";
  for (double x : res.theta) log << ' ' << std::setprecision(4) << x;
  log << "\n" << std::left << std::setw(15) << "estimator" << std::setw(7) << "coord"
      << std::setw(12) << "exact" << std::setw(12) << "mc_mean" << std::setw(11) << "se"
      << std::setw(9) << "z" << "result\n";
  for (const auto& r : res.rows) {
    csv << r.estimator << ',' << r.coord << ',' << detail::cell(r.exact) << ','
        << detail::cell(r.mean) << ',' << detail::cell(r.se) << ',' << detail::cell(r.z) << ','
        << (r.pass ? "true" : "false") << '\n';
    log << std::left << std::setw(15) << r.estimator << std::setw(7) << r.coord
        << std::setw(12) << std::setprecision(5) << r.exact << std::setw(12) << r.mean
        << std::setw(11) << std::setprecision(3) << r.se << std::setw(9) << std::setprecision(3)
        << r.z << (r.pass ? "PASS" : "FAIL") << '\n';
  }
  log << std::right;
  detail::write_file(dir / "audit.csv", csv.str());
  log << (res.all_pass() ? "all estimators within 4 SE\n" : "audit FAILED\n");
  return res.all_pass() ? kExitOk : kExitRun;
}

// Dispatches on c.experiment and maps failures to exit codes.
inline int run_command(const ExperimentConfig& c, std::ostream& log, std::ostream& err) {
  try {
    switch (c.experiment) {
      case Experiment::P1: return cmd_p1(c, log);
      case Experiment::P2: return cmd_p2(c, log);
      case Experiment::Subset: return cmd_subset(c, log);
      case Experiment::VarianceSweep: return cmd_variance_sweep(c, log);
      case Experiment::UnbiasednessAudit: return cmd_unbiasedness_audit(c, log);
    }
  } catch (const RunAborted& e) {
    err << "error: " << e.what() << '\n';
    return kExitRun;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRun;
  }
  return kExitConfig;
}

}  // namespace berngrad::cli
