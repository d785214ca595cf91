#pragma once

// Command-line front end for the experiment drivers. Flags left unset take
// the defaults of the chosen experiment (see defaults_for).

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "berngrad/experiments.hpp"

namespace berngrad::cli {

struct ArgOverrides {
  std::string experiment;
  std::vector<std::string> estimators;
  std::optional<std::size_t> k, iters, trials, variance_every, variance_samples, loss_samples,
      loss_every, n_obs, p, samples;
  std::optional<double> t, lr, tau, snr, lambda, init_theta;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, mode;
  std::vector<double> grid;
  bool record_theta = false;
};

inline void add_options(CLI::App& app, ArgOverrides& a) {
  app.add_option("--experiment", a.experiment,
                 "p1 | p2 | subset | variance-sweep | unbiasedness-audit")
      ->required();
  app.add_option("--estimator", a.estimators,
                 "estimator name, repeatable: exact reinforce arm disarm reinforce_loo "
                 "bitflip1 bitflipk ugc tugc");
  app.add_option("--K", a.k, "dimension");
  app.add_option("--t", a.t, "target t of the toy objectives");
  app.add_option("--lr", a.lr, "learning rate");
  app.add_option("--iters", a.iters, "training iterations");
  app.add_option("--tau", a.tau, "UGC threshold in (0, 0.5]");
  app.add_option("--snr", a.snr, "subset: signal-to-noise ratio");
  app.add_option("--lambda", a.lambda, "subset: support penalty");
  app.add_option("--trials", a.trials, "independent runs per estimator");
  app.add_option("--seed", a.seed, "master seed");
  app.add_option("--out", a.out, "output directory");
  app.add_option("--param-mode", a.mode, "projected-theta | logit-sgd | logit-adam");
  app.add_option("--variance-every", a.variance_every, "probe variance every N steps (0: off)");
  app.add_option("--variance-samples", a.variance_samples, "estimates per variance probe");
  app.add_option("--loss-samples", a.loss_samples, "samples per MC loss estimate (0: off)");
  app.add_option("--loss-every", a.loss_every, "estimate the MC loss every N steps");
  app.add_option("--init-theta", a.init_theta, "constant initial theta");
  app.add_option("--n-obs", a.n_obs, "subset: observations");
  app.add_option("--p", a.p, "subset: features");
  app.add_option("--samples", a.samples, "sweep/audit: Monte Carlo sample size");
  app.add_option("--grid", a.grid, "sweep: values of the last coordinate");
  app.add_flag("--record-theta", a.record_theta, "write theta columns to trajectory files");
}

// Throws std::invalid_argument for values that parse but are not allowed.
inline ExperimentConfig resolve(const ArgOverrides& a) {
  ExperimentConfig c = defaults_for(parse_experiment(a.experiment));
  if (!a.estimators.empty()) c.estimators = a.estimators;
  for (const auto& name : c.estimators) (void)EstimatorKind::parse(name);
  if (a.k) c.k = *a.k;
  if (a.t) c.t = *a.t;
  if (a.lr) c.lr = *a.lr;
  if (a.iters) c.iterations = *a.iters;
  if (a.tau) c.tau = *a.tau;
  if (a.snr) c.snr = *a.snr;
  if (a.lambda) c.lambda = *a.lambda;
  if (a.trials) c.trials = *a.trials;
  if (a.seed) c.seed = *a.seed;
  if (a.out) c.out = *a.out;
  if (a.mode) c.mode = parse_param_mode(*a.mode);
  if (a.variance_every) c.variance_every = *a.variance_every;
  if (a.variance_samples) c.variance_samples = *a.variance_samples;
  if (a.loss_samples) c.loss_samples = *a.loss_samples;
  if (a.loss_every) c.loss_every = *a.loss_every;
  if (a.init_theta) c.init_theta = *a.init_theta;
  if (a.n_obs) c.n_obs = *a.n_obs;
  if (a.p) c.n_features = *a.p;
  if (a.samples) c.samples = *a.samples;
  if (!a.grid.empty()) c.sweep_grid = a.grid;
  c.record_theta = a.record_theta;
  if (c.experiment == Experiment::Subset) c.k = c.n_features;
  c.validate();
  return c;
}

// Full program: parse, run, return an exit code.
inline int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gradient estimators for Bernoulli latent-variable objectives"};
  ArgOverrides a;
  add_options(app, a);
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  ExperimentConfig c;
  try {
    c = resolve(a);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return run_command(c, out, err);
}

}  // namespace berngrad::cli
