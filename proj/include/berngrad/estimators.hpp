#pragma once

// Unbiased gradient estimators for grad_theta E_{z ~ p_theta}[f(z)] with
// factorial Bernoulli p_theta.
//
// Every estimator comes in two layers:
//   * `*_from(...)` evaluates the estimator on explicitly supplied draws
//     (z, the coupled pair, the coordinate q). Deterministic; used by tests
//     that replay fixed draws.
//   * the plain function draws from an RngStream and calls `*_from`.
// Coordinate uniforms always come from Purpose::Coupling and coordinate
// choices from Purpose::Categorical, so e.g. ugc and disarm called with the
// same stream see the same (z, z~).

#include <algorithm>
#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "berngrad/core.hpp"

namespace berngrad {

template <class F>
concept ObjectiveFn =
    std::invocable<const F&, const BinaryVec&> &&
    std::convertible_to<std::invoke_result_t<const F&, const BinaryVec&>, double>;

// What to do with coordinates at theta_j in {0,1} for estimators whose
// weights are undefined there (Reinforce, ARM, Reinforce-LOO).
enum class EndpointPolicy {
  Reject,  // throw std::domain_error
  Freeze,  // report a zero gradient for that coordinate
};

enum class Estimator {
  Exact,
  Reinforce,
  Arm,
  DisArm,
  ReinforceLoo,
  Bitflip1,
  BitflipK,
  Ugc,
  TUgc,
};

// Largest K accepted by exact enumeration.
inline constexpr std::size_t kExactMaxDim = 25;

class EstimatorKind {
 public:
  constexpr EstimatorKind(Estimator tag = Estimator::DisArm) : tag_(tag) {}

  static EstimatorKind ugc(std::optional<double> tau = std::nullopt) {
    EstimatorKind k(Estimator::Ugc);
    if (tau) {
      validate_tau(*tau);
      k.tau_ = tau;
    }
    return k;
  }

  Estimator tag() const noexcept { return tag_; }
  std::optional<double> tau() const noexcept { return tau_; }

  // Threshold used for dimension k; defaults to 1/(2K).
  double tau_for(std::size_t k) const {
    return tau_.value_or(0.5 / static_cast<double>(k));
  }

  static void validate_tau(double tau) {
    if (!(tau > 0.0 && tau <= 0.5))
      throw std::invalid_argument("UGC threshold tau must lie in (0, 0.5]");
  }

  std::string name() const { return std::string(name_of(tag_)); }

  static constexpr std::string_view name_of(Estimator e) {
    switch (e) {
      case Estimator::Exact: return "exact";
      case Estimator::Reinforce: return "reinforce";
      case Estimator::Arm: return "arm";
      case Estimator::DisArm: return "disarm";
      case Estimator::ReinforceLoo: return "reinforce_loo";
      case Estimator::Bitflip1: return "bitflip1";
      case Estimator::BitflipK: return "bitflipk";
      case Estimator::Ugc: return "ugc";
      case Estimator::TUgc: return "tugc";
    }
    return "?";
  }

  static EstimatorKind parse(std::string_view name) {
    for (Estimator e : all())
      if (name == name_of(e)) return EstimatorKind(e);
    throw std::invalid_argument("unknown estimator '" + std::string(name) + "'");
  }

  static constexpr std::array<Estimator, 9> all() {
    return {Estimator::Exact,        Estimator::Reinforce, Estimator::Arm,
            Estimator::DisArm,       Estimator::ReinforceLoo, Estimator::Bitflip1,
            Estimator::BitflipK,     Estimator::Ugc,       Estimator::TUgc};
  }

  // Upper bound on objective evaluations per call for dimension k.
  std::uint64_t eval_budget(std::size_t k) const {
    switch (tag_) {
      case Estimator::Exact: return std::uint64_t{1} << k;
      case Estimator::Reinforce: return 1;
      case Estimator::Arm:
      case Estimator::DisArm:
      case Estimator::ReinforceLoo:
      case Estimator::Bitflip1: return 2;
      case Estimator::BitflipK: return k + 1;
      case Estimator::Ugc: return 3;
      case Estimator::TUgc: return 4;
    }
    return 0;
  }

  friend bool operator==(const EstimatorKind&, const EstimatorKind&) = default;

 private:
  Estimator tag_;
  std::optional<double> tau_;
};

namespace detail {

inline void check_budget(std::string_view who, std::uint64_t evals,
                         std::uint64_t budget) {
  if (evals > budget)
    throw std::logic_error(std::string(who) + ": used " + std::to_string(evals) +
                           " evaluations, budget " + std::to_string(budget));
}

inline void check_dims(std::size_t a, std::size_t b, std::string_view who) {
  if (a != b)
    throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

inline void require_interior(const ThetaVec& theta, EndpointPolicy policy,
                             std::string_view who) {
  if (policy == EndpointPolicy::Reject && !theta.all_interior())
    throw std::domain_error(std::string(who) +
                            ": theta has an entry at 0 or 1 (score undefined)");
}

// Wraps an objective and counts calls.
template <ObjectiveFn F>
class Counted {
 public:
  explicit Counted(const F& f) : f_(f) {}
  double operator()(const BinaryVec& z) {
    ++count_;
    return static_cast<double>(f_(z));
  }
  std::uint64_t count() const noexcept { return count_; }

 private:
  const F& f_;
  std::uint64_t count_ = 0;
};

inline double sign_from(std::uint8_t bit) { return bit ? -1.0 : 1.0; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Exact enumeration

// g_j = E[f | z_j = 1] - E[f | z_j = 0], by summing over all 2^K states.
template <ObjectiveFn F>
GradEstimate exact_gradient(const F& f, const ThetaVec& theta) {
  const std::size_t k = theta.size();
  if (k > kExactMaxDim)
    throw std::invalid_argument("exact_gradient: K = " + std::to_string(k) +
                                " exceeds the enumeration guard " +
                                std::to_string(kExactMaxDim));
  GradEstimate out{std::vector<double>(k, 0.0), 0};
  BinaryVec z(k);
  std::vector<double> prefix(k + 1), suffix(k + 1);
  const std::uint64_t states = std::uint64_t{1} << k;
  for (std::uint64_t mask = 0; mask < states; ++mask) {
    for (std::size_t i = 0; i < k; ++i) z[i] = (mask >> i) & 1u;
    const double fz = static_cast<double>(f(z));
    ++out.evals;
    prefix[0] = 1.0;
    for (std::size_t i = 0; i < k; ++i)
      prefix[i + 1] = prefix[i] * (z[i] ? theta[i] : 1.0 - theta[i]);
    suffix[k] = 1.0;
    for (std::size_t i = k; i-- > 0;)
      suffix[i] = suffix[i + 1] * (z[i] ? theta[i] : 1.0 - theta[i]);
    for (std::size_t j = 0; j < k; ++j) {
      const double others = prefix[j] * suffix[j + 1];
      out.g[j] += (z[j] ? fz : -fz) * others;
    }
  }
  return out;
}

// E_{p_theta}[f] by enumeration.
template <ObjectiveFn F>
double exact_expectation(const F& f, const ThetaVec& theta) {
  const std::size_t k = theta.size();
  if (k > kExactMaxDim)
    throw std::invalid_argument("exact_expectation: K exceeds enumeration guard");
  BinaryVec z(k);
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
    double p = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      z[i] = (mask >> i) & 1u;
      p *= z[i] ? theta[i] : 1.0 - theta[i];
    }
    if (p != 0.0) total += p * static_cast<double>(f(z));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Reinforce: f(z) * d/dtheta log p(z; theta)

template <ObjectiveFn F>
GradEstimate reinforce_from(const F& f, const ThetaVec& theta, const BinaryVec& z,
                            EndpointPolicy policy = EndpointPolicy::Reject) {
  detail::check_dims(theta.size(), z.size(), "reinforce");
  detail::require_interior(theta, policy, "reinforce");
  detail::Counted<F> eval(f);
  const double fz = eval(z);
  GradEstimate out{std::vector<double>(theta.size(), 0.0), 0};
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (!theta.interior(j)) continue;
    out.g[j] = z[j] ? fz / theta[j] : -fz / (1.0 - theta[j]);
  }
  out.evals = eval.count();
  detail::check_budget("reinforce", out.evals, 1);
  return out;
}

template <ObjectiveFn F>
GradEstimate reinforce(const F& f, const ThetaVec& theta, const RngStream& rng,
                       EndpointPolicy policy = EndpointPolicy::Reject) {
  detail::require_interior(theta, policy, "reinforce");
  auto eng = rng.with_purpose(Purpose::Coupling).engine();
  return reinforce_from(f, theta, sample_bernoulli(theta, eng), policy);
}

// ---------------------------------------------------------------------------
// ARM in theta-space: (f(z) - f(z~)) (u - 1/2) / (theta (1 - theta))

template <ObjectiveFn F>
GradEstimate arm_from(const F& f, const ThetaVec& theta, const CoupledDraw& d,
                      EndpointPolicy policy = EndpointPolicy::Reject) {
  detail::check_dims(theta.size(), d.z.size(), "arm");
  detail::require_interior(theta, policy, "arm");
  detail::Counted<F> eval(f);
  const double diff = eval(d.z) - eval(d.z_tilde);
  GradEstimate out{std::vector<double>(theta.size(), 0.0), 0};
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (!theta.interior(j)) continue;
    out.g[j] = diff * (d.u[j] - 0.5) / (theta[j] * (1.0 - theta[j]));
  }
  out.evals = eval.count();
  detail::check_budget("arm", out.evals, 2);
  return out;
}

template <ObjectiveFn F>
GradEstimate arm(const F& f, const ThetaVec& theta, const RngStream& rng,
                 EndpointPolicy policy = EndpointPolicy::Reject) {
  detail::require_interior(theta, policy, "arm");
  return arm_from(f, theta, sample_coupled(theta, rng.with_purpose(Purpose::Coupling)),
                  policy);
}

// ---------------------------------------------------------------------------
// DisARM: 1/2 (f(z) - f(z~)) / min(theta_j, 1 - theta_j) [z_j != z~_j] (-1)^{z~_j}

namespace detail {

inline double disarm_coordinate(const ThetaVec& theta, const CoupledDraw& d,
                                double diff, std::size_t j) {
  if (d.z[j] == d.z_tilde[j]) return 0.0;
  return 0.5 * diff / theta.boundary_distance(j) * sign_from(d.z_tilde[j]);
}

}  // namespace detail

template <ObjectiveFn F>
GradEstimate disarm_from(const F& f, const ThetaVec& theta, const CoupledDraw& d) {
  detail::check_dims(theta.size(), d.z.size(), "disarm");
  detail::Counted<F> eval(f);
  const double diff = eval(d.z) - eval(d.z_tilde);
  GradEstimate out{std::vector<double>(theta.size(), 0.0), 0};
  for (std::size_t j = 0; j < theta.size(); ++j)
    out.g[j] = detail::disarm_coordinate(theta, d, diff, j);
  out.evals = eval.count();
  detail::check_budget("disarm", out.evals, 2);
  return out;
}

template <ObjectiveFn F>
GradEstimate disarm(const F& f, const ThetaVec& theta, const RngStream& rng) {
  return disarm_from(f, theta,
                     sample_coupled(theta, rng.with_purpose(Purpose::Coupling)));
}

// ---------------------------------------------------------------------------
// Reinforce leave-one-out with two independent samples.

template <ObjectiveFn F>
GradEstimate reinforce_loo_from(const F& f, const ThetaVec& theta,
                                const BinaryVec& z1, const BinaryVec& z2,
                                EndpointPolicy policy = EndpointPolicy::Reject) {
  detail::check_dims(theta.size(), z1.size(), "reinforce_loo");
  detail::check_dims(theta.size(), z2.size(), "reinforce_loo");
  detail::require_interior(theta, policy, "reinforce_loo");
  detail::Counted<F> eval(f);
  const double f1 = eval(z1);
  const double f2 = eval(z2);
  GradEstimate out{std::vector<double>(theta.size(), 0.0), 0};
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (!theta.interior(j)) continue;
    const double th = theta[j];
    out.g[j] = ((f1 - f2) * (z1[j] - th) + (f2 - f1) * (z2[j] - th)) /
               (2.0 * th * (1.0 - th));
  }
  out.evals = eval.count();
  detail::check_budget("reinforce_loo", out.evals, 2);
  return out;
}

template <ObjectiveFn F>
GradEstimate reinforce_loo(const F& f, const ThetaVec& theta, const RngStream& rng,
                           EndpointPolicy policy = EndpointPolicy::Reject) {
  detail::require_interior(theta, policy, "reinforce_loo");
  auto e1 = rng.with_purpose(Purpose::Coupling).engine();
  auto e2 = rng.with_purpose(Purpose::Independent).engine();
  const BinaryVec z1 = sample_bernoulli(theta, e1);
  const BinaryVec z2 = sample_bernoulli(theta, e2);
  return reinforce_loo_from(f, theta, z1, z2, policy);
}

// ---------------------------------------------------------------------------
// Bit flips

// bitflip-1 on a given sample z and coordinate q (0-based):
// g_q = K (-1)^{z_q} (f(z with bit q flipped) - f(z)), all other entries 0.
// Independent of theta except through how z and q were drawn.
template <ObjectiveFn F>
GradEstimate bitflip1_from(const F& f, const BinaryVec& z, std::size_t q) {
  const std::size_t k = z.size();
  if (q >= k) throw std::out_of_range("bitflip1: coordinate out of range");
  detail::Counted<F> eval(f);
  BinaryVec flipped = z;
  flipped[q] ^= 1u;
  const double fz = eval(z);
  const double ff = eval(flipped);
  GradEstimate out{std::vector<double>(k, 0.0), 0};
  out.g[q] = static_cast<double>(k) * detail::sign_from(z[q]) * (ff - fz);
  out.evals = eval.count();
  detail::check_budget("bitflip1", out.evals, 2);
  return out;
}

template <ObjectiveFn F>
GradEstimate bitflip1(const F& f, const ThetaVec& theta, const RngStream& rng) {
  auto ez = rng.with_purpose(Purpose::Coupling).engine();
  auto eq = rng.with_purpose(Purpose::Categorical).engine();
  const BinaryVec z = sample_bernoulli(theta, ez);
  return bitflip1_from(f, z, eq.index(theta.size()));
}

// bitflip-K: g_j = f(z with z_j = 1) - f(z with z_j = 0) for every j.
// f(z) is shared, so the cost is K + 1 evaluations.
template <ObjectiveFn F>
GradEstimate bitflip_k_from(const F& f, const BinaryVec& z) {
  const std::size_t k = z.size();
  detail::Counted<F> eval(f);
  const double fz = eval(z);
  GradEstimate out{std::vector<double>(k, 0.0), 0};
  BinaryVec w = z;
  for (std::size_t j = 0; j < k; ++j) {
    w[j] ^= 1u;
    const double fw = eval(w);
    w[j] ^= 1u;
    out.g[j] = z[j] ? fz - fw : fw - fz;
  }
  out.evals = eval.count();
  detail::check_budget("bitflip_k", out.evals, k + 1);
  return out;
}

template <ObjectiveFn F>
GradEstimate bitflip_k(const F& f, const ThetaVec& theta, const RngStream& rng) {
  auto ez = rng.with_purpose(Purpose::Coupling).engine();
  return bitflip_k_from(f, sample_bernoulli(theta, ez));
}

// ---------------------------------------------------------------------------
// UGC: per coordinate, bitflip-1 if min(theta_j, 1 - theta_j) < tau, DisARM
// otherwise. The bitflip part reuses the coupled z and samples q over all K
// coordinates.

template <ObjectiveFn F>
GradEstimate ugc_from(const F& f, const ThetaVec& theta, double tau,
                      const CoupledDraw& d, std::size_t q) {
  EstimatorKind::validate_tau(tau);
  const std::size_t k = theta.size();
  detail::check_dims(k, d.z.size(), "ugc");
  if (q >= k) throw std::out_of_range("ugc: coordinate out of range");

  std::vector<bool> boundary(k);
  bool any_interior = false;
  for (std::size_t j = 0; j < k; ++j) {
    boundary[j] = theta.boundary_distance(j) < tau;
    any_interior = any_interior || !boundary[j];
  }

  detail::Counted<F> eval(f);
  std::optional<double> fz;
  GradEstimate out{std::vector<double>(k, 0.0), 0};
  if (any_interior) {
    fz = eval(d.z);
    const double diff = *fz - eval(d.z_tilde);
    for (std::size_t j = 0; j < k; ++j)
      if (!boundary[j]) out.g[j] = detail::disarm_coordinate(theta, d, diff, j);
  }
  if (boundary[q]) {
    if (!fz) fz = eval(d.z);
    BinaryVec flipped = d.z;
    flipped[q] ^= 1u;
    out.g[q] = static_cast<double>(k) * detail::sign_from(d.z[q]) * (eval(flipped) - *fz);
  }
  out.evals = eval.count();
  detail::check_budget("ugc", out.evals, 3);
  return out;
}

template <ObjectiveFn F>
GradEstimate ugc(const F& f, const ThetaVec& theta, double tau, const RngStream& rng) {
  EstimatorKind::validate_tau(tau);
  const CoupledDraw d = sample_coupled(theta, rng.with_purpose(Purpose::Coupling));
  auto eq = rng.with_purpose(Purpose::Categorical).engine();
  return ugc_from(f, theta, tau, d, eq.index(theta.size()));
}

// ---------------------------------------------------------------------------
// tUGC (step-up UGC)

// Coordinates ordered by ascending min(theta_j, 1 - theta_j), ties by index,
// and the step-up count T = max{T : theta~_(T) <= 1/(2T)} (0 if none).
struct StepUpSelection {
  std::vector<std::size_t> order;
  std::size_t count = 0;
};

inline StepUpSelection step_up_selection(const ThetaVec& theta) {
  const std::size_t k = theta.size();
  StepUpSelection sel;
  sel.order.resize(k);
  std::iota(sel.order.begin(), sel.order.end(), std::size_t{0});
  std::stable_sort(sel.order.begin(), sel.order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return theta.boundary_distance(a) < theta.boundary_distance(b);
                   });
  for (std::size_t t = 1; t <= k; ++t)
    if (theta.boundary_distance(sel.order[t - 1]) <= 0.5 / static_cast<double>(t))
      sel.count = t;
  return sel;
}

inline std::size_t step_up_count(const ThetaVec& theta) {
  return step_up_selection(theta).count;
}

// q indexes the selected block (0 <= q < count); ignored when count == 0.
template <ObjectiveFn F>
GradEstimate tugc_from(const F& f, const ThetaVec& theta, const CoupledDraw& d,
                       std::size_t q) {
  const std::size_t k = theta.size();
  detail::check_dims(k, d.z.size(), "tugc");
  const StepUpSelection sel = step_up_selection(theta);
  if (sel.count > 0 && q >= sel.count)
    throw std::out_of_range("tugc: selection index out of range");

  std::vector<bool> selected(k, false);
  for (std::size_t i = 0; i < sel.count; ++i) selected[sel.order[i]] = true;

  detail::Counted<F> eval(f);
  std::optional<double> fz;
  GradEstimate out{std::vector<double>(k, 0.0), 0};
  if (sel.count < k) {
    fz = eval(d.z);
    const double diff = *fz - eval(d.z_tilde);
    for (std::size_t j = 0; j < k; ++j)
      if (!selected[j]) out.g[j] = detail::disarm_coordinate(theta, d, diff, j);
  }
  if (sel.count > 0) {
    const std::size_t j = sel.order[q];
    if (!fz) fz = eval(d.z);
    BinaryVec flipped = d.z;
    flipped[j] ^= 1u;
    const double ff = eval(flipped);
    const double delta = d.z[j] ? *fz - ff : ff - *fz;
    out.g[j] = static_cast<double>(sel.count) * delta;
  }
  out.evals = eval.count();
  detail::check_budget("tugc", out.evals, 4);
  return out;
}

template <ObjectiveFn F>
GradEstimate tugc(const F& f, const ThetaVec& theta, const RngStream& rng) {
  const CoupledDraw d = sample_coupled(theta, rng.with_purpose(Purpose::Coupling));
  const std::size_t count = step_up_count(theta);
  auto eq = rng.with_purpose(Purpose::Categorical).engine();
  return tugc_from(f, theta, d, count > 0 ? eq.index(count) : 0);
}

// ---------------------------------------------------------------------------

template <ObjectiveFn F>
GradEstimate estimate(const EstimatorKind& kind, const F& f, const ThetaVec& theta,
                      const RngStream& rng,
                      EndpointPolicy policy = EndpointPolicy::Reject) {
  switch (kind.tag()) {
    case Estimator::Exact: return exact_gradient(f, theta);
    case Estimator::Reinforce: return reinforce(f, theta, rng, policy);
    case Estimator::Arm: return arm(f, theta, rng, policy);
    case Estimator::DisArm: return disarm(f, theta, rng);
    case Estimator::ReinforceLoo: return reinforce_loo(f, theta, rng, policy);
    case Estimator::Bitflip1: return bitflip1(f, theta, rng);
    case Estimator::BitflipK: return bitflip_k(f, theta, rng);
    case Estimator::Ugc: return ugc(f, theta, kind.tau_for(theta.size()), rng);
    case Estimator::TUgc: return tugc(f, theta, rng);
  }
  throw std::logic_error("estimate: unhandled estimator");
}

}  // namespace berngrad
