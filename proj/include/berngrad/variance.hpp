#pragma once

// Monte-Carlo gradient variance, closed-form variances for P1/P2, and the
// clip + moving-average convention used when reporting variance curves.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "berngrad/core.hpp"
#include "berngrad/estimators.hpp"
#include "berngrad/parallel.hpp"

namespace berngrad {

// Pairwise (cascade) summation; fixed association order for a given length.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 16) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

// n independent gradient estimates, stored per coordinate.
class SampleMatrix {
 public:
  SampleMatrix(std::size_t n, std::size_t k) : n_(n), k_(k), data_(n * k, 0.0) {}

  std::size_t samples() const noexcept { return n_; }
  std::size_t dim() const noexcept { return k_; }
  double& at(std::size_t r, std::size_t j) noexcept { return data_[j * n_ + r]; }
  double at(std::size_t r, std::size_t j) const noexcept { return data_[j * n_ + r]; }
  std::span<const double> column(std::size_t j) const noexcept {
    return std::span<const double>(data_).subspan(j * n_, n_);
  }

  std::uint64_t evals = 0;

 private:
  std::size_t n_, k_;
  std::vector<double> data_;
};

// Replicate r uses rng.split(r), so results do not depend on the worker count.
template <ObjectiveFn F>
SampleMatrix mc_samples(const F& f, const ThetaVec& theta, const EstimatorKind& kind,
                        std::size_t n, const RngStream& rng,
                        EndpointPolicy policy = EndpointPolicy::Reject,
                        std::size_t workers = worker_count()) {
  const std::size_t k = theta.size();
  SampleMatrix m(n, k);
  if (kind.tag() == Estimator::Exact) {
    // Deterministic: one enumeration stands in for every replicate.
    const GradEstimate g = exact_gradient(f, theta);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < k; ++j) m.at(r, j) = g.g[j];
    m.evals = g.evals;
    return m;
  }
  std::vector<std::uint64_t> evals(n, 0);
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(
      chunks,
      [&](std::size_t c) {
        const std::size_t end = std::min(n, (c + 1) * kChunk);
        for (std::size_t r = c * kChunk; r < end; ++r) {
          const GradEstimate g = estimate(kind, f, theta, rng.split(r), policy);
          for (std::size_t j = 0; j < k; ++j) m.at(r, j) = g.g[j];
          evals[r] = g.evals;
        }
      },
      workers);
  for (std::uint64_t e : evals) m.evals += e;
  return m;
}

struct VarianceReport {
  std::vector<double> mean;
  std::vector<double> variance;     // unbiased (n - 1) sample variance
  std::vector<double> variance_se;  // standard error of `variance`
  double clip = std::numeric_limits<double>::infinity();
  std::size_t window = 1;
  std::size_t n_samples = 0;
  std::uint64_t evals = 0;

  std::vector<double> clipped() const {
    std::vector<double> out(variance.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::min(variance[j], clip);
    return out;
  }
  double mean_variance() const {
    return variance.empty() ? 0.0 : pairwise_sum(variance) / static_cast<double>(variance.size());
  }
  double mean_se(std::size_t j) const {
    return std::sqrt(variance[j] / static_cast<double>(n_samples));
  }
};

inline VarianceReport summarize(const SampleMatrix& m) {
  const std::size_t n = m.samples();
  if (n < 2) throw std::invalid_argument("variance needs at least 2 samples");
  VarianceReport rep;
  rep.n_samples = n;
  rep.evals = m.evals;
  const double nd = static_cast<double>(n);
  std::vector<double> dev2(n), dev4(n);
  for (std::size_t j = 0; j < m.dim(); ++j) {
    const auto col = m.column(j);
    const double mu = pairwise_sum(col) / nd;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = col[r] - mu;
      dev2[r] = d * d;
      dev4[r] = dev2[r] * dev2[r];
    }
    const double s2 = pairwise_sum(dev2) / (nd - 1.0);
    const double m4 = pairwise_sum(dev4) / nd;
    const double v = (m4 - (nd - 3.0) / (nd - 1.0) * s2 * s2) / nd;
    rep.mean.push_back(mu);
    rep.variance.push_back(s2);
    rep.variance_se.push_back(std::sqrt(std::max(v, 0.0)));
  }
  return rep;
}

template <ObjectiveFn F>
VarianceReport mc_variance(const F& f, const ThetaVec& theta, const EstimatorKind& kind,
                           std::size_t n, const RngStream& rng,
                           EndpointPolicy policy = EndpointPolicy::Reject) {
  if (n < 2) throw std::invalid_argument("mc_variance: n_samples must be >= 2");
  return summarize(mc_samples(f, theta, kind, n, rng, policy));
}

// Var(a_j) - Var(b_j) from samples drawn on the same replicate streams, with
// the standard error of the paired difference.
struct VarianceDifference {
  double diff = 0.0;
  double se = 0.0;
};

inline VarianceDifference compare_variance(const SampleMatrix& a, const SampleMatrix& b,
                                           std::size_t j) {
  if (a.samples() != b.samples() || a.samples() < 2)
    throw std::invalid_argument("compare_variance: sample counts differ or too small");
  const std::size_t n = a.samples();
  const double nd = static_cast<double>(n);
  const auto ca = a.column(j), cb = b.column(j);
  const double ma = pairwise_sum(ca) / nd, mb = pairwise_sum(cb) / nd;
  std::vector<double> d(n);
  for (std::size_t r = 0; r < n; ++r)
    d[r] = (ca[r] - ma) * (ca[r] - ma) - (cb[r] - mb) * (cb[r] - mb);
  const double md = pairwise_sum(d) / nd;
  std::vector<double> dd(n);
  for (std::size_t r = 0; r < n; ++r) dd[r] = (d[r] - md) * (d[r] - md);
  VarianceDifference out;
  out.diff = md * nd / (nd - 1.0);
  out.se = std::sqrt(pairwise_sum(dd) / (nd - 1.0) / nd) * nd / (nd - 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Closed forms

// bitflip-1 on P1: K (1 - 1/K) ((1-t)^2 - t^2)^2 = (K - 1)(1 - 2t)^2
inline double analytic_var_bitflip1_p1(std::size_t k, double t) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  const double delta = 1.0 - 2.0 * t;
  return static_cast<double>(k - 1) * delta * delta;
}

// DisARM on P1, coordinate j:
//   (1 - 2m_j)/(2m_j) D^2 + (sum_{i != j} m_i / m_j) D^2,  m = min(theta, 1 - theta)
inline double analytic_var_disarm_p1(const ThetaVec& theta, std::size_t j, double t) {
  if (j >= theta.size()) throw std::out_of_range("coordinate out of range");
  const double mj = theta.boundary_distance(j);
  if (!(mj > 0.0))
    throw std::domain_error("analytic_var_disarm_p1: theta_j is 0 or 1");
  const double d2 = (1.0 - 2.0 * t) * (1.0 - 2.0 * t);
  double others = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (i != j) others += theta.boundary_distance(i);
  return (1.0 - 2.0 * mj) / (2.0 * mj) * d2 + others / mj * d2;
}

// bitflip-1 on P2, coordinate j. With D = f(z_1^(j)) - f(z_0^(j)) =
// 2 S_{-j} + 1 - 2t:  Var = K Var(D) + (K - 1) E[D]^2
//   = 4K sum_{i != j} theta_i (1 - theta_i) + (K - 1)(2 sum_{i != j} theta_i + 1 - 2t)^2
inline double analytic_var_bitflip1_p2(const ThetaVec& theta, std::size_t j, double t) {
  if (j >= theta.size()) throw std::out_of_range("coordinate out of range");
  const double k = static_cast<double>(theta.size());
  double var_s = 0.0, mean_s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (i == j) continue;
    var_s += theta[i] * (1.0 - theta[i]);
    mean_s += theta[i];
  }
  const double mean_d = 2.0 * mean_s + 1.0 - 2.0 * t;
  return 4.0 * k * var_s + (k - 1.0) * mean_d * mean_d;
}

// ---------------------------------------------------------------------------

// min(x, clip) elementwise, then a trailing moving average over `window`
// points (the first window - 1 outputs average the points available).
inline std::vector<double> clip_and_smooth(std::span<const double> series, double clip,
                                           std::size_t window) {
  if (window < 1) throw std::invalid_argument("clip_and_smooth: window must be >= 1");
  std::vector<double> clipped(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) clipped[i] = std::min(series[i], clip);
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
    const auto span = std::span<const double>(clipped).subspan(lo, i + 1 - lo);
    out[i] = pairwise_sum(span) / static_cast<double>(span.size());
  }
  return out;
}

// Columns: coord,var_raw,var_clipped,n_samples
inline void write_variance_csv(std::ostream& out, const VarianceReport& rep) {
  const auto old_precision = out.precision(17);
  out << "coord,var_raw,var_clipped,n_samples\n";
  const auto clipped = rep.clipped();
  for (std::size_t j = 0; j < rep.variance.size(); ++j)
    out << j << ',' << rep.variance[j] << ',' << clipped[j] << ',' << rep.n_samples << '\n';
  out.precision(old_precision);
}

}  // namespace berngrad
