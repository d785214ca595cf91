#pragma once

// Domain types for factorial Bernoulli models and the antithetic sampler.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "berngrad/rng.hpp"

namespace berngrad {

// A point of {0,1}^K, one byte per coordinate.
using BinaryVec = std::vector<std::uint8_t>;

// Probabilities theta in [0,1]^K, K >= 1. Endpoints are legal: projected
// descent reaches them.
class ThetaVec {
 public:
  explicit ThetaVec(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("ThetaVec: K must be >= 1");
    for (std::size_t j = 0; j < values_.size(); ++j) {
      const double v = values_[j];
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("ThetaVec: entry " + std::to_string(j) +
                                    " outside [0,1]");
    }
  }
  ThetaVec(std::initializer_list<double> values)
      : ThetaVec(std::vector<double>(values)) {}

  static ThetaVec filled(std::size_t k, double value) {
    return ThetaVec(std::vector<double>(k, value));
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t j) const noexcept { return values_[j]; }
  std::span<const double> values() const noexcept { return values_; }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  // min(theta_j, 1 - theta_j): distance to the nearest boundary.
  double boundary_distance(std::size_t j) const noexcept {
    return std::min(values_[j], 1.0 - values_[j]);
  }
  bool interior(std::size_t j) const noexcept {
    return values_[j] > 0.0 && values_[j] < 1.0;
  }
  bool all_interior() const noexcept {
    for (std::size_t j = 0; j < size(); ++j)
      if (!interior(j)) return false;
    return true;
  }

  friend bool operator==(const ThetaVec&, const ThetaVec&) = default;

 private:
  std::vector<double> values_;
};

// Finite real logits phi with theta = sigmoid(phi).
class LogitVec {
 public:
  explicit LogitVec(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("LogitVec: K must be >= 1");
    for (double v : values_)
      if (!std::isfinite(v)) throw std::invalid_argument("LogitVec: non-finite logit");
  }
  LogitVec(std::initializer_list<double> values)
      : LogitVec(std::vector<double>(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t j) const noexcept { return values_[j]; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const LogitVec&, const LogitVec&) = default;

 private:
  std::vector<double> values_;
};

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline ThetaVec sigmoid_transform(const LogitVec& phi) {
  std::vector<double> theta(phi.size());
  for (std::size_t j = 0; j < phi.size(); ++j) theta[j] = sigmoid(phi[j]);
  return ThetaVec(std::move(theta));
}

inline LogitVec logit_transform(const ThetaVec& theta) {
  std::vector<double> phi(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (!theta.interior(j))
      throw std::domain_error("logit_transform: theta_" + std::to_string(j) +
                              " is 0 or 1");
    phi[j] = logit(theta[j]);
  }
  return LogitVec(std::move(phi));
}

// Antithetic pair from shared uniforms: z_j = [1 - u_j < theta_j],
// z~_j = [u_j < theta_j].
struct CoupledDraw {
  std::vector<double> u;
  BinaryVec z;
  BinaryVec z_tilde;
};

inline CoupledDraw couple(const ThetaVec& theta, std::vector<double> u) {
  if (u.size() != theta.size())
    throw std::invalid_argument("couple: u and theta differ in length");
  CoupledDraw d{std::move(u), BinaryVec(theta.size()), BinaryVec(theta.size())};
  for (std::size_t j = 0; j < theta.size(); ++j) {
    d.z[j] = (1.0 - d.u[j]) < theta[j] ? 1 : 0;
    d.z_tilde[j] = d.u[j] < theta[j] ? 1 : 0;
  }
  return d;
}

inline CoupledDraw sample_coupled(const ThetaVec& theta, StreamEngine& eng) {
  std::vector<double> u(theta.size());
  for (double& x : u) x = eng.uniform();
  return couple(theta, std::move(u));
}

inline CoupledDraw sample_coupled(const ThetaVec& theta, const RngStream& rng) {
  auto eng = rng.engine();
  return sample_coupled(theta, eng);
}

// Single draw z ~ p_theta. Uses the same rule as CoupledDraw::z, so a plain
// sample and the first half of a coupled pair agree on a shared stream.
inline BinaryVec sample_bernoulli(const ThetaVec& theta, StreamEngine& eng) {
  BinaryVec z(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j)
    z[j] = (1.0 - eng.uniform()) < theta[j] ? 1 : 0;
  return z;
}

// Gradient estimate w.r.t. theta together with the number of objective
// evaluations it consumed.
struct GradEstimate {
  std::vector<double> g;
  std::uint64_t evals = 0;

  std::size_t size() const noexcept { return g.size(); }
  double operator[](std::size_t j) const noexcept { return g[j]; }
};

}  // namespace berngrad
