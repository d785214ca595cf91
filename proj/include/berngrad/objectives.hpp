#pragma once

// Black-box objectives f: {0,1}^K -> R used by the experiments: the toy
// problems P1/P2 and the L0 best-subset regression objective.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "berngrad/core.hpp"
#include "berngrad/least_squares.hpp"

namespace berngrad {

// Backend of an Objective. Implementations must be safe to evaluate from
// several threads at once.
class ObjectiveModel {
 public:
  virtual ~ObjectiveModel() = default;
  virtual std::size_t dim() const noexcept = 0;
  virtual double evaluate(const BinaryVec& z) const = 0;
  // Number of evaluations that actually computed f (cache hits excluded).
  virtual std::uint64_t evaluations() const noexcept = 0;
};

// Shared-ownership handle to an objective. Copies refer to the same model
// and counter.
class Objective {
 public:
  using ExpectedValue = std::function<double(const ThetaVec&)>;

  Objective(std::shared_ptr<const ObjectiveModel> model, std::string name,
            ExpectedValue expected = {})
      : model_(std::move(model)), name_(std::move(name)), expected_(std::move(expected)) {
    if (!model_) throw std::invalid_argument("Objective: null model");
  }

  // Plain function objective; every call counts as one evaluation.
  static Objective from_function(std::size_t dim,
                                 std::function<double(const BinaryVec&)> fn,
                                 std::string name, ExpectedValue expected = {});

  double operator()(const BinaryVec& z) const {
    if (z.size() != model_->dim())
      throw std::invalid_argument("Objective '" + name_ + "': expected " +
                                  std::to_string(model_->dim()) + " bits, got " +
                                  std::to_string(z.size()));
    return model_->evaluate(z);
  }

  std::size_t dim() const noexcept { return model_->dim(); }
  std::uint64_t evaluations() const noexcept { return model_->evaluations(); }
  const std::string& name() const noexcept { return name_; }

  // Closed-form E_{p_theta}[f] when known.
  bool has_expected_value() const noexcept { return static_cast<bool>(expected_); }
  std::optional<double> expected_value(const ThetaVec& theta) const {
    if (!expected_) return std::nullopt;
    return expected_(theta);
  }

 private:
  std::shared_ptr<const ObjectiveModel> model_;
  std::string name_;
  ExpectedValue expected_;
};

namespace detail {

class FunctionModel final : public ObjectiveModel {
 public:
  FunctionModel(std::size_t dim, std::function<double(const BinaryVec&)> fn)
      : dim_(dim), fn_(std::move(fn)) {
    if (dim_ == 0) throw std::invalid_argument("objective dimension must be >= 1");
  }
  std::size_t dim() const noexcept override { return dim_; }
  double evaluate(const BinaryVec& z) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return fn_(z);
  }
  std::uint64_t evaluations() const noexcept override {
    return calls_.load(std::memory_order_relaxed);
  }

 private:
  std::size_t dim_;
  std::function<double(const BinaryVec&)> fn_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

}  // namespace detail

inline Objective Objective::from_function(std::size_t dim,
                                          std::function<double(const BinaryVec&)> fn,
                                          std::string name, ExpectedValue expected) {
  return Objective(std::make_shared<detail::FunctionModel>(dim, std::move(fn)),
                   std::move(name), std::move(expected));
}

// ---------------------------------------------------------------------------
// Toy problems

// E[sum_k (z_k - t)^2] = sum_k theta_k (1 - 2t) + t^2
inline double p1_expected(const ThetaVec& theta, double t) {
  double s = 0.0;
  for (double th : theta) s += th * (1.0 - 2.0 * t) + t * t;
  return s;
}

// E[(sum_k z_k - t)^2] = sum theta (1 - theta) + (sum theta - t)^2
inline double p2_expected(const ThetaVec& theta, double t) {
  double var = 0.0, mean = 0.0;
  for (double th : theta) {
    var += th * (1.0 - th);
    mean += th;
  }
  return var + (mean - t) * (mean - t);
}

// P1: f(z) = sum_k (z_k - t)^2
inline Objective p1(std::size_t k, double t) {
  if (k == 0) throw std::invalid_argument("p1: K must be >= 1");
  return Objective::from_function(
      k,
      [t](const BinaryVec& z) {
        double s = 0.0;
        for (std::uint8_t b : z) s += (b - t) * (b - t);
        return s;
      },
      "p1", [t](const ThetaVec& th) { return p1_expected(th, t); });
}

// P2: f(z) = (sum_k z_k - t)^2
inline Objective p2(std::size_t k, double t) {
  if (k == 0) throw std::invalid_argument("p2: K must be >= 1");
  return Objective::from_function(
      k,
      [t](const BinaryVec& z) {
        double s = -t;
        for (std::uint8_t b : z) s += b;
        return s * s;
      },
      "p2", [t](const ThetaVec& th) { return p2_expected(th, t); });
}

// ---------------------------------------------------------------------------
// Best-subset regression

struct RegressionDataset {
  Eigen::MatrixXd x;          // n x p design
  Eigen::VectorXd y;          // n responses
  Eigen::VectorXd beta_true;  // p coefficients (zeros when unknown)
  double sigma = 0.0;
  double lambda = 1.0;
  std::vector<std::size_t> true_support;

  std::size_t n() const noexcept { return static_cast<std::size_t>(x.rows()); }
  std::size_t p() const noexcept { return static_cast<std::size_t>(x.cols()); }

  void validate() const {
    if (x.rows() < 1 || x.cols() < 1)
      throw std::invalid_argument("RegressionDataset: empty design");
    if (y.size() != x.rows())
      throw std::invalid_argument("RegressionDataset: y length differs from rows of X");
    if (beta_true.size() != x.cols())
      throw std::invalid_argument("RegressionDataset: beta_true length differs from p");
    std::size_t nonzero = 0;
    for (Eigen::Index j = 0; j < beta_true.size(); ++j)
      if (beta_true[j] != 0.0) ++nonzero;
    if (nonzero != true_support.size())
      throw std::invalid_argument("RegressionDataset: support does not match beta_true");
  }
};

inline std::vector<std::size_t> support_of(const Eigen::VectorXd& beta) {
  std::vector<std::size_t> s;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) s.push_back(static_cast<std::size_t>(j));
  return s;
}

// (3, 2, 1.5, 0, ..., 0)
inline Eigen::VectorXd default_beta(std::size_t p) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  const double head[] = {3.0, 2.0, 1.5};
  for (std::size_t j = 0; j < 3 && j < p; ++j) b[static_cast<Eigen::Index>(j)] = head[j];
  return b;
}

// sigma such that beta'beta / sigma^2 = snr.
inline double sigma_for_snr(const Eigen::VectorXd& beta, double snr) {
  if (!(snr > 0.0)) throw std::invalid_argument("SNR must be positive");
  return std::sqrt(beta.squaredNorm() / snr);
}

// X_ij ~ N(0,1) i.i.d., y = X beta + sigma eps.
inline RegressionDataset gen_regression(std::size_t n, std::size_t p,
                                        const Eigen::VectorXd& beta_true, double sigma,
                                        const RngStream& rng, double lambda = 1.0) {
  if (n < 1 || p < 1) throw std::invalid_argument("gen_regression: n and p must be >= 1");
  if (static_cast<std::size_t>(beta_true.size()) != p)
    throw std::invalid_argument("gen_regression: beta_true length must equal p");
  if (!(sigma >= 0.0)) throw std::invalid_argument("gen_regression: sigma must be >= 0");
  auto eng = rng.with_purpose(Purpose::Data).engine();
  std::normal_distribution<double> normal(0.0, 1.0);
  RegressionDataset d;
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < d.x.rows(); ++i)
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) d.x(i, j) = normal(eng);
  d.y = d.x * beta_true;
  for (Eigen::Index i = 0; i < d.y.size(); ++i) d.y[i] += sigma * normal(eng);
  d.beta_true = beta_true;
  d.sigma = sigma;
  d.lambda = lambda;
  d.true_support = support_of(beta_true);
  return d;
}

namespace detail {

// f(z) = (1/n) ||y - X_S b_S||^2 + lambda |S| with the inner minimizer,
// memoized per bit pattern in a bounded LRU cache.
class SubsetModel final : public ObjectiveModel {
 public:
  SubsetModel(RegressionDataset data, std::size_t cache_capacity)
      : data_(std::move(data)), capacity_(cache_capacity) {
    data_.validate();
    null_rss_ = data_.y.squaredNorm();
  }

  std::size_t dim() const noexcept override { return data_.p(); }

  double evaluate(const BinaryVec& z) const override {
    std::string key(z.begin(), z.end());
    if (capacity_ > 0) {
      std::lock_guard lock(mutex_);
      if (auto it = index_.find(key); it != index_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        return it->second->second;
      }
    }
    const double value = compute(z);
    solves_.fetch_add(1, std::memory_order_relaxed);
    if (capacity_ > 0) {
      std::lock_guard lock(mutex_);
      if (index_.find(key) == index_.end()) {
        lru_.emplace_front(key, value);
        index_.emplace(std::move(key), lru_.begin());
        if (lru_.size() > capacity_) {
          index_.erase(lru_.back().first);
          lru_.pop_back();
        }
      }
    }
    return value;
  }

  std::uint64_t evaluations() const noexcept override {
    return solves_.load(std::memory_order_relaxed);
  }

  const RegressionDataset& data() const noexcept { return data_; }

 private:
  double compute(const BinaryVec& z) const {
    std::vector<Eigen::Index> cols;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (z[j]) cols.push_back(static_cast<Eigen::Index>(j));
    const double n = static_cast<double>(data_.n());
    if (cols.empty()) return null_rss_ / n;
    Eigen::MatrixXd xs(data_.x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
      xs.col(static_cast<Eigen::Index>(c)) = data_.x.col(cols[c]);
    const LeastSquaresFit fit = solve_inner_ls(xs, data_.y);
    return fit.rss / n + data_.lambda * static_cast<double>(cols.size());
  }

  RegressionDataset data_;
  double null_rss_ = 0.0;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  mutable std::list<std::pair<std::string, double>> lru_;
  mutable std::unordered_map<std::string, std::list<std::pair<std::string, double>>::iterator>
      index_;
  mutable std::atomic<std::uint64_t> solves_{0};
};

}  // namespace detail

inline constexpr std::size_t kSubsetCacheCapacity = std::size_t{1} << 16;

// Pass cache_capacity = 0 to disable memoization.
inline Objective subset_objective(RegressionDataset data,
                                  std::size_t cache_capacity = kSubsetCacheCapacity) {
  return Objective(std::make_shared<detail::SubsetModel>(std::move(data), cache_capacity),
                   "subset");
}

struct SupportMetrics {
  double tpr = 0.0;
  double fpr = 0.0;
};

// Selected set is {j : theta_j > 0.5}.
inline SupportMetrics support_metrics(const ThetaVec& theta,
                                      const std::vector<std::size_t>& true_support) {
  if (true_support.empty())
    throw std::invalid_argument("support_metrics: true support is empty");
  const std::size_t p = theta.size();
  std::vector<bool> is_true(p, false);
  for (std::size_t j : true_support) {
    if (j >= p) throw std::out_of_range("support_metrics: support index out of range");
    is_true[j] = true;
  }
  std::size_t tp = 0, fp = 0;
  for (std::size_t j = 0; j < p; ++j) {
    if (theta[j] <= 0.5) continue;
    if (is_true[j]) ++tp;
    else ++fp;
  }
  const std::size_t negatives = p - true_support.size();
  SupportMetrics m;
  m.tpr = static_cast<double>(tp) / static_cast<double>(true_support.size());
  m.fpr = negatives > 0 ? static_cast<double>(fp) / static_cast<double>(negatives) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Dataset CSV: header x1..xp[,y], one row per observation, 17 significant
// digits so values round-trip exactly.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<std::vector<double>> read_numeric_csv(std::istream& in,
                                                         std::vector<std::string>& header) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("CSV: missing header");
  header = split_csv_line(line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("CSV: row " + std::to_string(rows.size() + 1) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::size_t used = 0;
      try {
        row[c] = std::stod(cells[c], &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (used == 0 || used != cells[c].size())
        throw std::runtime_error("CSV: non-numeric cell '" + cells[c] + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("CSV: no data rows");
  return rows;
}

inline RegressionDataset dataset_from_rows(Eigen::MatrixXd x, Eigen::VectorXd y) {
  RegressionDataset d;
  d.beta_true = Eigen::VectorXd::Zero(x.cols());
  d.x = std::move(x);
  d.y = std::move(y);
  d.sigma = std::numeric_limits<double>::quiet_NaN();
  d.validate();
  return d;
}

}  // namespace detail

inline void write_dataset_csv(std::ostream& out, const RegressionDataset& d) {
  const auto old_precision = out.precision(17);
  for (std::size_t j = 0; j < d.p(); ++j) out << 'x' << (j + 1) << ',';
  out << "y\n";
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) out << d.x(i, j) << ',';
    out << d.y[i] << '\n';
  }
  out.precision(old_precision);
}

// Combined file: columns x1..xp followed by a final y column. beta_true is
// unknown for external data and is set to zero.
inline RegressionDataset read_dataset_csv(std::istream& in) {
  std::vector<std::string> header;
  const auto rows = detail::read_numeric_csv(in, header);
  if (header.size() < 2 || header.back() != "y")
    throw std::runtime_error("dataset CSV: final column must be 'y'");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(header.size() - 1);
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = rows[i][j];
    y[i] = rows[i][p];
  }
  return detail::dataset_from_rows(std::move(x), std::move(y));
}

// Separate design (x1..xp) and response (single column) files.
inline RegressionDataset read_dataset_csv(std::istream& x_in, std::istream& y_in) {
  std::vector<std::string> xh, yh;
  const auto xr = detail::read_numeric_csv(x_in, xh);
  const auto yr = detail::read_numeric_csv(y_in, yh);
  if (yh.size() != 1) throw std::runtime_error("response CSV must have one column");
  if (yr.size() != xr.size())
    throw std::runtime_error("design and response CSVs differ in row count");
  const auto n = static_cast<Eigen::Index>(xr.size());
  const auto p = static_cast<Eigen::Index>(xh.size());
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = xr[i][j];
    y[i] = yr[i][0];
  }
  return detail::dataset_from_rows(std::move(x), std::move(y));
}

}  // namespace berngrad
