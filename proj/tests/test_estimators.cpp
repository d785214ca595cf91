#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "berngrad/estimators.hpp"
#include "berngrad/objectives.hpp"
#include "berngrad/variance.hpp"
#include "oracles.hpp"

using namespace berngrad;

namespace {

const auto identity1 = [](const BinaryVec& z) { return static_cast<double>(z[0]); };
const auto const_one = [](const BinaryVec&) { return 1.0; };

std::vector<double> values(const ThetaVec& th) { return {th.begin(), th.end()}; }

}  // namespace

// ---------------------------------------------------------------------------
// exact enumeration

TEST(Exact, P1TwoDims) {
  const auto g = exact_gradient(p1(2, 0.499), ThetaVec{0.1, 0.7});
  EXPECT_NEAR(g[0], 0.002, 1e-14);
  EXPECT_NEAR(g[1], 0.002, 1e-14);
  EXPECT_EQ(g.evals, 4u);
}

TEST(Exact, P2ThreeDims) {
  const ThetaVec theta{0.2, 0.5, 0.8};
  const auto g = exact_gradient(p2(3, 0.5), theta);
  EXPECT_NEAR(g[0], 2.6, 1e-12);
  EXPECT_NEAR(g[1], 2.0, 1e-12);
  EXPECT_NEAR(g[2], 1.4, 1e-12);
  EXPECT_EQ(g.evals, 8u);
}

TEST(Exact, ConstantIsZero) {
  const auto g = exact_gradient([](const BinaryVec&) { return 3.5; }, ThetaVec::filled(4, 0.3));
  for (double x : g.g) EXPECT_NEAR(x, 0.0, 1e-15);
}

TEST(Exact, MatchesConditionalDifferenceOracle) {
  auto eng = RngStream(77).engine();
  for (std::size_t k : {1u, 3u, 6u}) {
    const auto table = oracle::random_table(k, 100 + k);
    std::vector<double> th(k);
    for (double& x : th) x = eng.uniform();
    th[0] = 0.0;  // endpoints are legal for enumeration
    const auto g = exact_gradient(table, ThetaVec(th));
    const auto ref = oracle::conditional_difference_gradient(table, th);
    for (std::size_t j = 0; j < k; ++j) EXPECT_NEAR(g[j], ref[j], 1e-12);
  }
}

TEST(Exact, ExpectationMatchesClosedForms) {
  const ThetaVec theta{0.1, 0.35, 0.6, 0.9};
  EXPECT_NEAR(exact_expectation(p1(4, 0.3), theta), p1_expected(theta, 0.3), 1e-12);
  EXPECT_NEAR(exact_expectation(p2(4, 0.3), theta), p2_expected(theta, 0.3), 1e-12);
}

TEST(Exact, RejectsLargeK) {
  EXPECT_THROW(exact_gradient(p1(26, 0.5), ThetaVec::filled(26, 0.5)), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// per-estimator worked values

TEST(Reinforce, ScoreByHand) {
  const auto g = reinforce_from(const_one, ThetaVec{0.5, 0.5}, BinaryVec{1, 0});
  EXPECT_DOUBLE_EQ(g[0], 2.0);
  EXPECT_DOUBLE_EQ(g[1], -2.0);
  EXPECT_EQ(g.evals, 1u);
}

TEST(Reinforce, ZeroFunction) {
  const auto zero = [](const BinaryVec&) { return 0.0; };
  const auto g = reinforce(zero, ThetaVec{0.2, 0.9, 0.4}, RngStream(1));
  for (double x : g.g) EXPECT_EQ(x, 0.0);
}

TEST(EndpointPolicy, RejectThrowsFreezeZeroes) {
  const ThetaVec theta{0.0, 0.4, 1.0};
  const auto f = p1(3, 0.2);
  EXPECT_THROW(reinforce(f, theta, RngStream(1)), std::domain_error);
  EXPECT_THROW(arm(f, theta, RngStream(1)), std::domain_error);
  EXPECT_THROW(reinforce_loo(f, theta, RngStream(1)), std::domain_error);
  for (Estimator e : {Estimator::Reinforce, Estimator::Arm, Estimator::ReinforceLoo}) {
    for (std::uint32_t s = 0; s < 50; ++s) {
      const auto g = estimate(e, f, theta, RngStream(s), EndpointPolicy::Freeze);
      EXPECT_EQ(g[0], 0.0);
      EXPECT_EQ(g[2], 0.0);
      EXPECT_TRUE(std::isfinite(g[1]));
    }
  }
  // DisARM, bitflips and the UGC family need no policy.
  for (Estimator e : {Estimator::DisArm, Estimator::Bitflip1, Estimator::BitflipK,
                      Estimator::Ugc, Estimator::TUgc}) {
    const auto g = estimate(e, f, theta, RngStream(5));
    for (double x : g.g) EXPECT_TRUE(std::isfinite(x));
    if (e == Estimator::DisArm) {
      EXPECT_EQ(g[0], 0.0);
      EXPECT_EQ(g[2], 0.0);
    }
  }
}

TEST(Arm, HandValue) {
  const ThetaVec theta{0.5};
  const auto d = couple(theta, {0.8});
  ASSERT_EQ(d.z, BinaryVec{1});
  ASSERT_EQ(d.z_tilde, BinaryVec{0});
  EXPECT_NEAR(arm_from(identity1, theta, d)[0], 1.2, 1e-15);
}

TEST(Arm, EqualPairGivesZero) {
  const ThetaVec theta{0.3, 0.3};
  const auto d = couple(theta, {0.5, 0.5});
  ASSERT_EQ(d.z, d.z_tilde);
  const auto g = arm_from(p1(2, 0.1), theta, d);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(DisArm, HandValue) {
  const ThetaVec theta{0.3, 0.3};
  const auto d = couple(theta, {0.8, 0.5});
  ASSERT_EQ(d.z, (BinaryVec{1, 0}));
  ASSERT_EQ(d.z_tilde, (BinaryVec{0, 0}));
  const auto g = disarm_from(p1(2, 0.0), theta, d);
  EXPECT_NEAR(g[0], 0.5 / 0.3, 1e-15);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g.evals, 2u);
}

TEST(DisArm, EqualPairGivesZero) {
  const ThetaVec theta{0.7, 0.2};
  const auto d = couple(theta, {0.5, 0.5});
  ASSERT_EQ(d.z, d.z_tilde);
  for (double x : disarm_from(p2(2, 0.3), theta, d).g) EXPECT_EQ(x, 0.0);
}

TEST(ReinforceLoo, HandValue) {
  const auto g = reinforce_loo_from(identity1, ThetaVec{0.5}, BinaryVec{1}, BinaryVec{0});
  EXPECT_DOUBLE_EQ(g[0], 2.0);
}

TEST(ReinforceLoo, FourOutcomeExpectationIsExact) {
  // theta = 0.5, f = identity: each joint outcome has probability 1/4.
  const ThetaVec theta{0.5};
  double mean = 0.0;
  for (std::uint8_t a : {0, 1})
    for (std::uint8_t b : {0, 1})
      mean += 0.25 * reinforce_loo_from(identity1, theta, BinaryVec{a}, BinaryVec{b})[0];
  EXPECT_DOUBLE_EQ(mean, 1.0);
}

TEST(ReinforceLoo, EqualSamplesGiveZero) {
  const ThetaVec theta{0.4, 0.6, 0.1};
  const BinaryVec z{1, 0, 1};
  for (double x : reinforce_loo_from(p2(3, 0.2), theta, z, z).g) EXPECT_EQ(x, 0.0);
}

TEST(Bitflip1, HandValue) {
  const auto g = bitflip1_from(p1(3, 0.499), BinaryVec{1, 0, 1}, 1);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_NEAR(g[1], 0.006, 1e-14);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_EQ(g.evals, 2u);
}

TEST(Bitflip1, OneDimensionIsExact) {
  const auto f = [](const BinaryVec& z) { return z[0] ? 2.5 : -1.0; };
  for (std::uint32_t s = 0; s < 100; ++s) {
    const double th = 0.01 * (s % 99 + 1);
    EXPECT_DOUBLE_EQ(bitflip1(f, ThetaVec{th}, RngStream(s))[0], 3.5);
  }
}

TEST(BitflipK, SeparableIsDeterministic) {
  const auto f = p1(5, 0.499);
  for (std::uint32_t s = 0; s < 50; ++s) {
    const auto g = bitflip_k(f, ThetaVec{0.1, 0.3, 0.5, 0.7, 0.9}, RngStream(s));
    for (double x : g.g) EXPECT_NEAR(x, 0.002, 1e-14);
    EXPECT_EQ(g.evals, 6u);
  }
}

TEST(BitflipK, OneDimensionMatchesBitflip1) {
  const auto f = [](const BinaryVec& z) { return z[0] ? 0.25 : 4.0; };
  for (std::uint8_t b : {0, 1})
    EXPECT_DOUBLE_EQ(bitflip_k_from(f, BinaryVec{b})[0], bitflip1_from(f, BinaryVec{b}, 0)[0]);
}

TEST(Ugc, TinyTauIsDisarm) {
  const ThetaVec theta{0.05, 0.3, 0.5, 0.8};
  const auto f = p2(4, 0.3);
  for (std::uint32_t s = 0; s < 100; ++s) {
    const RngStream rng(s);
    const auto a = ugc(f, theta, 1e-6, rng);
    const auto b = disarm(f, theta, rng);
    EXPECT_EQ(a.g, b.g);
  }
}

TEST(Ugc, Routing) {
  const ThetaVec theta{0.05, 0.5};
  const auto f = p2(2, 0.3);
  // u chosen so z != z~ on both coordinates
  const auto d = couple(theta, {0.97, 0.8});
  ASSERT_NE(d.z[0], d.z_tilde[0]);
  ASSERT_NE(d.z[1], d.z_tilde[1]);
  const auto dis = disarm_from(f, theta, d);
  // q misses the boundary coordinate: it gets 0, coordinate 2 gets DisARM
  auto g = ugc_from(f, theta, 0.25, d, 1);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], dis[1]);
  // q hits it: bitflip-1 value on the shared z
  g = ugc_from(f, theta, 0.25, d, 0);
  EXPECT_EQ(g[0], bitflip1_from(f, d.z, 0)[0]);
  EXPECT_EQ(g[1], dis[1]);
  EXPECT_LE(g.evals, 3u);
}

TEST(Ugc, RejectsBadTau) {
  const auto f = p1(2, 0.3);
  EXPECT_THROW(ugc(f, ThetaVec{0.2, 0.2}, 0.0, RngStream(1)), std::invalid_argument);
  EXPECT_THROW(ugc(f, ThetaVec{0.2, 0.2}, 0.6, RngStream(1)), std::invalid_argument);
  EXPECT_THROW(EstimatorKind::ugc(-1.0), std::invalid_argument);
  EXPECT_NO_THROW(ugc(f, ThetaVec{0.2, 0.2}, 0.5, RngStream(1)));
}

TEST(Ugc, DefaultTauIsHalfOverK) {
  EXPECT_DOUBLE_EQ(EstimatorKind::ugc().tau_for(20), 0.025);
  EXPECT_DOUBLE_EQ(EstimatorKind::ugc(0.2).tau_for(20), 0.2);
}

TEST(TUgc, StepUpCount) {
  EXPECT_EQ(step_up_count(ThetaVec{0.05, 0.10, 0.30, 0.45}), 2u);
  EXPECT_EQ(step_up_count(ThetaVec::filled(7, 0.5)), 1u);
  EXPECT_EQ(step_up_count(ThetaVec{0.49, 0.49}), 1u);
  // reflected entries count by their distance to the boundary
  EXPECT_EQ(step_up_count(ThetaVec{0.95, 0.90, 0.70, 0.55}), 2u);
  const auto sel = step_up_selection(ThetaVec{0.30, 0.95, 0.45, 0.10});
  EXPECT_EQ(sel.order[0], 1u);
  EXPECT_EQ(sel.order[1], 3u);
}

TEST(TUgc, SelectedCoordinateWeight) {
  const ThetaVec theta{0.05, 0.10, 0.30, 0.45};
  const auto f = p2(4, 0.3);
  const auto d = couple(theta, {0.3, 0.95, 0.8, 0.2});
  const auto dis = disarm_from(f, theta, d);
  for (std::size_t q = 0; q < 2; ++q) {
    const auto g = tugc_from(f, theta, d, q);
    const std::size_t hit = q;  // order is (0, 1) here
    const std::size_t miss = 1 - q;
    BinaryVec one = d.z, zero = d.z;
    one[hit] = 1;
    zero[hit] = 0;
    EXPECT_DOUBLE_EQ(g[hit], 2.0 * (f(one) - f(zero)));
    EXPECT_EQ(g[miss], 0.0);
    EXPECT_EQ(g[2], dis[2]);
    EXPECT_EQ(g[3], dis[3]);
    EXPECT_LE(g.evals, 4u);
  }
}

TEST(TUgc, AllSelectedIsPureFlip) {
  const ThetaVec theta{0.01, 0.99, 0.02, 0.03};
  ASSERT_EQ(step_up_count(theta), 4u);
  const auto f = p2(4, 0.3);
  for (std::uint32_t s = 0; s < 100; ++s) {
    const auto g = tugc(f, theta, RngStream(s));
    EXPECT_LE(std::count_if(g.g.begin(), g.g.end(), [](double x) { return x != 0.0; }), 1);
    EXPECT_EQ(g.evals, 2u);
  }
}

// ---------------------------------------------------------------------------
// properties

TEST(Properties, EvaluationBudgetsAndCounter) {
  const std::size_t k = 6;
  const auto f = p2(k, 0.4);
  auto eng = RngStream(3).engine();
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> th(k);
    for (double& x : th) x = 0.02 + 0.96 * eng.uniform();
    const ThetaVec theta(th);
    for (Estimator e : EstimatorKind::all()) {
      const EstimatorKind kind(e);
      const auto before = f.evaluations();
      const auto g = estimate(kind, f, theta, RngStream(trial));
      EXPECT_EQ(f.evaluations() - before, g.evals) << kind.name();
      EXPECT_LE(g.evals, kind.eval_budget(k)) << kind.name();
      switch (e) {
        case Estimator::Exact: EXPECT_EQ(g.evals, 64u); break;
        case Estimator::Reinforce: EXPECT_EQ(g.evals, 1u); break;
        case Estimator::BitflipK: EXPECT_EQ(g.evals, k + 1); break;
        case Estimator::Ugc:
        case Estimator::TUgc: EXPECT_LE(g.evals, 3u); break;
        default: EXPECT_EQ(g.evals, 2u);
      }
    }
  }
}

TEST(Properties, Bitflip1Sparsity) {
  const std::size_t k = 7;
  const auto table = oracle::random_table(k, 9);
  auto eng = RngStream(10).engine();
  for (std::uint32_t s = 0; s < 500; ++s) {
    std::vector<double> th(k);
    for (double& x : th) x = eng.uniform();
    const auto g = bitflip1(table, ThetaVec(th), RngStream(s));
    const auto nz = std::count_if(g.g.begin(), g.g.end(), [](double x) { return x != 0.0; });
    EXPECT_LE(nz, 1);
    for (std::size_t j = 0; j < k; ++j) {
      if (g[j] == 0.0) continue;
      // K times a difference of two table entries, each in [-1, 1]
      EXPECT_LE(std::fabs(g[j]), 2.0 * k);
    }
  }
}

TEST(Properties, Bitflip1ValuesIgnoreTheta) {
  const std::size_t k = 5;
  const auto table = oracle::random_table(k, 12);
  auto eng = RngStream(13).engine();
  for (int trial = 0; trial < 200; ++trial) {
    BinaryVec z(k);
    for (auto& b : z) b = eng.uniform() < 0.5;
    const std::size_t q = eng.index(k);
    // bitflip1_from takes no theta at all; the sampled path must agree with it
    // whatever theta produced the draw.
    const auto g = bitflip1_from(table, z, q);
    BinaryVec flipped = z;
    flipped[q] ^= 1u;
    EXPECT_DOUBLE_EQ(g[q], static_cast<double>(k) * (z[q] ? -1.0 : 1.0) *
                               (table(flipped) - table(z)));
  }
  // Same (z, q) replayed through two thetas that both produce it.
  const ThetaVec a{0.2, 0.3, 0.4, 0.6, 0.7}, b{0.25, 0.35, 0.45, 0.55, 0.65};
  for (std::uint32_t s = 0; s < 200; ++s) {
    auto ea = RngStream(s).with_purpose(Purpose::Coupling).engine();
    auto eb = RngStream(s).with_purpose(Purpose::Coupling).engine();
    const auto za = sample_bernoulli(a, ea);
    const auto zb = sample_bernoulli(b, eb);
    if (za != zb) continue;
    EXPECT_EQ(bitflip1(table, a, RngStream(s)).g, bitflip1(table, b, RngStream(s)).g);
  }
}

namespace {

struct Case {
  const char* name;
  std::function<double(const BinaryVec&)> f;
  std::vector<double> exact;
};

void expect_unbiased(const Case& c, const ThetaVec& theta, std::size_t n, std::uint64_t seed) {
  for (Estimator e : EstimatorKind::all()) {
    if (e == Estimator::Exact) continue;
    const EstimatorKind kind(e);
    const auto rep = summarize(mc_samples(c.f, theta, kind, n, RngStream(seed)));
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double se = rep.mean_se(j);
      EXPECT_LE(std::fabs(rep.mean[j] - c.exact[j]), std::max(4.0 * se, 1e-12))
          << c.name << ' ' << kind.name() << " coordinate " << j << " mean " << rep.mean[j]
          << " exact " << c.exact[j] << " se " << se;
    }
  }
}

}  // namespace

TEST(Properties, UnbiasedAllEstimators) {
  const std::size_t n = 200000;
  const ThetaVec theta{0.3, 0.08, 0.55, 0.92, 0.7};
  const std::size_t k = theta.size();
  const auto table = oracle::random_table(k, 31);
  const std::vector<Case> cases = {
      {"p1", p1(k, 0.499), oracle::p1_gradient(k, 0.499)},
      {"p2", p2(k, 0.499), oracle::p2_gradient(values(theta), 0.499)},
      {"table", table, oracle::conditional_difference_gradient(table, values(theta))},
  };
  for (const auto& c : cases) expect_unbiased(c, theta, n, 4242);
}

TEST(Properties, DisarmDominatesArm) {
  const std::size_t n = 20000;
  const std::size_t k = 4;
  const auto f = p2(k, 0.3);
  const std::vector<double> grid = {0.05, 0.2, 0.5, 0.8, 0.97};
  for (double a : grid) {
    for (double b : grid) {
      const ThetaVec theta{a, b, 0.4, 0.6};
      const RngStream rng(static_cast<std::uint64_t>(a * 1000 + b * 10));
      // same replicate streams, so the pair shares every coupled draw
      const auto sd = mc_samples(f, theta, Estimator::DisArm, n, rng);
      const auto sa = mc_samples(f, theta, Estimator::Arm, n, rng);
      for (std::size_t j = 0; j < k; ++j) {
        const auto d = compare_variance(sd, sa, j);
        EXPECT_LE(d.diff, 3.0 * d.se) << "theta=(" << a << ',' << b << ") j=" << j;
      }
    }
  }
}

TEST(Properties, BitflipBeatsPairedEstimatorsNearBoundary) {
  const std::size_t k = 20, n = 40000;
  const double t = 0.499;
  const auto f = p1(k, t);
  std::vector<double> th(k, 0.5);
  th[0] = 0.02;
  th[1] = 0.99;
  th[2] = 0.025;
  th[3] = 0.3;
  const ThetaVec theta(th);
  const RngStream rng(55);
  const auto sb = mc_samples(f, theta, Estimator::Bitflip1, n, rng);
  const auto sd = mc_samples(f, theta, Estimator::DisArm, n, rng);
  const auto sl = mc_samples(f, theta, Estimator::ReinforceLoo, n, rng);
  for (std::size_t j = 0; j < k; ++j) {
    if (theta.boundary_distance(j) > 0.5 / k) continue;
    const auto vd = compare_variance(sb, sd, j);
    const auto vl = compare_variance(sb, sl, j);
    EXPECT_LE(vd.diff, 3.0 * vd.se) << "vs disarm, j=" << j;
    EXPECT_LE(vl.diff, 3.0 * vl.se) << "vs loo, j=" << j;
  }
}

TEST(Properties, SeparableVarianceLowerBound) {
  // f = sum h(z_i) with h(1) - h(0) = delta; P1 has delta = 1 - 2t.
  const std::size_t k = 6;
  const double t = 0.2, delta = 1.0 - 2.0 * t;
  const std::vector<double> grid = {0.01, 0.1, 0.25, 0.4, 0.5, 0.6, 0.9, 0.99};
  auto eng = RngStream(8).engine();
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> th(k);
    for (double& x : th) x = grid[eng.index(grid.size())];
    const ThetaVec theta(th);
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      worst = std::max(worst, analytic_var_disarm_p1(theta, j, t));
    EXPECT_GE(worst, (k - 1) * delta * delta * (1.0 - 1e-12));
  }
  // MC confirmation on one grid point with a non-quadratic h.
  const auto h = [](const BinaryVec& z) {
    double s = 0.0;
    for (auto b : z) s += b ? 1.75 : 0.5;
    return s;
  };
  const ThetaVec theta{0.1, 0.3, 0.5, 0.7, 0.9, 0.5};
  const auto rep = mc_variance(h, theta, Estimator::DisArm, 50000, RngStream(3));
  const double bound = (k - 1) * 1.25 * 1.25;
  const auto it = std::max_element(rep.variance.begin(), rep.variance.end());
  const auto j = static_cast<std::size_t>(it - rep.variance.begin());
  EXPECT_GE(*it + 3.0 * rep.variance_se[j], bound);
}
