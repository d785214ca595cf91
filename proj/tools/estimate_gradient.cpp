// Prints one gradient estimate per estimator for P2 at a fixed theta, next
// to the exact gradient.
//
//   estimate_gradient [K] [t] [seed]

#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <string>

#include "berngrad/berngrad.hpp"

int main(int argc, char** argv) {
  using namespace berngrad;
  const std::size_t k = argc > 1 ? std::stoul(argv[1]) : 6;
  const double t = argc > 2 ? std::stod(argv[2]) : 0.499;
  const std::uint64_t seed = argc > 3 ? std::stoull(argv[3]) : 1;
  if (k < 1 || k > kExactMaxDim) {
    std::cerr << "K must be in [1, " << kExactMaxDim << "]\n";
    return 1;
  }

  const auto f = p2(k, t);
  std::vector<double> th(k);
  for (std::size_t j = 0; j < k; ++j) th[j] = 0.1 + 0.8 * static_cast<double>(j) / std::max<std::size_t>(k - 1, 1);
  const ThetaVec theta(th);

  std::cout << std::fixed << std::setprecision(4);
  for (Estimator e : EstimatorKind::all()) {
    const auto g = estimate(e, f, theta, RngStream(seed));
    std::cout << std::left << std::setw(14) << EstimatorKind::name_of(e) << std::right
              << " evals=" << g.evals << "  g =";
    for (double x : g.g) std::cout << ' ' << std::setw(9) << x;
    std::cout << '\n';
  }
}
