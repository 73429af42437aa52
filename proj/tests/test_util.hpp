#pragma once

#include <random>

#include "hslag/grid.hpp"

namespace hslag::testutil {

/// Random trigonometric polynomial with |m_a| <= max_mode on every axis.
inline ScalarField random_trig_field(const GridDescriptor& g, int max_mode, std::mt19937_64& rng,
                                     bool zero_mean = false, bool quotient_invariant = false) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const int n = g.dim();
  ScalarField f(g);
  std::vector<int> m(n, -max_mode);
  while (true) {
    int parity = 0;
    bool zero = true;
    for (int a = 0; a < n; ++a) {
      parity += m[a];
      zero = zero && m[a] == 0;
    }
    const bool skip = (zero && zero_mean) || (quotient_invariant && parity % 2 != 0);
    if (!skip) {
      const double c = nd(rng) / (1.0 + std::abs(parity)), ph = nd(rng);
      for (std::size_t i = 0; i < g.node_count(); ++i) {
        const auto x = g.coordinates(i);
        double arg = ph;
        for (int a = 0; a < n; ++a) arg += m[a] * x[a] * kTwoPi / g.periods[a];
        f.values[i] += c * std::cos(arg);
      }
    }
    int a = n - 1;
    while (a >= 0 && m[a] == max_mode) m[a--] = -max_mode;
    if (a < 0) break;
    ++m[a];
  }
  return f;
}

}  // namespace hslag::testutil
