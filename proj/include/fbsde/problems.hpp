#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fbsde/problem.hpp"

namespace fbsde::problems {

struct BsPrice {
    double price = 0.0;
    double delta = 0.0;  // dividend-adjusted
};

// European call with continuous dividend yield d:
//   price = S0 e^{-dT} Phi(d1) - K e^{-rT} Phi(d2).
BsPrice bs_closed_form(double s0, double strike, double r, double dividend, double sigma,
                       double horizon);

// y' = -(y/2 - z/2) type scalar example on pure Brownian state, T = 0.5,
// exact solution y = sin(w + t/2): y0 = 0, z0 = 1.
FbsdeProblem oscillatory_bsde();

// Call under drift mu != r with dividend yield, T = 0.33; exact price/delta
// from the closed form above.
FbsdeProblem black_scholes_call();

// Stochastic volatility call, state (v, S), full-truncation coefficients,
// T = 0.5; reference price 3.1825 (semi-analytic benchmark).
FbsdeProblem heston_call();

// Call on the max of `dims` iid geometric Brownian motions, T = 0.1.
// sigma has no default: it must come from configuration.
FbsdeProblem rainbow_max_call(std::size_t dims, double sigma);

// Option under different borrowing/lending rates (nonlinear driver), T = 0.5.
// dims == 1: plain call struck at 100; dims >= 2: max-call spread
// g = max(max_d S - 120, 0) - 2 max(max_d S - 150, 0).
FbsdeProblem different_rates_option(std::size_t dims);

struct CatalogEntry {
    std::string name;         // CLI spelling; D-parameterized entries use name:D
    std::string description;
    bool needs_dims = false;
    bool needs_sigma = false;
};

const std::vector<CatalogEntry>& catalog();

// Resolve a problem name ("oscillatory", "black-scholes", "heston",
// "rainbow:10", "rates:1"); explicit dims overrides the suffix.
FbsdeProblem make_problem(const std::string& name, std::optional<std::size_t> dims,
                          std::optional<double> sigma);

}  // namespace fbsde::problems
