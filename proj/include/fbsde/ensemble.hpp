#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fbsde/grid.hpp"
#include "fbsde/problem.hpp"

namespace fbsde {

// Simulated forward paths plus the Brownian increments that drove them.
// x:  [m][i][k], m < n_paths, i <= n_steps, k < state_dim
// dw: [m][i][j], i < n_steps; dw[m][i] is the increment over [t_i, t_{i+1}]
struct PathEnsemble {
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t state_dim = 0;
    std::size_t noise_dim = 0;
    std::vector<double> x;
    std::vector<double> dw;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seed_record;  // derived per-chunk seeds, in chunk order

    std::span<const double> state(std::size_t m, std::size_t i) const {
        return {x.data() + (m * (n_steps + 1) + i) * state_dim, state_dim};
    }
    std::span<double> state(std::size_t m, std::size_t i) {
        return {x.data() + (m * (n_steps + 1) + i) * state_dim, state_dim};
    }
    std::span<const double> increment(std::size_t m, std::size_t i) const {
        return {dw.data() + (m * n_steps + i) * noise_dim, noise_dim};
    }
    std::span<double> increment(std::size_t m, std::size_t i) {
        return {dw.data() + (m * n_steps + i) * noise_dim, noise_dim};
    }
};

// Euler steps x_{i+1} = x_i + a dt_i + b dw_i. Deterministic given
// (grid, n_paths, seed); generation is chunked so parallel and sequential
// fills agree bit for bit.
PathEnsemble simulate_euler(const FbsdeProblem& problem, const TimeGrid& grid,
                            std::size_t n_paths, std::uint64_t seed);

// Brownian-only ensemble: x_0 = 0, x_{i+1} = x_i + dw_i (state_dim == dim).
PathEnsemble simulate_brownian(const TimeGrid& grid, std::size_t n_paths, std::size_t dim,
                               std::uint64_t seed);

}  // namespace fbsde
