#include "fbsde/ensemble.hpp"

#include <cmath>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde {

namespace {

// Paths are generated in fixed-size chunks, each with its own derived seed,
// so the draws for path m never depend on how many paths surround it.
constexpr std::size_t kChunk = 1024;

void validate(const FbsdeProblem& p, std::size_t n_paths) {
    if (n_paths == 0) throw std::invalid_argument("simulate: need at least one path");
    if (p.state_dim == 0 || p.noise_dim == 0)
        throw std::invalid_argument("simulate: state and noise dimensions must be positive");
    if (p.x0.size() != p.state_dim)
        throw std::invalid_argument("simulate: x0 size does not match the state dimension");
    if (!p.drift || !p.diffusion)
        throw std::invalid_argument("simulate: problem is missing drift or diffusion");
}

}  // namespace

PathEnsemble simulate_euler(const FbsdeProblem& problem, const TimeGrid& grid,
                            std::size_t n_paths, std::uint64_t seed) {
    validate(problem, n_paths);
    const std::size_t n = grid.n_steps();
    const std::size_t sd = problem.state_dim;
    const std::size_t nd = problem.noise_dim;

    PathEnsemble e;
    e.n_paths = n_paths;
    e.n_steps = n;
    e.state_dim = sd;
    e.noise_dim = nd;
    e.seed = seed;
    e.x.resize(n_paths * (n + 1) * sd);
    e.dw.resize(n_paths * n * nd);
    const std::size_t n_chunks = (n_paths + kChunk - 1) / kChunk;
    e.seed_record.resize(n_chunks);
    for (std::size_t c = 0; c < n_chunks; ++c) e.seed_record[c] = rng::derive_seed(seed, {c});

    std::vector<double> sqrt_dt(n);
    for (std::size_t i = 0; i < n; ++i) sqrt_dt[i] = std::sqrt(grid.dt[i]);

    std::vector<double> a(sd), b(sd * nd);
    for (std::size_t c = 0; c < n_chunks; ++c) {
        rng::NormalSampler gauss(e.seed_record[c]);
        const std::size_t m_end = std::min(n_paths, (c + 1) * kChunk);
        for (std::size_t m = c * kChunk; m < m_end; ++m) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto dw = e.increment(m, i);
                for (std::size_t j = 0; j < nd; ++j) dw[j] = gauss() * sqrt_dt[i];
            }
            auto x0 = e.state(m, 0);
            for (std::size_t k = 0; k < sd; ++k) x0[k] = problem.x0[k];
            for (std::size_t i = 0; i < n; ++i) {
                const auto xi = e.state(m, i);
                const auto xn = e.state(m, i + 1);
                const auto dw = e.increment(m, i);
                problem.drift(grid.t[i], xi, a);
                problem.diffusion(grid.t[i], xi, b);
                for (std::size_t k = 0; k < sd; ++k) {
                    double v = xi[k] + a[k] * grid.dt[i];
                    for (std::size_t j = 0; j < nd; ++j) v += b[k * nd + j] * dw[j];
                    xn[k] = v;
                }
            }
        }
    }
    return e;
}

PathEnsemble simulate_brownian(const TimeGrid& grid, std::size_t n_paths, std::size_t dim,
                               std::uint64_t seed) {
    FbsdeProblem p;
    p.name = "brownian";
    p.state_dim = dim;
    p.noise_dim = dim;
    p.terminal_time = grid.horizon();
    p.x0.assign(dim, 0.0);
    p.drift = [](double, std::span<const double>, std::span<double> out) {
        for (auto& v : out) v = 0.0;
    };
    p.diffusion = [dim](double, std::span<const double>, std::span<double> out) {
        for (auto& v : out) v = 0.0;
        for (std::size_t k = 0; k < dim; ++k) out[k * dim + k] = 1.0;
    };
    return simulate_euler(p, grid, n_paths, seed);
}

}  // namespace fbsde
