#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fbsde/problems.hpp"
#include "fbsde/rng.hpp"
#include "fbsde/solver.hpp"

using namespace fbsde;
using doctest::Approx;

namespace {

FbsdeProblem brownian_with(std::function<double(double, std::span<const double>, double,
                                                std::span<const double>)> driver,
                           std::function<double(std::span<const double>)> terminal,
                           std::function<void(std::span<const double>, std::span<double>)>
                               terminal_gradient) {
    FbsdeProblem p;
    p.name = "custom";
    p.state_dim = p.noise_dim = 1;
    p.terminal_time = 1.0;
    p.x0 = {0.0};
    p.drift = [](double, std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    p.diffusion = [](double, std::span<const double>, std::span<double> out) { out[0] = 1.0; };
    p.driver = std::move(driver);
    p.terminal = std::move(terminal);
    p.terminal_gradient = std::move(terminal_gradient);
    return p;
}

// Plain-loop re-derivation of the single-step estimate from the same
// ensemble: sample averages plus a scalar Picard iteration. No solver or
// tree code involved.
std::pair<double, std::vector<double>> one_step_oracle(const FbsdeProblem& p,
                                                       const PathEnsemble& e,
                                                       const TimeGrid& grid,
                                                       const solver::SchemeParams& s) {
    const std::size_t M = e.n_paths;
    const std::size_t d = e.noise_dim;
    const double dt = grid.dt[0];
    const double T = grid.t[1];
    std::vector<double> z0(d, 0.0);
    double e_sum = 0.0;
    std::vector<double> zt(d);
    for (std::size_t m = 0; m < M; ++m) {
        auto xT = e.state(m, 1);
        const double y = p.terminal(xT);
        p.terminal_gradient(xT, zt);
        const double f = p.driver(T, xT, y, zt);
        auto dw = e.increment(m, 0);
        for (std::size_t j = 0; j < d; ++j) {
            z0[j] += (y * dw[j] / dt + (1.0 - s.theta1) * f * dw[j] -
                      (1.0 - s.theta2) * zt[j]) /
                     s.theta2;
        }
        e_sum += y + dt * (1.0 - s.theta3) * f;
    }
    for (auto& v : z0) v /= static_cast<double>(M);
    const double e0 = e_sum / static_cast<double>(M);
    double y0 = e0;
    for (int k = 0; k < s.picard_iters; ++k)
        y0 = e0 + dt * s.theta3 * p.driver(0.0, p.x0, y0, z0);
    return {y0, z0};
}

}  // namespace

TEST_CASE("terminal_condition: payoff and one-sided gradient per sample") {
    auto p = problems::black_scholes_call();
    PathEnsemble e;
    e.n_paths = 3;
    e.n_steps = 1;
    e.state_dim = e.noise_dim = 1;
    e.x = {100, 110, 100, 90, 100, 100};  // paths to 110, 90, 100
    e.dw = {0, 0, 0};
    auto st = solver::terminal_condition(p, e);
    CHECK(st.time_index == 1);
    CHECK(st.y == std::vector<double>{10, 0, 0});
    CHECK(st.z == std::vector<double>{22, 0, 0});
    REQUIRE(st.f.size() == 3);
    // driver cached at the terminal estimates
    CHECK(st.f[0] == Approx(-0.03 * 10 - 0.3 * 22).epsilon(1e-14));
}

TEST_CASE("one-step solve equals the brute-force sample averages") {
    auto grid = make_grid(0.33, 1);
    auto p = problems::black_scholes_call();

    for (auto scheme : {solver::SchemeParams{},                      // (1/2, 1, 1/2)
                        solver::SchemeParams{0.3, 0.6, 0.7, 20}}) {  // all terms active
        solver::SolverConfig cfg;
        cfg.n_paths = 10000;
        cfg.group_size = 1000;
        cfg.seed_schedule = {2024};
        auto res = solver::solve(p, grid, scheme, cfg);

        auto e = simulate_euler(p, grid, cfg.n_paths, solver::path_seed(2024));
        auto [y0, z0] = one_step_oracle(p, e, grid, scheme);
        CHECK(res.y0 == Approx(y0).epsilon(1e-12));
        CHECK(res.z0[0] == Approx(z0[0]).epsilon(1e-12));
    }
}

TEST_CASE("single-step z on linear terminal recovers the Malliavin weight") {
    auto p = brownian_with(
        [](double, std::span<const double>, double, std::span<const double>) { return 0.0; },
        [](std::span<const double> x) { return x[0]; },
        [](std::span<const double>, std::span<double> out) { out[0] = 1.0; });
    auto grid = make_grid(1.0, 1);
    solver::SolverConfig cfg;
    cfg.n_paths = 100000;
    cfg.group_size = 1000;
    cfg.seed_schedule = {5};
    auto res = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    CHECK(std::abs(res.z0[0] - 1.0) < 4.0 / std::sqrt(1e5));
    CHECK(std::abs(res.y0) < 4.0 / std::sqrt(1e5));
}

TEST_CASE("picard iteration hits the scalar fixed point of a linear driver") {
    const double r = 0.05, c = 2.0;
    auto p = brownian_with(
        [=](double, std::span<const double>, double y, std::span<const double>) {
            return -r * y;
        },
        [=](std::span<const double>) { return c; },
        [](std::span<const double>, std::span<double> out) { out[0] = 0.0; });

    auto grid = make_grid(1.0, 2);  // dt = 0.5: one tree step + the pooled step
    const double dt = 0.5;

    for (double theta3 : {0.5, 0.0}) {
        solver::SchemeParams scheme;
        scheme.theta3 = theta3;
        solver::SolverConfig cfg;
        cfg.n_paths = 2000;
        cfg.group_size = 1000;
        cfg.seed_schedule = {7};
        auto res = solver::solve(p, grid, scheme, cfg);
        // responses are constant, so each step contracts y exactly:
        // y <- y (1 - dt (1-theta3) r) / (1 + dt theta3 r)
        const double factor = (1.0 - dt * (1.0 - theta3) * r) / (1.0 + dt * theta3 * r);
        CHECK(res.y0 == Approx(c * factor * factor).epsilon(1e-10));
    }
}

TEST_CASE("picard divergence raises NumericalFailure, not a hang") {
    auto p = brownian_with(
        [](double, std::span<const double>, double y, std::span<const double>) {
            return 100.0 * y;
        },
        [](std::span<const double>) { return 1.0; },
        [](std::span<const double>, std::span<double> out) { out[0] = 0.0; });
    auto grid = make_grid(1.0, 1);
    solver::SchemeParams scheme;
    scheme.theta3 = 1.0;
    solver::SolverConfig cfg;
    cfg.n_paths = 1000;
    cfg.group_size = 1000;
    cfg.seed_schedule = {3};
    CHECK_THROWS_AS(solver::solve(p, grid, scheme, cfg), solver::NumericalFailure);
}

TEST_CASE("theta2 = 1 never evaluates the z continuation term") {
    auto p = problems::black_scholes_call();
    auto grid = make_grid(0.33, 2);
    auto e = simulate_euler(p, grid, 2000, 9);
    auto st = solver::terminal_condition(p, e);
    // poison z at the terminal index; with theta2 = 1 it must never be read
    std::fill(st.z.begin(), st.z.end(), std::numeric_limits<double>::quiet_NaN());

    solver::SchemeParams s1;  // theta2 = 1
    solver::StepFit fit;
    std::vector<double> z_out(e.n_paths, 0.0);
    solver::z_step(p, e, grid, 1, s1, st, fit, 0, e.n_paths, 11, z_out);
    for (double v : z_out) CHECK(std::isfinite(v));

    solver::SchemeParams s2;
    s2.theta2 = 0.9;  // now the poisoned term must surface as a failure
    CHECK_THROWS_AS(solver::z_step(p, e, grid, 1, s2, st, fit, 0, e.n_paths, 11, z_out),
                    solver::NumericalFailure);
}

TEST_CASE("constant terminal with zero driver is reproduced exactly") {
    auto p = brownian_with(
        [](double, std::span<const double>, double, std::span<const double>) { return 0.0; },
        [](std::span<const double>) { return 1.0; },
        [](std::span<const double>, std::span<double> out) { out[0] = 0.0; });
    auto grid = make_grid(1.0, 4);
    solver::SolverConfig cfg;
    cfg.n_paths = 2000;
    cfg.group_size = 1000;
    cfg.seed_schedule = {21};
    auto res = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    CHECK(res.y0 == 1.0);  // bitwise: every y response is the constant
    for (const auto& stp : res.diagnostics.steps) CHECK(stp.mean_y_leaves == 1.0);
}

TEST_CASE("step estimates ignore later time slices entirely") {
    auto p = problems::black_scholes_call();
    auto grid = make_grid(0.33, 3);
    auto e = simulate_euler(p, grid, 3000, 13);

    // synthetic state at i+1 = 2 (content irrelevant, only inputs matter)
    solver::BackwardState st;
    st.time_index = 2;
    st.y.resize(e.n_paths);
    st.z.resize(e.n_paths);
    st.f.resize(e.n_paths);
    for (std::size_t m = 0; m < e.n_paths; ++m) {
        const double s = e.state(m, 2)[0];
        st.y[m] = std::max(s - 100.0, 0.0);
        st.z[m] = 0.2 * s;
        st.f[m] = p.driver(grid.t[2], e.state(m, 2), st.y[m], {&st.z[m], 1});
    }

    solver::SchemeParams scheme;
    solver::StepFit fit;
    std::vector<double> z1(e.n_paths), y1(e.n_paths);
    solver::z_step(p, e, grid, 1, scheme, st, fit, 0, e.n_paths, 17, z1);
    solver::y_step(p, e, grid, 1, scheme, st, z1, fit, 0, e.n_paths, 18, y1);

    // permute everything strictly after the response slice across samples
    auto perm = rng::shuffled_indices(e.n_paths, 4242);
    PathEnsemble shuffled = e;
    for (std::size_t m = 0; m < e.n_paths; ++m) {
        for (std::size_t i = 2; i <= 3; ++i)
            std::copy_n(e.state(perm[m], i).data(), 1, shuffled.state(m, i).data());
        std::copy_n(e.increment(perm[m], 2).data(), 1, shuffled.increment(m, 2).data());
    }

    std::vector<double> z1p(e.n_paths), y1p(e.n_paths);
    solver::z_step(p, shuffled, grid, 1, scheme, st, fit, 0, e.n_paths, 17, z1p);
    solver::y_step(p, shuffled, grid, 1, scheme, st, z1p, fit, 0, e.n_paths, 18, y1p);
    CHECK(z1 == z1p);
    CHECK(y1 == y1p);
}

TEST_CASE("sample grouping leaves the estimate statistically unchanged") {
    auto p = problems::oscillatory_bsde();
    auto grid = make_grid(p.terminal_time, 4);
    const std::size_t n_runs = 6;
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < n_runs; ++k) seeds.push_back(1000 + k);

    auto run_mean_sd = [&](std::size_t group) {
        solver::SolverConfig cfg;
        cfg.n_paths = 4000;
        cfg.group_size = group;
        auto rs = solver::solve_many(p, grid, solver::SchemeParams{}, cfg, n_runs, seeds);
        double m = 0.0;
        for (const auto& r : rs) m += r.y0;
        m /= n_runs;
        double v = 0.0;
        for (const auto& r : rs) v += (r.y0 - m) * (r.y0 - m);
        return std::pair{m, std::sqrt(v / (n_runs - 1))};
    };
    auto [m_all, sd_all] = run_mean_sd(4000);
    auto [m_grp, sd_grp] = run_mean_sd(1000);
    const double se = std::sqrt(sd_all * sd_all / n_runs + sd_grp * sd_grp / n_runs);
    CHECK(std::abs(m_all - m_grp) <= 4.0 * se);
}

TEST_CASE("solve: validation of config and scheme") {
    auto p = problems::oscillatory_bsde();
    auto grid = make_grid(p.terminal_time, 2);
    solver::SchemeParams ok;
    solver::SolverConfig cfg;
    cfg.n_paths = 1000;
    cfg.group_size = 1000;

    {
        auto bad = cfg;
        bad.n_paths = 1500;  // not a multiple of group_size
        CHECK_THROWS_AS(solver::solve(p, grid, ok, bad), std::invalid_argument);
    }
    {
        auto bad = cfg;
        bad.n_paths = 0;
        CHECK_THROWS_AS(solver::solve(p, grid, ok, bad), std::invalid_argument);
    }
    {
        auto bad = cfg;
        bad.seed_schedule.clear();
        CHECK_THROWS_AS(solver::solve(p, grid, ok, bad), std::invalid_argument);
    }
    {
        auto bad = cfg;
        bad.holdout_fraction = 1.0;
        CHECK_THROWS_AS(solver::solve(p, grid, ok, bad), std::invalid_argument);
    }
    {
        solver::SchemeParams s;
        s.theta2 = 0.0;
        CHECK_THROWS_WITH_AS(solver::solve(p, grid, s, cfg),
                             doctest::Contains("theta2 must be in (0,1]"),
                             std::invalid_argument);
    }
    {
        solver::SchemeParams s;
        s.theta1 = 1.2;
        CHECK_THROWS_AS(solver::solve(p, grid, s, cfg), std::invalid_argument);
    }
    {
        solver::SchemeParams s;
        s.picard_iters = 0;
        CHECK_THROWS_AS(solver::solve(p, grid, s, cfg), std::invalid_argument);
    }
    {
        auto bad = cfg;
        bad.min_leaf.auto_select = true;
        bad.min_leaf_candidates.clear();
        CHECK_THROWS_AS(solver::solve(p, grid, ok, bad), std::invalid_argument);
    }
}

TEST_CASE("solve: non-finite paths are reported as a numerical failure") {
    auto p = problems::oscillatory_bsde();
    p.drift = [](double, std::span<const double>, std::span<double> out) {
        out[0] = std::numeric_limits<double>::quiet_NaN();
    };
    auto grid = make_grid(p.terminal_time, 2);
    solver::SolverConfig cfg;
    cfg.n_paths = 1000;
    cfg.group_size = 1000;
    CHECK_THROWS_AS(solver::solve(p, grid, solver::SchemeParams{}, cfg),
                    solver::NumericalFailure);
}

TEST_CASE("solve_many: per-run seeds, reproducible, schedule length checked") {
    auto p = problems::oscillatory_bsde();
    auto grid = make_grid(p.terminal_time, 2);
    solver::SolverConfig cfg;
    cfg.n_paths = 2000;
    cfg.group_size = 1000;
    std::vector<std::uint64_t> seeds{4, 5, 6};
    auto a = solver::solve_many(p, grid, solver::SchemeParams{}, cfg, 3, seeds);
    auto b = solver::solve_many(p, grid, solver::SchemeParams{}, cfg, 3, seeds);
    REQUIRE(a.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a[k].y0 == b[k].y0);
    CHECK(a[0].y0 != a[1].y0);  // distinct seeds actually vary the estimate
    CHECK_THROWS_AS(solver::solve_many(p, grid, solver::SchemeParams{}, cfg, 4, seeds),
                    std::invalid_argument);
}

TEST_CASE("parallel group execution is bit-identical to sequential") {
    auto p = problems::oscillatory_bsde();
    auto grid = make_grid(p.terminal_time, 4);
    solver::SolverConfig cfg;
    cfg.n_paths = 8000;
    cfg.group_size = 1000;
    cfg.seed_schedule = {31};
    cfg.threads = 1;
    auto seq = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    cfg.threads = 4;
    auto par = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    CHECK(seq.y0 == par.y0);
    CHECK(seq.z0 == par.z0);
}

TEST_CASE("trees grow to the leaf floor by default; pruning is opt-in") {
    auto p = problems::oscillatory_bsde();
    auto grid = make_grid(p.terminal_time, 4);
    solver::SolverConfig cfg;
    cfg.n_paths = 2000;
    cfg.group_size = 1000;
    cfg.seed_schedule = {123};
    const auto grown = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    CHECK_FALSE(grown.diagnostics.pruned);

    cfg.prune = true;
    const auto pruned = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    CHECK(pruned.diagnostics.pruned);
    CHECK(std::isfinite(pruned.y0));
    // The 1-SE-selected trees are never larger than the grown ones.
    REQUIRE(pruned.diagnostics.steps.size() == grown.diagnostics.steps.size());
    for (std::size_t k = 0; k < pruned.diagnostics.steps.size(); ++k) {
        CHECK(pruned.diagnostics.steps[k].mean_y_leaves <=
              grown.diagnostics.steps[k].mean_y_leaves);
        CHECK(pruned.diagnostics.steps[k].mean_z_leaves <=
              grown.diagnostics.steps[k].mean_z_leaves);
    }

    // Kinked drivers force grow-only regardless of the flag.
    auto rates = problems::different_rates_option(1);
    auto rgrid = make_grid(rates.terminal_time, 2);
    solver::SolverConfig rcfg;
    rcfg.n_paths = 2000;
    rcfg.group_size = 1000;
    rcfg.seed_schedule = {9};
    rcfg.prune = true;
    const auto res = solver::solve(rates, rgrid, solver::SchemeParams{}, rcfg);
    CHECK_FALSE(res.diagnostics.pruned);
}

TEST_CASE("auto min-leaf: chosen once, frozen, pruning disabled") {
    auto p = problems::different_rates_option(1);
    auto grid = make_grid(p.terminal_time, 4);
    solver::SolverConfig cfg;
    cfg.n_paths = 4000;
    cfg.group_size = 2000;
    cfg.min_leaf.auto_select = true;
    cfg.seed_schedule = {77};
    auto res = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    CHECK(res.diagnostics.min_leaf_used > 0);
    CHECK_FALSE(res.diagnostics.pruned);
    CHECK(std::isfinite(res.y0));

    auto res2 = solver::solve(p, grid, solver::SchemeParams{}, cfg);
    CHECK(res2.diagnostics.min_leaf_used == res.diagnostics.min_leaf_used);
    CHECK(res2.y0 == res.y0);
}
