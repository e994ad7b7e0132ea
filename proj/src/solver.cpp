#include "fbsde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include "fbsde/rng.hpp"
#include "fbsde/tree.hpp"

namespace fbsde::solver {

namespace {

constexpr double kPicardTol = 1e-12;
constexpr int kDivergenceStreak = 5;
constexpr std::uint64_t kPathTag = 0x70617468;     // "path"
constexpr std::uint64_t kMinLeafTag = 0x6d696e6c;  // "minl"

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

unsigned resolve_threads(unsigned requested) {
    if (requested) return requested;
    if (const char* env = std::getenv("FBSDE_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && v > 0)
            return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs fn(g) for every group, strided across at most `threads` workers.
// Groups touch disjoint output slices, so the result cannot depend on the
// worker count; exceptions are re-thrown in group order for the same reason.
template <class Fn>
void for_each_group(std::size_t n_groups, unsigned threads, Fn&& fn) {
    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, threads), n_groups);
    std::vector<std::exception_ptr> errors(n_groups);
    auto run = [&](std::size_t w) {
        for (std::size_t g = w; g < n_groups; g += workers) {
            try {
                fn(g);
            } catch (...) {
                errors[g] = std::current_exception();
            }
        }
    };
    if (workers <= 1) {
        run(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
        run(0);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Predictor matrix for samples [begin, end) at time index i.
std::vector<double> predictors_at(const PathEnsemble& paths, std::size_t i, std::size_t begin,
                                  std::size_t end) {
    const std::size_t d = paths.state_dim;
    std::vector<double> px((end - begin) * d);
    for (std::size_t m = begin; m < end; ++m) {
        const auto xs = paths.state(m, i);
        std::copy(xs.begin(), xs.end(), px.begin() + (m - begin) * d);
    }
    return px;
}

// Regression target of the y update: y_{i+1} + dt (1-theta3) f_{i+1}.
std::vector<double> y_responses(const TimeGrid& grid, std::size_t i, const SchemeParams& scheme,
                                const BackwardState& next, std::size_t begin, std::size_t end) {
    const double dt = grid.dt[i];
    std::vector<double> resp(end - begin);
    for (std::size_t m = begin; m < end; ++m)
        resp[m - begin] = next.y[m] + dt * (1.0 - scheme.theta3) * next.f[m];
    return resp;
}

cart::RegressionTree fit_tree(std::span<const double> px, std::span<const double> resp,
                              std::size_t n_features, const StepFit& fit,
                              std::uint64_t seed) {
    if (fit.prune_and_select)
        return cart::fit_with_holdout(px, resp, n_features, fit.min_leaf,
                                      fit.holdout_fraction, seed);
    return cart::grow(px, resp, n_features, fit.min_leaf);
}

void validate_config(const SolverConfig& config) {
    if (config.group_size == 0)
        throw std::invalid_argument("solver: group_size must be positive");
    if (config.n_paths == 0 || config.n_paths % config.group_size != 0)
        throw std::invalid_argument(
            "solver: n_paths must be a positive multiple of group_size");
    if (config.seed_schedule.empty())
        throw std::invalid_argument("solver: seed_schedule must not be empty");
    if (!(config.holdout_fraction > 0.0) || !(config.holdout_fraction < 1.0))
        throw std::invalid_argument("solver: holdout_fraction must be in (0,1)");
    if (config.min_leaf.auto_select) {
        if (config.min_leaf_candidates.empty())
            throw std::invalid_argument("solver: min_leaf_candidates must not be empty");
    } else if (config.min_leaf.value == 0) {
        throw std::invalid_argument("solver: min_leaf must be positive");
    }
}

}  // namespace

void validate(const SchemeParams& scheme) {
    if (!(scheme.theta2 > 0.0) || scheme.theta2 > 1.0)
        throw std::invalid_argument("theta2 must be in (0,1]");
    if (!(scheme.theta1 >= 0.0) || scheme.theta1 > 1.0)
        throw std::invalid_argument("theta1 must be in [0,1]");
    if (!(scheme.theta3 >= 0.0) || scheme.theta3 > 1.0)
        throw std::invalid_argument("theta3 must be in [0,1]");
    if (scheme.picard_iters < 1)
        throw std::invalid_argument("picard iteration count must be at least 1");
}

std::uint64_t path_seed(std::uint64_t run_seed) {
    return rng::derive_seed(run_seed, {kPathTag});
}

BackwardState terminal_condition(const FbsdeProblem& problem, const PathEnsemble& paths) {
    const std::size_t M = paths.n_paths;
    const std::size_t d = paths.noise_dim;
    const double T = problem.terminal_time;
    BackwardState st;
    st.time_index = paths.n_steps;
    st.y.resize(M);
    st.z.resize(M * d);
    st.f.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
        const auto xT = paths.state(m, paths.n_steps);
        st.y[m] = problem.terminal(xT);
        const std::span<double> zrow{st.z.data() + m * d, d};
        problem.terminal_gradient(xT, zrow);
        st.f[m] = problem.driver(T, xT, st.y[m], zrow);
    }
    return st;
}

double z_step(const FbsdeProblem& problem, const PathEnsemble& paths, const TimeGrid& grid,
              std::size_t i, const SchemeParams& scheme, const BackwardState& next,
              const StepFit& fit, std::size_t begin, std::size_t end, std::uint64_t seed,
              std::span<double> z_out) {
    (void)problem;
    const std::size_t d = paths.noise_dim;
    const std::size_t n = end - begin;
    const double dt = grid.dt[i];
    const auto px = predictors_at(paths, i, begin, end);
    if (!all_finite(px))
        throw NumericalFailure("z regression saw non-finite state values");

    std::vector<double> resp(n);
    double total_leaves = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t m = begin; m < end; ++m) {
            const double dwj = paths.increment(m, i)[j];
            double r = next.y[m] * dwj / dt + (1.0 - scheme.theta1) * next.f[m] * dwj;
            if (scheme.theta2 != 1.0)  // theta2 = 1 never reads the z continuation
                r -= (1.0 - scheme.theta2) * next.z[m * d + j];
            resp[m - begin] = r / scheme.theta2;
        }
        if (!all_finite(resp))
            throw NumericalFailure("z regression response is not finite");
        const auto tree =
            fit_tree(px, resp, paths.state_dim, fit, rng::derive_seed(seed, {j}));
        total_leaves += static_cast<double>(tree.leaf_count());
        for (std::size_t m = begin; m < end; ++m) {
            const double v = tree.predict(
                {px.data() + (m - begin) * paths.state_dim, paths.state_dim});
            if (!std::isfinite(v))
                throw NumericalFailure("z estimate is not finite");
            z_out[m * d + j] = v;
        }
    }
    return total_leaves / static_cast<double>(d);
}

YStepInfo y_step(const FbsdeProblem& problem, const PathEnsemble& paths, const TimeGrid& grid,
                 std::size_t i, const SchemeParams& scheme, const BackwardState& next,
                 std::span<const double> z_at_i, const StepFit& fit, std::size_t begin,
                 std::size_t end, std::uint64_t seed, std::span<double> y_out) {
    const std::size_t d = paths.noise_dim;
    const double dt = grid.dt[i];
    const double t = grid.t[i];
    const auto px = predictors_at(paths, i, begin, end);
    if (!all_finite(px))
        throw NumericalFailure("y regression saw non-finite state values");
    if (!all_finite(z_at_i.subspan(begin * d, (end - begin) * d)))
        throw NumericalFailure("y update saw non-finite z estimates");
    const auto resp = y_responses(grid, i, scheme, next, begin, end);
    if (!all_finite(resp))
        throw NumericalFailure("y regression response is not finite");

    const auto tree = fit_tree(px, resp, paths.state_dim, fit, seed);
    std::vector<double> pred(end - begin);
    for (std::size_t m = begin; m < end; ++m) {
        pred[m - begin] =
            tree.predict({px.data() + (m - begin) * paths.state_dim, paths.state_dim});
        y_out[m] = pred[m - begin];
    }

    YStepInfo info;
    info.leaves = static_cast<double>(tree.leaf_count());
    double prev = std::numeric_limits<double>::infinity();
    int streak = 0;
    for (int k = 0; k < scheme.picard_iters; ++k) {
        ++info.iterations;
        double res = 0.0;
        for (std::size_t m = begin; m < end; ++m) {
            const double f = problem.driver(t, paths.state(m, i), y_out[m],
                                            {z_at_i.data() + m * d, d});
            const double y_new = pred[m - begin] + dt * scheme.theta3 * f;
            res = std::max(res, std::abs(y_new - y_out[m]));
            y_out[m] = y_new;
        }
        info.picard_residual = res;
        if (res <= kPicardTol) break;
        if (res > prev) {
            if (++streak >= kDivergenceStreak)
                throw NumericalFailure("picard iteration diverged in the y update");
        } else {
            streak = 0;
        }
        prev = res;
    }
    if (!all_finite(std::span<const double>{y_out.data() + begin, end - begin}))
        throw NumericalFailure("y estimate is not finite");
    return info;
}

SolveResult solve(const FbsdeProblem& problem, const TimeGrid& grid, const SchemeParams& scheme,
                  const SolverConfig& config) {
    validate(scheme);
    validate_config(config);

    const std::size_t M = config.n_paths;
    const std::size_t G = config.group_size;
    const std::size_t n_groups = M / G;
    const std::size_t N = grid.n_steps();
    const std::size_t d = problem.noise_dim;
    const std::uint64_t run_seed = config.seed_schedule.front();
    const unsigned threads = resolve_threads(config.threads);

    const auto paths = simulate_euler(problem, grid, M, path_seed(run_seed));
    if (!all_finite(paths.x))
        throw NumericalFailure("simulated paths contain non-finite values");

    BackwardState cur = terminal_condition(problem, paths);
    if (!all_finite(cur.y) || !all_finite(cur.z) || !all_finite(cur.f))
        throw NumericalFailure("terminal values are not finite");

    SolveResult out;
    const bool grow_only = !config.prune || problem.nonlinear || config.min_leaf.auto_select;
    out.diagnostics.pruned = !grow_only;

    StepFit fit;
    fit.prune_and_select = !grow_only;
    fit.holdout_fraction = config.holdout_fraction;
    if (config.min_leaf.auto_select) {
        // Cross-validate on the first backward step's y regression (group 0),
        // then freeze the choice for the whole sweep. Candidates larger than a
        // quarter of the sample would grow degenerate trees and are dropped.
        const auto px = predictors_at(paths, N - 1, 0, G);
        const auto resp = y_responses(grid, N - 1, scheme, cur, 0, G);
        std::vector<std::size_t> candidates;
        for (std::size_t c : config.min_leaf_candidates)
            if (c <= G / 4) candidates.push_back(c);
        if (candidates.empty()) candidates.push_back(1);
        fit.min_leaf = cart::best_min_leaf(px, resp, problem.state_dim, candidates,
                                           config.cv_folds,
                                           rng::derive_seed(run_seed, {kMinLeafTag}));
    } else {
        fit.min_leaf = config.min_leaf.value;
    }
    out.diagnostics.min_leaf_used = fit.min_leaf;

    for (std::size_t i = N; i-- > 1;) {
        std::vector<double> y_new(M), z_new(M * d), f_new(M);
        std::vector<double> z_leaves(n_groups), y_leaves(n_groups), residuals(n_groups);
        for_each_group(n_groups, threads, [&](std::size_t g) {
            const std::size_t begin = g * G, end = (g + 1) * G;
            z_leaves[g] = z_step(problem, paths, grid, i, scheme, cur, fit, begin, end,
                                 rng::derive_seed(run_seed, {g, i, 0}), z_new);
            const auto info = y_step(problem, paths, grid, i, scheme, cur, z_new, fit, begin,
                                     end, rng::derive_seed(run_seed, {g, i, 1}), y_new);
            y_leaves[g] = info.leaves;
            residuals[g] = info.picard_residual;
        });
        for (std::size_t m = 0; m < M; ++m)
            f_new[m] = problem.driver(grid.t[i], paths.state(m, i), y_new[m],
                                      {z_new.data() + m * d, d});
        cur.time_index = i;
        cur.y = std::move(y_new);
        cur.z = std::move(z_new);
        cur.f = std::move(f_new);

        StepDiagnostics sd;
        sd.time_index = i;
        for (std::size_t g = 0; g < n_groups; ++g) {
            sd.mean_y_leaves += y_leaves[g];
            sd.mean_z_leaves += z_leaves[g];
            sd.picard_residual = std::max(sd.picard_residual, residuals[g]);
        }
        sd.mean_y_leaves /= static_cast<double>(n_groups);
        sd.mean_z_leaves /= static_cast<double>(n_groups);
        out.diagnostics.steps.push_back(sd);
    }

    // Pooled step to t_0: the state is degenerate (every path starts at x0),
    // so the conditional expectations are plain sample averages over all
    // paths, followed by the same scalar Picard update.
    const double dt0 = grid.dt[0];
    std::vector<double> z0(d, 0.0);
    double e_sum = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const auto dw = paths.increment(m, 0);
        const double y = cur.y[m];
        const double f = cur.f[m];
        for (std::size_t j = 0; j < d; ++j) {
            double r = y * dw[j] / dt0 + (1.0 - scheme.theta1) * f * dw[j];
            if (scheme.theta2 != 1.0)
                r -= (1.0 - scheme.theta2) * cur.z[m * d + j];
            z0[j] += r / scheme.theta2;
        }
        e_sum += y + dt0 * (1.0 - scheme.theta3) * f;
    }
    for (auto& v : z0) v /= static_cast<double>(M);
    const double e0 = e_sum / static_cast<double>(M);

    double y0 = e0;
    double last_res = 0.0;
    double prev = std::numeric_limits<double>::infinity();
    int streak = 0;
    for (int k = 0; k < scheme.picard_iters; ++k) {
        const double y_new =
            e0 + dt0 * scheme.theta3 * problem.driver(grid.t[0], problem.x0, y0, z0);
        last_res = std::abs(y_new - y0);
        y0 = y_new;
        if (last_res <= kPicardTol) break;
        if (last_res > prev) {
            if (++streak >= kDivergenceStreak)
                throw NumericalFailure("picard iteration diverged at the initial time");
        } else {
            streak = 0;
        }
        prev = last_res;
    }
    if (!std::isfinite(y0) || !all_finite(z0))
        throw NumericalFailure("initial-time estimate is not finite");

    StepDiagnostics sd0;
    sd0.time_index = 0;
    sd0.mean_y_leaves = 1.0;  // the pooled average is a single cell
    sd0.mean_z_leaves = 1.0;
    sd0.picard_residual = last_res;
    out.diagnostics.steps.push_back(sd0);

    out.y0 = y0;
    out.z0 = std::move(z0);
    return out;
}

std::vector<SolveResult> solve_many(const FbsdeProblem& problem, const TimeGrid& grid,
                                    const SchemeParams& scheme, const SolverConfig& config,
                                    std::size_t n_runs,
                                    std::span<const std::uint64_t> seed_schedule) {
    if (seed_schedule.size() < n_runs)
        throw std::invalid_argument("solver: seed schedule is shorter than the run count");
    std::vector<SolveResult> results;
    results.reserve(n_runs);
    for (std::size_t r = 0; r < n_runs; ++r) {
        SolverConfig run_cfg = config;
        run_cfg.seed_schedule = {seed_schedule[r]};
        results.push_back(solve(problem, grid, scheme, run_cfg));
    }
    return results;
}

}  // namespace fbsde::solver
