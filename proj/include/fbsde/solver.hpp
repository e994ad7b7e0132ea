#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbsde/ensemble.hpp"
#include "fbsde/grid.hpp"
#include "fbsde/problem.hpp"

namespace fbsde::solver {

// Backward theta discretization
//   z_i = (1/theta2) [ E_i[y_{i+1} dw]/dt + (1-theta1) E_i[f_{i+1} dw]
//                      - (1-theta2) E_i[z_{i+1}] ]
//   y_i = E_i[y_{i+1}] + dt theta3 f(t_i, x_i, y_i, z_i)
//         + dt (1-theta3) E_i[f_{i+1}]
// with the implicit y resolved by Picard iteration. theta2 = 1 drops the
// E_i[z_{i+1}] term identically (it is never evaluated).
struct SchemeParams {
    double theta1 = 0.5;
    double theta2 = 1.0;
    double theta3 = 0.5;
    int picard_iters = 20;
};

void validate(const SchemeParams& scheme);

// How conditional-expectation trees are fit at each backward step.
struct MinLeafSpec {
    bool auto_select = false;  // choose by CV at the first backward step, then freeze
    std::size_t value = 5;
};

struct SolverConfig {
    std::size_t n_paths = 0;       // M; must be a positive multiple of group_size
    std::size_t group_size = 1000; // G; trees never see samples outside their group
    MinLeafSpec min_leaf{};
    // Opt-in cost-complexity pruning with 1-SE holdout selection per step.
    // Off by default: the z regressions carry conditional variance ~ 1/dt, so
    // any holdout rule collapses them to the root, and that bias never
    // averages out downstream. Grown-to-min-leaf trees are noisier per sample
    // but unbiased, and the pooled final step averages the noise away.
    // Ignored (always grow-only) when min_leaf is auto or the problem is
    // flagged nonlinear.
    bool prune = false;
    double holdout_fraction = 0.5;  // used only when prune is set
    std::vector<std::uint64_t> seed_schedule{1};  // solve() uses the front entry
    std::vector<std::size_t> min_leaf_candidates{5, 10, 20, 40, 80, 160, 320};
    std::size_t cv_folds = 5;
    unsigned threads = 0;  // 0: FBSDE_THREADS env, else hardware concurrency
};

// Estimates at one time index, for every sample: y [M], z [M*d], and the
// driver evaluated at them, f [M] (cached so the next step never re-touches
// later time slices).
struct BackwardState {
    std::size_t time_index = 0;
    std::vector<double> y;
    std::vector<double> z;
    std::vector<double> f;
};

struct StepDiagnostics {
    std::size_t time_index = 0;
    double mean_y_leaves = 0.0;
    double mean_z_leaves = 0.0;
    double picard_residual = 0.0;  // last max-norm update, worst group
};

struct SolveDiagnostics {
    std::vector<StepDiagnostics> steps;  // time index descending (first computed first)
    std::size_t min_leaf_used = 0;
    bool pruned = false;
};

struct SolveResult {
    double y0 = 0.0;
    std::vector<double> z0;
    SolveDiagnostics diagnostics;
};

// Numerical breakdowns (diverging Picard iteration, non-finite values);
// distinct from std::invalid_argument so callers can map them to different
// exit codes.
class NumericalFailure : public std::runtime_error {
public:
    explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

// Resolved per-tree fitting policy (auto CV already collapsed to a value).
struct StepFit {
    std::size_t min_leaf = 5;
    bool prune_and_select = false;  // true: holdout split, prune, 1-SE select
    double holdout_fraction = 0.5;
};

// One regression tree per noise coordinate on predictors x[.][i], responses
//   (1/theta2) [ y_{i+1} dw^j/dt + (1-theta1) f_{i+1} dw^j - (1-theta2) z^j_{i+1} ].
// Writes z estimates for samples [begin, end) into z_out (full-ensemble
// layout [m][j]); returns mean leaf count across the coordinate trees.
double z_step(const FbsdeProblem& problem, const PathEnsemble& paths, const TimeGrid& grid,
              std::size_t i, const SchemeParams& scheme, const BackwardState& next,
              const StepFit& fit, std::size_t begin, std::size_t end, std::uint64_t seed,
              std::span<double> z_out);

struct YStepInfo {
    double leaves = 0.0;
    double picard_residual = 0.0;
    int iterations = 0;
};

// One tree with responses y_{i+1} + dt (1-theta3) f_{i+1}, then Picard on
// y = prediction + dt theta3 f(t_i, x_i, y, z_i). Throws NumericalFailure if
// the residual grows five iterations in a row.
YStepInfo y_step(const FbsdeProblem& problem, const PathEnsemble& paths, const TimeGrid& grid,
                 std::size_t i, const SchemeParams& scheme, const BackwardState& next,
                 std::span<const double> z_at_i, const StepFit& fit, std::size_t begin,
                 std::size_t end, std::uint64_t seed, std::span<double> y_out);

// Terminal slice: y = g(x_T), z = (grad g . b)(x_T).
BackwardState terminal_condition(const FbsdeProblem& problem, const PathEnsemble& paths);

// Seed the path simulation derives from a run seed (part of the
// reproducibility contract: solve(seed) simulates with path_seed(seed)).
std::uint64_t path_seed(std::uint64_t run_seed);

// Full backward sweep: simulate, terminal condition, per-group tree steps
// from i = n_steps-1 down to 1, then a pooled plain-average step to t_0.
SolveResult solve(const FbsdeProblem& problem, const TimeGrid& grid, const SchemeParams& scheme,
                  const SolverConfig& config);

// Independent repetitions, one seed per run.
std::vector<SolveResult> solve_many(const FbsdeProblem& problem, const TimeGrid& grid,
                                    const SchemeParams& scheme, const SolverConfig& config,
                                    std::size_t n_runs,
                                    std::span<const std::uint64_t> seed_schedule);

}  // namespace fbsde::solver
