#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fbsde/problem.hpp"
#include "fbsde/solver.hpp"

namespace fbsde::harness {

enum class ErrorMode { absolute, relative };
enum class TableFormat { csv, markdown };

struct ExperimentCell {
    std::size_t n_steps = 0;  // N_T
    std::size_t n_paths = 0;  // M
};

// Base seeds A and B; runs 0-4 draw from A, 5-9 from B, then the pattern
// repeats with the run index keeping every seed distinct.
struct SeedSchedule {
    std::uint64_t base_a = 1234567;
    std::uint64_t base_b = 7654321;

    std::uint64_t seed_for_run(std::size_t run) const {
        return ((run % 10) < 5 ? base_a : base_b) + run;
    }
};

struct ExperimentSpec {
    FbsdeProblem problem;
    solver::SchemeParams scheme;
    std::vector<ExperimentCell> cells;
    std::size_t group_size = 1000;
    solver::MinLeafSpec min_leaf{};
    bool prune = false;
    double holdout_fraction = 0.5;
    std::size_t n_runs = 10;
    SeedSchedule seeds{};
    ErrorMode error_mode = ErrorMode::absolute;
    unsigned threads = 0;
};

struct CellStats {
    ExperimentCell cell;
    bool ok = false;
    std::string message;  // failure description when !ok
    double mean_err_y = 0.0;
    double std_y = 0.0;   // std of the y0 estimates (relative mode: / |ref|)
    std::optional<double> mean_err_z;
    std::optional<double> std_z;
    double mean_runtime_s = 0.0;
};

struct ExperimentStats {
    std::vector<CellStats> cells;
    std::optional<double> cr_y;  // least-squares rate over cells with distinct N_T
    std::optional<double> cr_z;
};

using SolveFn = std::function<solver::SolveResult(
    const FbsdeProblem&, const TimeGrid&, const solver::SchemeParams&,
    const solver::SolverConfig&)>;
using ClockFn = std::function<double()>;  // seconds; injectable for deterministic output

// Runs every cell n_runs times; solver failures mark the cell and spare the
// rest. The problem must carry a reference y0.
ExperimentStats run_experiment(const ExperimentSpec& spec, SolveFn solve_fn = {},
                               ClockFn clock_fn = {});

// Negated least-squares slope of log2(err) against log2(n_steps).
// Needs >= 2 points with distinct n_steps and positive errors.
double convergence_rate(const std::vector<std::pair<std::size_t, double>>& points);

// Columns: N_T, M, mean_err_y, std_y, mean_err_z, std_z, runtime_s; final CR
// footer row. Errors in 4-significant-digit scientific notation; cells
// without a value stay blank.
std::string emit_table(const ExperimentStats& stats, TableFormat format);

}  // namespace fbsde::harness
