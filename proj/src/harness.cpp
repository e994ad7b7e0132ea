#include "fbsde/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "fbsde/grid.hpp"

namespace fbsde::harness {

namespace {

double steady_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string sci4(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.4e", v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

double norm2(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

// Sample standard deviation of the y0 estimates (n-1 denominator; 0 for a
// single run).
double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string render_row(const std::vector<std::string>& cells, TableFormat format) {
    std::string out;
    if (format == TableFormat::csv) {
        for (std::size_t k = 0; k < cells.size(); ++k) {
            if (k) out += ',';
            out += cells[k];
        }
    } else {
        out += "|";
        for (const auto& c : cells) {
            out += ' ';
            out += c;
            out += " |";
        }
    }
    out += '\n';
    return out;
}

}  // namespace

ExperimentStats run_experiment(const ExperimentSpec& spec, SolveFn solve_fn, ClockFn clock_fn) {
    if (!spec.problem.reference_y0)
        throw std::invalid_argument("experiment: the problem carries no reference value");
    if (spec.cells.empty())
        throw std::invalid_argument("experiment: need at least one (N_T, M) cell");
    if (spec.n_runs == 0) throw std::invalid_argument("experiment: need at least one run");

    if (!solve_fn)
        solve_fn = [](const FbsdeProblem& p, const TimeGrid& g, const solver::SchemeParams& s,
                      const solver::SolverConfig& c) { return solver::solve(p, g, s, c); };
    if (!clock_fn) clock_fn = steady_seconds;

    const double ref_y = spec.problem.reference_y0->value;
    const auto& ref_z = spec.problem.reference_z0;
    const bool relative = spec.error_mode == ErrorMode::relative;
    const double y_scale = relative ? std::abs(ref_y) : 1.0;
    const double z_scale = relative && ref_z ? norm2(*ref_z) : 1.0;

    ExperimentStats stats;
    for (const auto& cell : spec.cells) {
        CellStats cs;
        cs.cell = cell;
        std::vector<double> y_est;
        std::vector<std::vector<double>> z_est;
        std::vector<double> runtimes;
        try {
            const auto grid = make_grid(spec.problem.terminal_time, cell.n_steps);
            for (std::size_t run = 0; run < spec.n_runs; ++run) {
                solver::SolverConfig cfg;
                cfg.n_paths = cell.n_paths;
                cfg.group_size = spec.group_size;
                cfg.min_leaf = spec.min_leaf;
                cfg.prune = spec.prune;
                cfg.holdout_fraction = spec.holdout_fraction;
                cfg.seed_schedule = {spec.seeds.seed_for_run(run)};
                cfg.threads = spec.threads;
                const double t0 = clock_fn();
                auto result = solve_fn(spec.problem, grid, spec.scheme, cfg);
                const double t1 = clock_fn();
                y_est.push_back(result.y0);
                z_est.push_back(std::move(result.z0));
                runtimes.push_back(t1 - t0);
            }
            cs.ok = true;
        } catch (const solver::NumericalFailure& e) {
            cs.ok = false;
            cs.message = e.what();
        }

        if (cs.ok) {
            double err_sum = 0.0;
            for (double y : y_est) err_sum += std::abs(y - ref_y);
            cs.mean_err_y = err_sum / static_cast<double>(y_est.size()) / y_scale;
            cs.std_y = sample_std(y_est) / y_scale;

            if (ref_z) {
                const std::size_t d = ref_z->size();
                double zerr_sum = 0.0;
                std::vector<double> z_mean(d, 0.0);
                for (const auto& z : z_est) {
                    zerr_sum += euclidean_distance(z, *ref_z);
                    for (std::size_t k = 0; k < d; ++k) z_mean[k] += z[k];
                }
                for (auto& v : z_mean) v /= static_cast<double>(z_est.size());
                double disp = 0.0;
                for (const auto& z : z_est) {
                    const double dk = euclidean_distance(z, z_mean);
                    disp += dk * dk;
                }
                const double n = static_cast<double>(z_est.size());
                cs.mean_err_z = zerr_sum / n / z_scale;
                cs.std_z =
                    z_est.size() < 2 ? 0.0 : std::sqrt(disp / (n - 1.0)) / z_scale;
            }

            double rt = 0.0;
            for (double r : runtimes) rt += r;
            cs.mean_runtime_s = rt / static_cast<double>(runtimes.size());
        }
        stats.cells.push_back(std::move(cs));
    }

    // Rates over surviving cells with positive errors; they need two distinct
    // step counts to be meaningful.
    auto rate_over = [&](auto err_of) -> std::optional<double> {
        std::vector<std::pair<std::size_t, double>> pts;
        std::set<std::size_t> distinct;
        for (const auto& cs : stats.cells) {
            const std::optional<double> err = err_of(cs);
            if (!cs.ok || !err || !(*err > 0.0)) continue;
            pts.emplace_back(cs.cell.n_steps, *err);
            distinct.insert(cs.cell.n_steps);
        }
        if (pts.size() < 2 || distinct.size() < 2) return std::nullopt;
        return convergence_rate(pts);
    };
    stats.cr_y = rate_over([](const CellStats& cs) -> std::optional<double> {
        return cs.mean_err_y;
    });
    stats.cr_z = rate_over([](const CellStats& cs) { return cs.mean_err_z; });
    return stats;
}

double convergence_rate(const std::vector<std::pair<std::size_t, double>>& points) {
    if (points.size() < 2)
        throw std::invalid_argument("convergence rate needs at least two points");
    std::set<std::size_t> distinct;
    for (const auto& [n, err] : points) {
        if (n == 0) throw std::invalid_argument("convergence rate: step count must be positive");
        if (!(err > 0.0))
            throw std::invalid_argument("convergence rate: errors must be positive");
        distinct.insert(n);
    }
    if (distinct.size() < 2)
        throw std::invalid_argument("convergence rate needs two distinct step counts");

    const double n = static_cast<double>(points.size());
    double xbar = 0.0, ybar = 0.0;
    for (const auto& [nt, err] : points) {
        xbar += std::log2(static_cast<double>(nt));
        ybar += std::log2(err);
    }
    xbar /= n;
    ybar /= n;
    double sxy = 0.0, sxx = 0.0;
    for (const auto& [nt, err] : points) {
        const double dx = std::log2(static_cast<double>(nt)) - xbar;
        sxy += dx * (std::log2(err) - ybar);
        sxx += dx * dx;
    }
    return -sxy / sxx;
}

std::string emit_table(const ExperimentStats& stats, TableFormat format) {
    const std::vector<std::string> header{"N_T",   "M",     "mean_err_y", "std_y",
                                          "mean_err_z", "std_z", "runtime_s"};
    std::string out = render_row(header, format);
    if (format == TableFormat::markdown)
        out += render_row(std::vector<std::string>(header.size(), "---"), format);

    for (const auto& cs : stats.cells) {
        std::vector<std::string> row(7);
        row[0] = std::to_string(cs.cell.n_steps);
        row[1] = std::to_string(cs.cell.n_paths);
        if (cs.ok) {
            row[2] = sci4(cs.mean_err_y);
            row[3] = sci4(cs.std_y);
            if (cs.mean_err_z) row[4] = sci4(*cs.mean_err_z);
            if (cs.std_z) row[5] = sci4(*cs.std_z);
            row[6] = fixed(cs.mean_runtime_s, 3);
        } else {
            row[2] = "failed: " + cs.message;
        }
        out += render_row(row, format);
    }

    std::vector<std::string> cr(7);
    cr[0] = "CR";
    if (stats.cr_y) cr[2] = fixed(*stats.cr_y, 4);
    if (stats.cr_z) cr[4] = fixed(*stats.cr_z, 4);
    out += render_row(cr, format);
    return out;
}

}  // namespace fbsde::harness
