#include "fbsde/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "fbsde/problems.hpp"
#include "fbsde/rng.hpp"
#include "fbsde/tree.hpp"

namespace fbsde::cli {

namespace {

const char* kUsage =
    "usage: fbsde <subcommand> [options]\n"
    "\n"
    "subcommands:\n"
    "  run            solve a problem over an (N_T, M) sweep and print the table\n"
    "  list-problems  show the available problem families\n"
    "  verify         run the fast self-checks\n"
    "\n"
    "run options (same keys work in a --config key=value file; flags win):\n"
    "  --config FILE      read settings from FILE first\n"
    "  --problem NAME     problem family; D-parameterized families use name:D\n"
    "  --nt LIST          time step counts, comma separated\n"
    "  --m LIST           path counts; zipped with --nt, or broadcast if scalar\n"
    "  --g N              sample group size (default 1000)\n"
    "  --theta1/2/3 X     scheme parameters (defaults 0.5, 1, 0.5)\n"
    "  --picard N         picard iteration cap (default 20)\n"
    "  --runs N           independent repetitions per cell (default 10)\n"
    "  --seed-a/--seed-b N  base seeds of the run schedule\n"
    "  --min-leaf N|auto  smallest tree leaf; auto cross-validates it\n"
    "  --prune BOOL       holdout-pruned trees instead of grow-only (default false)\n"
    "  --holdout X        pruning holdout fraction in (0,1), used with --prune\n"
    "  --sigma X          per-asset volatility (rainbow)\n"
    "  --dims D           asset count override for name:D families\n"
    "  --threads N        worker threads (0 = FBSDE_THREADS env or hardware)\n"
    "  --format csv|markdown\n"
    "  --out FILE         write the table to FILE instead of stdout\n";

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    if (value.empty() ||
        !std::all_of(value.begin(), value.end(),
                     [](unsigned char c) { return std::isdigit(c); }))
        throw std::invalid_argument(key + ": expected a non-negative integer; got '" +
                                    value + "'");
    try {
        return std::stoull(value);
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": integer out of range; got '" + value + "'");
    }
}

std::size_t parse_positive(const std::string& key, const std::string& value) {
    const auto v = parse_u64(key, value);
    if (v == 0) throw std::invalid_argument(key + ": must be positive");
    return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected a number; got '" + value + "'");
    }
}

std::vector<std::size_t> parse_positive_list(const std::string& key,
                                             const std::string& value) {
    std::vector<std::size_t> out;
    std::istringstream in(value);
    std::string token;
    while (std::getline(in, token, ',')) out.push_back(parse_positive(key, trim(token)));
    if (out.empty()) throw std::invalid_argument(key + ": expected a non-empty list");
    return out;
}

solver::SchemeParams scheme_of(const RunConfig& cfg) {
    solver::SchemeParams s;
    s.theta1 = cfg.theta1;
    s.theta2 = cfg.theta2;
    s.theta3 = cfg.theta3;
    s.picard_iters = cfg.picard;
    return s;
}

}  // namespace

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "problem") {
        cfg.problem = value;
    } else if (key == "nt") {
        cfg.nt = parse_positive_list(key, value);
    } else if (key == "m") {
        cfg.m = parse_positive_list(key, value);
    } else if (key == "g") {
        cfg.g = parse_positive(key, value);
    } else if (key == "theta1" || key == "theta2" || key == "theta3") {
        const double v = parse_double(key, value);
        (key == "theta1" ? cfg.theta1 : key == "theta2" ? cfg.theta2 : cfg.theta3) = v;
        solver::validate(scheme_of(cfg));  // rejecting bad values at parse time
    } else if (key == "picard") {
        const auto v = parse_u64(key, value);
        if (v > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
            throw std::invalid_argument("picard: value too large");
        cfg.picard = static_cast<int>(v);
        solver::validate(scheme_of(cfg));
    } else if (key == "runs") {
        cfg.runs = parse_positive(key, value);
    } else if (key == "seed_a") {
        cfg.seed_a = parse_u64(key, value);
    } else if (key == "seed_b") {
        cfg.seed_b = parse_u64(key, value);
    } else if (key == "min_leaf") {
        if (value == "auto") {
            cfg.min_leaf_auto = true;
            cfg.min_leaf.reset();
        } else {
            cfg.min_leaf = parse_positive(key, value);
            cfg.min_leaf_auto = false;
        }
    } else if (key == "prune") {
        if (value == "true")
            cfg.prune = true;
        else if (value == "false")
            cfg.prune = false;
        else
            throw std::invalid_argument("prune: expected true or false; got '" + value + "'");
    } else if (key == "holdout") {
        const double v = parse_double(key, value);
        if (!(v > 0.0) || !(v < 1.0))
            throw std::invalid_argument("holdout: must be in (0,1)");
        cfg.holdout = v;
    } else if (key == "out") {
        cfg.out = value;
    } else if (key == "format") {
        if (value == "csv")
            cfg.format = harness::TableFormat::csv;
        else if (value == "markdown")
            cfg.format = harness::TableFormat::markdown;
        else
            throw std::invalid_argument("format: expected csv or markdown; got '" + value +
                                        "'");
    } else if (key == "sigma") {
        cfg.sigma = parse_double(key, value);
    } else if (key == "dims") {
        cfg.dims = parse_positive(key, value);
    } else if (key == "threads") {
        const auto v = parse_u64(key, value);
        if (v > std::numeric_limits<unsigned>::max())
            throw std::invalid_argument("threads: value too large");
        cfg.threads = static_cast<unsigned>(v);
    } else {
        throw std::invalid_argument("unknown key '" + key + "'");
    }
}

RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key=value; got '" + stripped +
                                        "'");
        apply_key(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
    return cfg;
}

harness::ExperimentSpec build_experiment(const RunConfig& cfg) {
    if (cfg.problem.empty())
        throw std::invalid_argument("problem is required (--problem or a config file)");
    if (cfg.nt.empty() || cfg.m.empty())
        throw std::invalid_argument("nt and m are both required");

    harness::ExperimentSpec spec;
    spec.problem = problems::make_problem(cfg.problem, cfg.dims, cfg.sigma);
    spec.scheme = scheme_of(cfg);
    solver::validate(spec.scheme);

    if (cfg.nt.size() == cfg.m.size()) {
        for (std::size_t k = 0; k < cfg.nt.size(); ++k)
            spec.cells.push_back({cfg.nt[k], cfg.m[k]});
    } else if (cfg.m.size() == 1) {
        for (std::size_t nt : cfg.nt) spec.cells.push_back({nt, cfg.m.front()});
    } else if (cfg.nt.size() == 1) {
        for (std::size_t m : cfg.m) spec.cells.push_back({cfg.nt.front(), m});
    } else {
        throw std::invalid_argument(
            "nt and m lists must have equal length (or one of them length 1)");
    }

    spec.group_size = cfg.g;
    if (cfg.min_leaf) {
        spec.min_leaf = {false, *cfg.min_leaf};
    } else if (cfg.min_leaf_auto || spec.problem.nonlinear) {
        spec.min_leaf = {true, 5};
    } else {
        spec.min_leaf = {false, 5};
    }
    spec.prune = cfg.prune;
    spec.holdout_fraction = cfg.holdout;
    spec.n_runs = cfg.runs;
    spec.seeds = {cfg.seed_a, cfg.seed_b};
    spec.error_mode = spec.problem.name == "oscillatory" ? harness::ErrorMode::absolute
                                                         : harness::ErrorMode::relative;
    spec.threads = cfg.threads;
    return spec;
}

namespace {

int cmd_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    try {
        // The config file is a base layer: locate it first, then let the
        // remaining flags override it in command-line order.
        for (std::size_t k = 1; k < args.size(); ++k) {
            if (args[k] != "--config") continue;
            if (k + 1 >= args.size())
                throw std::invalid_argument("config: missing file path");
            std::ifstream file(args[k + 1]);
            if (!file)
                throw std::invalid_argument("config: cannot open '" + args[k + 1] + "'");
            cfg = parse_config(file);
        }
        for (std::size_t k = 1; k < args.size(); ++k) {
            const std::string& flag = args[k];
            if (flag.rfind("--", 0) != 0)
                throw std::invalid_argument("unexpected argument '" + flag + "'");
            if (k + 1 >= args.size())
                throw std::invalid_argument(flag + ": missing value");
            std::string key = flag.substr(2);
            std::replace(key.begin(), key.end(), '-', '_');
            const std::string& value = args[++k];
            if (key == "config") continue;  // already layered in
            apply_key(cfg, key, value);
        }
        const auto spec = build_experiment(cfg);
        const auto stats = harness::run_experiment(spec);
        const std::string table = emit_table(stats, cfg.format);
        if (cfg.out.empty()) {
            out << table;
        } else {
            std::ofstream file(cfg.out);
            if (!file) throw std::runtime_error("cannot open output file '" + cfg.out + "'");
            file << table;
            file.flush();
            if (!file) throw std::runtime_error("failed writing '" + cfg.out + "'");
        }
        return 0;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cmd_list_problems(std::ostream& out) {
    for (const auto& entry : problems::catalog()) {
        out << entry.name;
        if (entry.needs_dims) out << ":D";
        out << "  -  " << entry.description << "\n";
    }
    return 0;
}

bool grid_telescopes() {
    const auto g = make_grid(0.7, 7);
    double sum = 0.0;
    for (double dt : g.dt) sum += dt;
    return g.t.front() == 0.0 && g.t.back() == 0.7 && std::abs(sum - 0.7) < 1e-12;
}

bool rng_reproduces() {
    if (rng::derive_seed(1, {2, 3}) != rng::derive_seed(1, {2, 3})) return false;
    if (rng::derive_seed(1, {2, 3}) == rng::derive_seed(1, {3, 2})) return false;
    rng::NormalSampler a(42), b(42);
    for (int k = 0; k < 100; ++k) {
        const double x = a();
        if (!std::isfinite(x) || x != b()) return false;
    }
    const auto perm = rng::shuffled_indices(10, 7);
    std::vector<bool> seen(10, false);
    for (std::size_t i : perm) {
        if (i >= 10 || seen[i]) return false;
        seen[i] = true;
    }
    return true;
}

bool brownian_increments_consistent() {
    const auto grid = make_grid(1.0, 2);
    const auto e = simulate_brownian(grid, 200, 1, 9);
    double mean = 0.0, var = 0.0;
    for (std::size_t m = 0; m < e.n_paths; ++m) {
        if (e.state(m, 1)[0] != e.increment(m, 0)[0]) return false;
        mean += e.increment(m, 0)[0];
    }
    mean /= static_cast<double>(e.n_paths);
    for (std::size_t m = 0; m < e.n_paths; ++m) {
        const double d = e.increment(m, 0)[0] - mean;
        var += d * d;
    }
    var /= static_cast<double>(e.n_paths - 1);
    return std::abs(mean) < 0.2 && var > 0.3 && var < 0.7;  // dt = 0.5
}

bool tree_splits_means() {
    const std::vector<double> x{0, 1, 2, 3};
    const std::vector<double> y{0, 0, 1, 1};
    const auto t = cart::grow(x, y, 1, 1);
    double probe = 1.0;
    if (t.predict({&probe, 1}) != 0.0) return false;
    probe = 2.0;
    return t.predict({&probe, 1}) == 1.0;
}

bool closed_form_prices() {
    const auto bs = problems::bs_closed_form(100, 100, 0.03, 0.04, 0.2, 0.33);
    return std::abs(bs.price - 4.367139) < 1e-5;
}

bool solver_reproduces_constant() {
    FbsdeProblem p;
    p.name = "constant";
    p.state_dim = p.noise_dim = 1;
    p.terminal_time = 1.0;
    p.x0 = {0.0};
    p.drift = [](double, std::span<const double>, std::span<double> a) { a[0] = 0.0; };
    p.diffusion = [](double, std::span<const double>, std::span<double> b) { b[0] = 1.0; };
    p.driver = [](double, std::span<const double>, double, std::span<const double>) {
        return 0.0;
    };
    p.terminal = [](std::span<const double>) { return 1.0; };
    p.terminal_gradient = [](std::span<const double>, std::span<double> g) { g[0] = 0.0; };
    solver::SolverConfig cfg;
    cfg.n_paths = 1000;
    cfg.group_size = 500;
    cfg.seed_schedule = {11};
    const auto res = solver::solve(p, make_grid(1.0, 2), solver::SchemeParams{}, cfg);
    return res.y0 == 1.0;
}

int cmd_verify(std::ostream& out) {
    int failures = 0;
    const auto check = [&](const char* label, bool (*fn)()) {
        bool ok = false;
        std::string detail;
        try {
            ok = fn();
        } catch (const std::exception& e) {
            detail = e.what();
        }
        if (ok) {
            out << "ok: " << label << "\n";
        } else {
            out << "FAIL: " << label << (detail.empty() ? "" : " (" + detail + ")") << "\n";
            ++failures;
        }
    };
    check("time grid sums to the horizon", grid_telescopes);
    check("seeded rng streams reproduce", rng_reproduces);
    check("brownian increments match the state", brownian_increments_consistent);
    check("regression tree recovers piecewise means", tree_splits_means);
    check("closed-form call price", closed_form_prices);
    check("solver reproduces a constant terminal exactly", solver_reproduces_constant);
    if (failures) {
        out << failures << " check(s) failed\n";
        return 1;
    }
    out << "all checks passed\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    if (args.empty()) {
        err << kUsage;
        return 2;
    }
    const std::string& command = args.front();
    if (command == "--help" || command == "help") {
        out << kUsage;
        return 0;
    }
    if (command == "run") return cmd_run(args, out, err);
    if (command == "list-problems") return cmd_list_problems(out);
    if (command == "verify") return cmd_verify(out);
    err << "unknown subcommand '" << command << "'\n" << kUsage;
    return 2;
}

}  // namespace fbsde::cli
