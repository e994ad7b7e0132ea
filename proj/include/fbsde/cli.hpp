#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fbsde/harness.hpp"

namespace fbsde::cli {

// Flat key=value configuration; flags use the same keys. Lists are
// comma-separated. See parse_config for the schema.
struct RunConfig {
    std::string problem;
    std::vector<std::size_t> nt;
    std::vector<std::size_t> m;
    std::size_t g = 1000;
    double theta1 = 0.5;
    double theta2 = 1.0;
    double theta3 = 0.5;
    int picard = 20;
    std::size_t runs = 10;
    std::uint64_t seed_a = 1234567;
    std::uint64_t seed_b = 7654321;
    bool min_leaf_auto = false;  // set by problem default unless given
    std::optional<std::size_t> min_leaf;
    bool prune = false;
    double holdout = 0.5;
    std::string out;             // empty: stdout
    harness::TableFormat format = harness::TableFormat::csv;
    std::optional<double> sigma;
    std::optional<std::size_t> dims;
    unsigned threads = 0;
};

// Parses key=value lines ('#' comments, blank lines ignored). Unknown keys,
// bad values and malformed lines throw std::invalid_argument naming the
// offender.
RunConfig parse_config(std::istream& in);
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Resolved experiment ready to run (problem constructed, cells zipped,
// error mode chosen by problem family). Throws std::invalid_argument on
// inconsistent configs.
harness::ExperimentSpec build_experiment(const RunConfig& cfg);

// Entry point behind main(): subcommands run | list-problems | verify.
// Returns the process exit code: 0 ok, 1 solver/runtime failure, 2 config
// error or unknown usage.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fbsde::cli
