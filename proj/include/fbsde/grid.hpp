#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fbsde {

// Partition of [0, T]. dt[i] = t[i+1] - t[i] so the increments telescope to T
// exactly even in floating point.
struct TimeGrid {
    std::vector<double> t;
    std::vector<double> dt;

    std::size_t n_steps() const { return dt.size(); }
    double horizon() const { return t.back(); }
};

inline TimeGrid make_grid(double horizon, std::size_t n_steps) {
    if (!(horizon > 0.0)) throw std::invalid_argument("make_grid: horizon must be positive");
    if (n_steps < 1) throw std::invalid_argument("make_grid: need at least one step");
    TimeGrid g;
    g.t.resize(n_steps + 1);
    g.dt.resize(n_steps);
    for (std::size_t i = 0; i <= n_steps; ++i)
        g.t[i] = horizon * static_cast<double>(i) / static_cast<double>(n_steps);
    g.t[n_steps] = horizon;
    for (std::size_t i = 0; i < n_steps; ++i) g.dt[i] = g.t[i + 1] - g.t[i];
    return g;
}

}  // namespace fbsde
