#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fbsde {

// Where a benchmark value comes from: an exact closed form we can evaluate,
// or a figure reported by an external benchmark (finite differences,
// multilevel Monte Carlo, semi-analytic transforms, ...).
enum class RefSource { closed_form, reported };

struct ReferenceValue {
    double value = 0.0;
    RefSource source = RefSource::reported;
    std::string note;
};

// Decoupled forward-backward system
//   dX = a(t,X) dt + b(t,X) dW,        X_0 = x0      (X in R^n, W in R^d)
//   -dY = f(t,X,Y,Z) dt - Z dW,        Y_T = g(X_T)  (Y scalar, Z in R^d).
// Coefficient callbacks fill caller-provided buffers and must be safe to
// call concurrently.
struct FbsdeProblem {
    std::string name;
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    double terminal_time = 1.0;
    std::vector<double> x0;

    // a(t,x) -> out[n]
    std::function<void(double, std::span<const double>, std::span<double>)> drift;
    // b(t,x) -> out[n*d] row-major (row = state component)
    std::function<void(double, std::span<const double>, std::span<double>)> diffusion;
    // f(t,x,y,z)
    std::function<double(double, std::span<const double>, double, std::span<const double>)> driver;
    // g(x)
    std::function<double(std::span<const double>)> terminal;
    // z at the horizon: (grad g . b)(x) -> out[d]; one-sided at kinks
    std::function<void(std::span<const double>, std::span<double>)> terminal_gradient;

    std::optional<ReferenceValue> reference_y0;
    std::optional<std::vector<double>> reference_z0;  // only for closed-form cases
    bool nonlinear = false;  // drivers with kinks: selects CV-driven tree control
};

}  // namespace fbsde
