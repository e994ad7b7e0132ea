#include "fbsde/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fbsde::problems {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Index of the largest entry; the first one on ties, matching the one-sided
// payoff derivative convention.
std::size_t argmax(std::span<const double> x) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < x.size(); ++k)
        if (x[k] > x[best]) best = k;
    return best;
}

}  // namespace

BsPrice bs_closed_form(double s0, double strike, double r, double dividend, double sigma,
                       double horizon) {
    if (!(s0 > 0.0) || !(strike > 0.0))
        throw std::invalid_argument("bs_closed_form: spot and strike must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("bs_closed_form: sigma must be positive");
    if (!(horizon > 0.0))
        throw std::invalid_argument("bs_closed_form: horizon must be positive");

    const double vol = sigma * std::sqrt(horizon);
    const double d1 =
        (std::log(s0 / strike) + (r - dividend + 0.5 * sigma * sigma) * horizon) / vol;
    const double d2 = d1 - vol;
    const double disc_s = std::exp(-dividend * horizon);
    const double disc_k = std::exp(-r * horizon);
    BsPrice out;
    out.delta = disc_s * normal_cdf(d1);
    out.price = s0 * out.delta - strike * disc_k * normal_cdf(d2);
    return out;
}

FbsdeProblem oscillatory_bsde() {
    // Exact solution y = sin(w + t/2), z = cos(w + t/2) on a driftless
    // unit-noise state; the driver follows from the generator.
    const double horizon = 0.5;
    FbsdeProblem p;
    p.name = "oscillatory";
    p.state_dim = p.noise_dim = 1;
    p.terminal_time = horizon;
    p.x0 = {0.0};
    p.drift = [](double, std::span<const double>, std::span<double> a) { a[0] = 0.0; };
    p.diffusion = [](double, std::span<const double>, std::span<double> b) { b[0] = 1.0; };
    p.driver = [](double, std::span<const double>, double y, std::span<const double> z) {
        return y / 2.0 - z[0] / 2.0;
    };
    p.terminal = [horizon](std::span<const double> x) {
        return std::sin(x[0] + horizon / 2.0);
    };
    p.terminal_gradient = [horizon](std::span<const double> x, std::span<double> out) {
        out[0] = std::cos(x[0] + horizon / 2.0);
    };
    p.reference_y0 = ReferenceValue{0.0, RefSource::closed_form, "sin(0)"};
    p.reference_z0 = std::vector<double>{1.0};
    return p;
}

FbsdeProblem black_scholes_call() {
    const double s0 = 100.0, strike = 100.0;
    const double r = 0.03, mu = 0.05, dividend = 0.04, sigma = 0.2, horizon = 0.33;

    FbsdeProblem p;
    p.name = "black-scholes";
    p.state_dim = p.noise_dim = 1;
    p.terminal_time = horizon;
    p.x0 = {s0};
    p.drift = [mu](double, std::span<const double> x, std::span<double> a) {
        a[0] = mu * x[0];
    };
    p.diffusion = [sigma](double, std::span<const double> x, std::span<double> b) {
        b[0] = sigma * x[0];
    };
    p.driver = [r, mu, dividend, sigma](double, std::span<const double>, double y,
                                        std::span<const double> z) {
        return -r * y - (mu - r + dividend) / sigma * z[0];
    };
    p.terminal = [strike](std::span<const double> x) { return std::max(x[0] - strike, 0.0); };
    p.terminal_gradient = [strike, sigma](std::span<const double> x, std::span<double> out) {
        out[0] = x[0] > strike ? sigma * x[0] : 0.0;
    };
    const auto bs = bs_closed_form(s0, strike, r, dividend, sigma, horizon);
    p.reference_y0 = ReferenceValue{bs.price, RefSource::closed_form, "dividend call"};
    p.reference_z0 = std::vector<double>{sigma * s0 * bs.delta};
    return p;
}

FbsdeProblem heston_call() {
    const double strike = 50.0, s0 = 50.0;
    const double r = 0.03, mu = 0.05, horizon = 0.5;
    const double v0 = 0.04, mu_v = 0.04, kappa_v = 1.9, sigma_v = 0.1, rho = -0.7;
    const double rho_bar = std::sqrt(1.0 - rho * rho);

    FbsdeProblem p;
    p.name = "heston";
    p.state_dim = p.noise_dim = 2;  // state order (v, S)
    p.terminal_time = horizon;
    p.x0 = {v0, s0};
    p.drift = [kappa_v, mu_v, mu](double, std::span<const double> x, std::span<double> a) {
        const double v = std::max(x[0], 0.0);  // full truncation
        a[0] = kappa_v * (mu_v - v);
        a[1] = mu * x[1];
    };
    p.diffusion = [sigma_v, rho, rho_bar](double, std::span<const double> x,
                                          std::span<double> b) {
        const double sv = std::sqrt(std::max(x[0], 0.0));
        b[0] = sigma_v * sv;
        b[1] = 0.0;
        b[2] = x[1] * rho * sv;
        b[3] = x[1] * rho_bar * sv;
    };
    p.driver = [r, mu, rho_bar](double, std::span<const double> x, double y,
                                std::span<const double> z) {
        const double sv = std::sqrt(std::max(x[0], 1e-12));
        return -(mu - r) / (rho_bar * sv) * z[1] - r * y;
    };
    p.terminal = [strike](std::span<const double> x) { return std::max(x[1] - strike, 0.0); };
    p.terminal_gradient = [strike, rho, rho_bar](std::span<const double> x,
                                                 std::span<double> out) {
        const double sv = std::sqrt(std::max(x[0], 0.0));
        const double on = x[1] > strike ? 1.0 : 0.0;
        out[0] = on * x[1] * rho * sv;
        out[1] = on * x[1] * rho_bar * sv;
    };
    p.reference_y0 = ReferenceValue{3.1825, RefSource::reported, "semi-analytic transform"};
    return p;
}

FbsdeProblem rainbow_max_call(std::size_t dims, double sigma) {
    if (dims == 0) throw std::invalid_argument("rainbow: need at least one asset");
    if (!(sigma > 0.0)) throw std::invalid_argument("rainbow: sigma must be positive");
    const double s0 = 100.0, strike = 100.0, r = 0.04, mu = 0.06, horizon = 0.1;

    FbsdeProblem p;
    p.name = "rainbow";
    p.state_dim = p.noise_dim = dims;
    p.terminal_time = horizon;
    p.x0.assign(dims, s0);
    p.drift = [mu](double, std::span<const double> x, std::span<double> a) {
        for (std::size_t k = 0; k < x.size(); ++k) a[k] = mu * x[k];
    };
    p.diffusion = [sigma, dims](double, std::span<const double> x, std::span<double> b) {
        std::fill(b.begin(), b.end(), 0.0);
        for (std::size_t k = 0; k < dims; ++k) b[k * dims + k] = sigma * x[k];
    };
    p.driver = [r, mu, sigma](double, std::span<const double>, double y,
                              std::span<const double> z) {
        double zsum = 0.0;
        for (double v : z) zsum += v;
        return -r * y - (mu - r) / sigma * zsum;
    };
    p.terminal = [strike](std::span<const double> x) {
        return std::max(x[argmax(x)] - strike, 0.0);
    };
    p.terminal_gradient = [strike, sigma](std::span<const double> x, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        const std::size_t j = argmax(x);
        if (x[j] > strike) out[j] = sigma * x[j];
    };
    if (dims == 10)
        p.reference_y0 = ReferenceValue{10.4689, RefSource::reported, "external benchmark"};
    else if (dims == 100)
        p.reference_y0 = ReferenceValue{17.4267, RefSource::reported, "external benchmark"};
    return p;
}

FbsdeProblem different_rates_option(std::size_t dims) {
    if (dims == 0) throw std::invalid_argument("rates: need at least one asset");
    const double s0 = 100.0, r_lend = 0.04, r_borrow = 0.06, mu = 0.06, sigma = 0.2;
    const double horizon = 0.5;

    FbsdeProblem p;
    p.name = "rates";
    p.state_dim = p.noise_dim = dims;
    p.terminal_time = horizon;
    p.x0.assign(dims, s0);
    p.nonlinear = true;
    p.drift = [mu](double, std::span<const double> x, std::span<double> a) {
        for (std::size_t k = 0; k < x.size(); ++k) a[k] = mu * x[k];
    };
    p.diffusion = [sigma, dims](double, std::span<const double> x, std::span<double> b) {
        std::fill(b.begin(), b.end(), 0.0);
        for (std::size_t k = 0; k < dims; ++k) b[k * dims + k] = sigma * x[k];
    };
    p.driver = [r_lend, r_borrow, mu, sigma](double, std::span<const double>, double y,
                                             std::span<const double> z) {
        double zsum = 0.0;
        for (double v : z) zsum += v;
        return -r_lend * y - (mu - r_lend) / sigma * zsum +
               (r_borrow - r_lend) * std::max(0.0, zsum / sigma - y);
    };
    if (dims == 1) {
        const double strike = 100.0;
        p.terminal = [strike](std::span<const double> x) {
            return std::max(x[0] - strike, 0.0);
        };
        p.terminal_gradient = [strike, sigma](std::span<const double> x,
                                              std::span<double> out) {
            out[0] = x[0] > strike ? sigma * x[0] : 0.0;
        };
        p.reference_y0 = ReferenceValue{7.156, RefSource::reported, "nonlinear benchmark"};
    } else {
        // Bull spread on the running maximum: long a 120-call, short two
        // 150-calls.
        p.terminal = [](std::span<const double> x) {
            const double m = x[argmax(x)];
            return std::max(m - 120.0, 0.0) - 2.0 * std::max(m - 150.0, 0.0);
        };
        p.terminal_gradient = [sigma](std::span<const double> x, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
            const std::size_t j = argmax(x);
            const double slope =
                (x[j] > 120.0 ? 1.0 : 0.0) - 2.0 * (x[j] > 150.0 ? 1.0 : 0.0);
            out[j] = slope * sigma * x[j];
        };
        if (dims == 100)
            p.reference_y0 =
                ReferenceValue{21.2988, RefSource::reported, "nonlinear benchmark"};
    }
    return p;
}

const std::vector<CatalogEntry>& catalog() {
    static const std::vector<CatalogEntry> entries{
        {"oscillatory", "scalar benchmark with the exact solution sin(w + t/2)", false,
         false},
        {"black-scholes", "European call with dividends under drift != rate", false, false},
        {"heston", "stochastic-volatility call, state (v, S)", false, false},
        {"rainbow", "call on the max of D assets (rainbow:D, needs sigma)", true, true},
        {"rates", "borrowing/lending spread option with a kinked driver (rates:D)", true,
         false},
    };
    return entries;
}

FbsdeProblem make_problem(const std::string& name, std::optional<std::size_t> dims,
                          std::optional<double> sigma) {
    std::string base = name;
    std::optional<std::size_t> suffix;
    if (const auto colon = name.find(':'); colon != std::string::npos) {
        base = name.substr(0, colon);
        const std::string tail = name.substr(colon + 1);
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(tail, &used);
            if (used != tail.size() || v == 0) throw std::invalid_argument("");
            suffix = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw std::invalid_argument("problem: bad dimension suffix in '" + name + "'");
        }
    }
    if (dims) suffix = dims;  // explicit dims wins over the :D suffix

    if (base == "oscillatory" || base == "black-scholes" || base == "heston") {
        if (suffix)
            throw std::invalid_argument("problem: '" + base + "' takes no dimension");
        if (base == "oscillatory") return oscillatory_bsde();
        if (base == "black-scholes") return black_scholes_call();
        return heston_call();
    }
    if (base == "rainbow") {
        if (!suffix)
            throw std::invalid_argument("problem: rainbow needs a dimension (rainbow:D)");
        if (!sigma)
            throw std::invalid_argument("problem: rainbow needs sigma (no default exists)");
        return rainbow_max_call(*suffix, *sigma);
    }
    if (base == "rates") {
        if (!suffix)
            throw std::invalid_argument("problem: rates needs a dimension (rates:D)");
        return different_rates_option(*suffix);
    }
    throw std::invalid_argument("problem: unknown name '" + base + "'");
}

}  // namespace fbsde::problems
