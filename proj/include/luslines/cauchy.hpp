#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "luslines/core.hpp"
#include "luslines/error.hpp"
#include "luslines/grid.hpp"
#include "luslines/parallel.hpp"

namespace luslines {

struct ProxParams {
    double gamma = 1.0;
    double mu = 1.0;

    void validate() const {
        if (!(gamma > 0)) throw ConfigError("cauchy: gamma must be positive");
        if (!(mu > 0)) throw ConfigError("cauchy: mu must be positive");
    }
};

/// Negative log Cauchy density summed over cells (without normalization).
inline double cauchy_penalty(const Grid& x, double gamma) {
    if (!(gamma > 0)) throw ConfigError("cauchy_penalty: gamma must be positive");
    double acc = 0.0;
    for (double v : x) acc -= std::log(gamma / (gamma * gamma + v * v));
    return acc;
}

inline double cauchy_penalty(const Sinogram& x, double gamma) { return cauchy_penalty(x.values, gamma); }

/// Scalar proximal objective (z - u)^2 / (2 mu) - log(gamma / (gamma^2 + u^2)).
inline double prox_objective(double u, double z, double gamma, double mu) {
    const double d = z - u;
    return d * d / (2 * mu) - std::log(gamma / (gamma * gamma + u * u));
}

namespace detail {

/// Real roots of u^3 - z u^2 + (gamma^2 + 2 mu) u - z gamma^2 via the
/// depressed cubic; trigonometric form when three real roots exist.
/// Returns the root count (1 or 3).
inline int prox_cubic_roots(double z, double gamma, double mu, std::array<double, 3>& roots) {
    const double b = gamma * gamma + 2 * mu;
    const double c = -z * gamma * gamma;
    const double shift = z / 3.0;  // u = t + z/3
    const double p = b - z * z / 3.0;
    const double q = -2.0 * z * z * z / 27.0 + z * b / 3.0 + c;
    const double disc = q * q / 4.0 + p * p * p / 27.0;
    if (disc > 0 || p >= 0) {
        const double sq = std::sqrt(std::max(disc, 0.0));
        roots[0] = std::cbrt(-q / 2.0 + sq) + std::cbrt(-q / 2.0 - sq) + shift;
        return 1;
    }
    const double m = 2.0 * std::sqrt(-p / 3.0);
    const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
    const double theta = std::acos(arg) / 3.0;
    for (int k = 0; k < 3; ++k) roots[static_cast<std::size_t>(k)] = m * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0) + shift;
    return 3;
}

/// Newton refinement on the cubic; stops when a step does not help.
inline double polish_root(double u, double z, double gamma, double mu) {
    const double b = gamma * gamma + 2 * mu;
    const double c = -z * gamma * gamma;
    for (int it = 0; it < 3; ++it) {
        const double f = ((u - z) * u + b) * u + c;
        const double df = (3 * u - 2 * z) * u + b;
        if (df == 0) break;
        const double next = u - f / df;
        const double fn = ((next - z) * next + b) * next + c;
        if (!(std::abs(fn) < std::abs(f))) break;
        u = next;
    }
    return u;
}

}  // namespace detail

/// Cauchy proximal map of a scalar: the real root of the stationarity cubic
/// with the smallest proximal objective (ties go to the smaller magnitude).
inline double solve_prox_cubic(double z, double gamma, double mu) {
    if (z == 0) return 0.0;
    // Non-finite input passes through so callers' finiteness guards see it.
    if (!std::isfinite(z)) return z;
    if (z < 0) return -solve_prox_cubic(-z, gamma, mu);
    std::array<double, 3> roots{};
    const int n = detail::prox_cubic_roots(z, gamma, mu, roots);
    double best = 0;
    double best_obj = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
        double u = detail::polish_root(roots[static_cast<std::size_t>(k)], z, gamma, mu);
        // The minimizer lies between 0 and z.
        u = std::clamp(u, 0.0, z);
        const double obj = prox_objective(u, z, gamma, mu);
        if (obj < best_obj || (obj == best_obj && std::abs(u) < std::abs(best))) {
            best = u;
            best_obj = obj;
        }
    }
    return best;
}

inline Grid cauchy_prox(const Grid& z, const ProxParams& params) {
    params.validate();
    Grid out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = solve_prox_cubic(z[i], params.gamma, params.mu);
    return out;
}

inline Sinogram cauchy_prox(const Sinogram& z, const ProxParams& params) {
    return Sinogram(z.geometry, cauchy_prox(z.values, params));
}

struct ProxGrads {
    double du_dz = 0;
    double du_dmu = 0;
};

inline constexpr double kDegenerateDenominator = 1e-12;

/// Partials of the selected root u(z, mu) from the implicit function theorem
/// on the cubic. Throws DegenerateRootError when the cubic's derivative at u
/// vanishes.
inline ProxGrads cauchy_prox_grads(double z, double u, double gamma, double mu) {
    const double D = 3 * u * u - 2 * z * u + gamma * gamma + 2 * mu;
    if (std::abs(D) < kDegenerateDenominator)
        throw DegenerateRootError("cauchy_prox_grads: |D| < 1e-12 at z=" + std::to_string(z));
    return {(u * u + gamma * gamma) / D, -2 * u / D};
}

/// As cauchy_prox_grads, falling back to one-sided finite differences of
/// solve_prox_cubic (h = 1e-6 max(1, |z|)) at degenerate roots.
inline ProxGrads cauchy_prox_grads_safe(double z, double u, double gamma, double mu) {
    const double D = 3 * u * u - 2 * z * u + gamma * gamma + 2 * mu;
    if (std::abs(D) >= kDegenerateDenominator) return {(u * u + gamma * gamma) / D, -2 * u / D};
    const double hz = 1e-6 * std::max(1.0, std::abs(z));
    const double hm = 1e-6 * std::max(1.0, mu);
    return {(solve_prox_cubic(z + hz, gamma, mu) - u) / hz, (solve_prox_cubic(z, gamma, mu + hm) - u) / hm};
}

}  // namespace luslines
