#pragma once

#include <array>
#include <cmath>

#include "luslines/core.hpp"
#include "luslines/error.hpp"

namespace luslines {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline const std::array<double, kSsimWindow>& ssim_taps() {
    static const auto taps = [] {
        std::array<double, kSsimWindow> t{};
        double total = 0;
        for (std::size_t i = 0; i < kSsimWindow; ++i) {
            const double d = static_cast<double>(i) - (kSsimWindow - 1) / 2.0;
            t[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
            total += t[i];
        }
        for (double& v : t) v /= total;
        return t;
    }();
    return taps;
}

/// Separable Gaussian over every window that fits inside the grid.
inline Grid gaussian_valid(const Grid& g) {
    const auto& t = ssim_taps();
    const std::size_t oh = g.rows() - kSsimWindow + 1;
    const std::size_t ow = g.cols() - kSsimWindow + 1;
    Grid tmp(g.rows(), ow);
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) acc += t[k] * g(i, j + k);
            tmp(i, j) = acc;
        }
    Grid out(oh, ow);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < kSsimWindow; ++k) acc += t[k] * tmp(i + k, j);
            out(i, j) = acc;
        }
    return out;
}

/// Transpose of gaussian_valid back onto an h x w grid.
inline Grid gaussian_valid_transpose(const Grid& m, std::size_t h, std::size_t w) {
    const auto& t = ssim_taps();
    Grid tmp(h, m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            for (std::size_t k = 0; k < kSsimWindow; ++k) tmp(i + k, j) += t[k] * m(i, j);
    Grid out(h, w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            for (std::size_t k = 0; k < kSsimWindow; ++k) out(i, j + k) += t[k] * tmp(i, j);
    return out;
}

inline Grid elementwise_product(const Grid& a, const Grid& b) {
    Grid out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

inline void require_ssim_shapes(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "ssim");
    if (a.rows() < kSsimWindow || a.cols() < kSsimWindow)
        throw DimensionError("ssim: images must be at least 11x11");
}

}  // namespace detail

/// Mean SSIM over all 11x11 Gaussian (sigma 1.5) windows that fit inside
/// the image, with the unit-range constants C1 = 0.01^2 and C2 = 0.03^2.
/// When grad_a is non-null it receives d SSIM / d a.
inline double ssim(const Grid& a, const Grid& b, Grid* grad_a = nullptr) {
    detail::require_ssim_shapes(a, b);
    const Grid mu_a = detail::gaussian_valid(a);
    const Grid mu_b = detail::gaussian_valid(b);
    const Grid e_aa = detail::gaussian_valid(detail::elementwise_product(a, a));
    const Grid e_bb = detail::gaussian_valid(detail::elementwise_product(b, b));
    const Grid e_ab = detail::gaussian_valid(detail::elementwise_product(a, b));
    const std::size_t n = mu_a.size();

    Grid d_mu(mu_a.rows(), mu_a.cols());
    Grid d_eaa(mu_a.rows(), mu_a.cols());
    Grid d_eab(mu_a.rows(), mu_a.cols());
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ma = mu_a[i];
        const double mb = mu_b[i];
        const double var_a = e_aa[i] - ma * ma;
        const double var_b = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        const double a1 = 2 * ma * mb + kSsimC1;
        const double a2 = 2 * cov + kSsimC2;
        const double b1 = ma * ma + mb * mb + kSsimC1;
        const double b2 = var_a + var_b + kSsimC2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad_a) {
            // Partials with (mu_a, E[a^2], E[ab]) as the independent inputs.
            d_mu[i] = (2 * mb * a2 - 2 * mb * a1) / (b1 * b2) - s * (2 * ma / b1 - 2 * ma / b2);
            d_eaa[i] = -s / b2;
            d_eab[i] = 2 * a1 / (b1 * b2);
        }
    }
    const double mean = total / static_cast<double>(n);
    if (grad_a) {
        const double inv_n = 1.0 / static_cast<double>(n);
        const Grid g_mu = detail::gaussian_valid_transpose(d_mu, a.rows(), a.cols());
        const Grid g_aa = detail::gaussian_valid_transpose(d_eaa, a.rows(), a.cols());
        const Grid g_ab = detail::gaussian_valid_transpose(d_eab, a.rows(), a.cols());
        *grad_a = Grid(a.rows(), a.cols());
        for (std::size_t i = 0; i < a.size(); ++i)
            (*grad_a)[i] = inv_n * (g_mu[i] + 2 * a[i] * g_aa[i] + b[i] * g_ab[i]);
    }
    return mean;
}

}  // namespace luslines
