#pragma once

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <tuple>
#include <vector>

#include "luslines/core.hpp"
#include "luslines/parallel.hpp"

namespace luslines {

namespace detail {

/// Bilinear sample at fractional (row, col); pixels outside the image are zero.
inline double sample_bilinear(const Image& img, double row, double col) {
    const double fr = std::floor(row);
    const double fc = std::floor(col);
    const long r0 = static_cast<long>(fr);
    const long c0 = static_cast<long>(fc);
    const double wr = row - fr;
    const double wc = col - fc;
    const long H = static_cast<long>(img.height());
    const long W = static_cast<long>(img.width());
    double acc = 0.0;
    auto px = [&](long r, long c, double w) {
        if (r >= 0 && r < H && c >= 0 && c < W) acc += w * img(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    };
    px(r0, c0, (1 - wr) * (1 - wc));
    px(r0, c0 + 1, (1 - wr) * wc);
    px(r0 + 1, c0, wr * (1 - wc));
    px(r0 + 1, c0 + 1, wr * wc);
    return acc;
}

/// Narrows [t_lo, t_hi] to the t where lo < p0 + t * dp < hi.
inline void clip_parameter(double p0, double dp, double lo, double hi, double& t_lo, double& t_hi) {
    if (std::abs(dp) < 1e-12) {
        if (p0 <= lo || p0 >= hi) t_hi = t_lo - 1;
        return;
    }
    double a = (lo - p0) / dp;
    double b = (hi - p0) / dp;
    if (a > b) std::swap(a, b);
    t_lo = std::max(t_lo, a);
    t_hi = std::min(t_hi, b);
}

/// Per-thread FFTW plans for one padded length. Planner calls are
/// serialized through a process-wide mutex.
class RampPlan {
public:
    explicit RampPlan(int n) : n_(n) {
        std::lock_guard lock(planner_mutex());
        real_ = fftw_alloc_real(static_cast<std::size_t>(n));
        spec_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
        fwd_ = fftw_plan_dft_r2c_1d(n, real_, spec_, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r_1d(n, spec_, real_, FFTW_ESTIMATE);
        // Band-limited ramp: transform of the spatial kernel 1/4 at 0,
        // -1/(pi n)^2 at odd n, 0 at even n, laid out circularly.
        for (int i = 0; i < n; ++i) real_[i] = 0.0;
        real_[0] = 0.25;
        for (int k = 1; k <= n / 2; k += 2) {
            const double v = -1.0 / (std::numbers::pi * std::numbers::pi * k * k);
            real_[k] = v;
            if (n - k != k) real_[n - k] = v;
        }
        fftw_execute(fwd_);
        response_.resize(static_cast<std::size_t>(n / 2 + 1));
        for (int k = 0; k <= n / 2; ++k) response_[static_cast<std::size_t>(k)] = spec_[k][0];
    }
    ~RampPlan() {
        std::lock_guard lock(planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(real_);
        fftw_free(spec_);
    }
    RampPlan(const RampPlan&) = delete;
    RampPlan& operator=(const RampPlan&) = delete;

    /// Filters one projection in place; scale multiplies the result.
    void apply(std::span<double> column, double scale) {
        const std::size_t m = column.size();
        for (int i = 0; i < n_; ++i) real_[i] = static_cast<std::size_t>(i) < m ? column[static_cast<std::size_t>(i)] : 0.0;
        fftw_execute(fwd_);
        for (int k = 0; k <= n_ / 2; ++k) {
            spec_[k][0] *= response_[static_cast<std::size_t>(k)];
            spec_[k][1] *= response_[static_cast<std::size_t>(k)];
        }
        fftw_execute(inv_);
        const double norm = scale / n_;
        for (std::size_t i = 0; i < m; ++i) column[i] = real_[i] * norm;
    }

    static std::mutex& planner_mutex() {
        static std::mutex m;
        return m;
    }

private:
    int n_;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
    std::vector<double> response_;
};

inline RampPlan& ramp_plan(int n) {
    thread_local std::map<int, std::unique_ptr<RampPlan>> plans;
    auto& p = plans[n];
    if (!p) p = std::make_unique<RampPlan>(n);
    return *p;
}

inline int ramp_length(std::size_t n_r) {
    int n = 1;
    while (static_cast<std::size_t>(n) < 2 * n_r) n *= 2;
    return n;
}

/// Ramp-filters every angle column. The filter is a symmetric circular
/// convolution between zero-padding and truncation, so it is self-adjoint.
inline Grid ramp_filter(const Grid& values, double r_step) {
    const std::size_t nr = values.rows();
    const std::size_t na = values.cols();
    const int n = ramp_length(nr);
    Grid out(nr, na);
    parallel_for(na, [&](std::size_t a) {
        std::vector<double> col(nr);
        for (std::size_t k = 0; k < nr; ++k) col[k] = values(k, a);
        ramp_plan(n).apply(col, 1.0 / r_step);
        for (std::size_t k = 0; k < nr; ++k) out(k, a) = col[k];
    });
    return out;
}

inline void require_geometry(const Geometry& geo, const Image& img, const char* op) {
    geo.validate();
    if (!geo.matches(img))
        throw DimensionError(std::string(op) + ": image " + std::to_string(img.height()) + "x" +
                             std::to_string(img.width()) + " does not match geometry " +
                             std::to_string(geo.image_h) + "x" + std::to_string(geo.image_w));
}

}  // namespace detail

/// Line integrals of img over every (r, omega) of geo.
///
/// The line for (r, omega) is {(i, j) : i cos(omega) + j sin(omega) = r} in
/// centered coordinates i = col - (W-1)/2, j = row - (H-1)/2. It is sampled
/// at unit spacing t = -T..T from its foot point r(cos, sin) along
/// (-sin, cos), each sample bilinearly interpolated.
inline Sinogram forward_radon(const Image& img, const Geometry& geo) {
    detail::require_geometry(geo, img, "forward_radon");
    Sinogram out(geo);
    const double cx = (geo.image_w - 1) / 2.0;
    const double cy = (geo.image_h - 1) / 2.0;
    const double T = std::ceil(geo.r_max) + 1.0;
    const int nr = geo.n_r();
    parallel_for(static_cast<std::size_t>(geo.n_angles), [&](std::size_t a) {
        const double w = geo.angle_rad(static_cast<int>(a));
        const double c = std::cos(w);
        const double s = std::sin(w);
        for (int k = 0; k < nr; ++k) {
            const double r = geo.r_at(k);
            const double col0 = r * c + cx;
            const double row0 = r * s + cy;
            double t_lo = -T;
            double t_hi = T;
            detail::clip_parameter(col0, -s, -1.0, static_cast<double>(geo.image_w), t_lo, t_hi);
            detail::clip_parameter(row0, c, -1.0, static_cast<double>(geo.image_h), t_lo, t_hi);
            double acc = 0.0;
            for (double t = std::ceil(t_lo); t <= t_hi; t += 1.0)
                acc += detail::sample_bilinear(img, row0 + t * c, col0 - t * s);
            out(static_cast<std::size_t>(k), a) = acc;
        }
    });
    return out;
}

namespace detail {

/// Back-projection of already filtered data, linear interpolation in r.
inline Image back_project(const Grid& filtered, const Geometry& geo) {
    const auto H = static_cast<std::size_t>(geo.image_h);
    const auto W = static_cast<std::size_t>(geo.image_w);
    const double cx = (geo.image_w - 1) / 2.0;
    const double cy = (geo.image_h - 1) / 2.0;
    const double scale = std::numbers::pi / geo.n_angles;
    const long nr = geo.n_r();
    std::vector<double> cs(static_cast<std::size_t>(geo.n_angles)), sn(cs.size());
    for (int a = 0; a < geo.n_angles; ++a) {
        cs[static_cast<std::size_t>(a)] = std::cos(geo.angle_rad(a));
        sn[static_cast<std::size_t>(a)] = std::sin(geo.angle_rad(a));
    }
    Image img(H, W);
    parallel_for(H, [&](std::size_t row) {
        const double j = static_cast<double>(row) - cy;
        for (std::size_t col = 0; col < W; ++col) {
            const double i = static_cast<double>(col) - cx;
            double acc = 0.0;
            for (std::size_t a = 0; a < cs.size(); ++a) {
                const double pos = geo.r_index(i * cs[a] + j * sn[a]);
                const double f = std::floor(pos);
                const long k0 = static_cast<long>(f);
                const double w = pos - f;
                if (k0 >= 0 && k0 < nr) acc += (1 - w) * filtered(static_cast<std::size_t>(k0), a);
                if (k0 + 1 >= 0 && k0 + 1 < nr) acc += w * filtered(static_cast<std::size_t>(k0 + 1), a);
            }
            img(row, col) = scale * acc;
        }
    });
    return img;
}

/// Exact transpose of back_project.
inline Grid back_project_transpose(const Image& img, const Geometry& geo) {
    const auto H = static_cast<std::size_t>(geo.image_h);
    const auto W = static_cast<std::size_t>(geo.image_w);
    const double cx = (geo.image_w - 1) / 2.0;
    const double cy = (geo.image_h - 1) / 2.0;
    const double scale = std::numbers::pi / geo.n_angles;
    const long nr = geo.n_r();
    Grid out(static_cast<std::size_t>(nr), static_cast<std::size_t>(geo.n_angles));
    parallel_for(static_cast<std::size_t>(geo.n_angles), [&](std::size_t a) {
        const double c = std::cos(geo.angle_rad(static_cast<int>(a)));
        const double s = std::sin(geo.angle_rad(static_cast<int>(a)));
        for (std::size_t row = 0; row < H; ++row) {
            const double j = static_cast<double>(row) - cy;
            for (std::size_t col = 0; col < W; ++col) {
                const double v = scale * img(row, col);
                const double pos = geo.r_index((static_cast<double>(col) - cx) * c + j * s);
                const double f = std::floor(pos);
                const long k0 = static_cast<long>(f);
                const double w = pos - f;
                if (k0 >= 0 && k0 < nr) out(static_cast<std::size_t>(k0), a) += (1 - w) * v;
                if (k0 + 1 >= 0 && k0 + 1 < nr) out(static_cast<std::size_t>(k0 + 1), a) += w * v;
            }
        }
    });
    return out;
}

}  // namespace detail

/// Filtered back-projection: per-angle ramp filtering (zero-padded to the
/// next power of two >= 2 * n_r) followed by linear-interpolated
/// back-projection onto the geometry's image grid.
inline Image inverse_radon(const Sinogram& sino) {
    sino.geometry.validate();
    if (sino.values.rows() != static_cast<std::size_t>(sino.geometry.n_r()) ||
        sino.values.cols() != static_cast<std::size_t>(sino.geometry.n_angles))
        throw DimensionError("inverse_radon: values do not match geometry");
    return detail::back_project(detail::ramp_filter(sino.values, sino.geometry.r_step), sino.geometry);
}

/// Exact transpose of inverse_radon. Used to pull image-space gradients
/// back onto sinogram cells.
inline Sinogram inverse_radon_transpose(const Image& img, const Geometry& geo) {
    detail::require_geometry(geo, img, "inverse_radon_transpose");
    return Sinogram(geo, detail::ramp_filter(detail::back_project_transpose(img, geo), geo.r_step));
}

/// The (R^-1)^T operator of the forward gradient step, taken as the forward
/// projection.
inline Sinogram adjoint_inverse(const Image& img, const Geometry& geo) { return forward_radon(img, geo); }

namespace detail {

inline double power_iteration_norm(const Geometry& geo, int steps) {
    std::mt19937_64 rng(0x5EED);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Sinogram x(geo);
    for (double& v : x.values) v = u(rng);
    double nx = norm2(x.values);
    double estimate = 0.0;
    for (int it = 0; it < steps; ++it) {
        for (double& v : x.values) v /= nx;
        Sinogram y = adjoint_inverse(inverse_radon(x), geo);
        estimate = norm2(y.values);
        x = std::move(y);
        nx = estimate;
        if (!(nx > 0)) break;
    }
    return estimate;
}

}  // namespace detail

/// Largest gain of x -> (R^-1)^T R^-1 x by power iteration. Memoized per
/// geometry and step count.
inline double estimate_lipschitz(const Geometry& geo, int steps = 20) {
    static std::mutex m;
    static std::map<std::tuple<int, double, double, double, int, int, int>, double> cache;
    const auto key = std::make_tuple(geo.n_angles, geo.r_min, geo.r_max, geo.r_step, geo.image_h, geo.image_w, steps);
    {
        std::lock_guard lock(m);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    const double L = detail::power_iteration_norm(geo, steps);
    std::lock_guard lock(m);
    cache[key] = L;
    return L;
}

}  // namespace luslines
