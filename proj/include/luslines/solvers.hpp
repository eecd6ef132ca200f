#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "luslines/cauchy.hpp"
#include "luslines/core.hpp"
#include "luslines/io.hpp"
#include "luslines/radon.hpp"

namespace luslines {

// ---------------------------------------------------------------------------
// Classic Cauchy proximal splitting

/// Scale used when none is configured: a tenth of the largest input cell.
inline double default_gamma(const Grid& r0) { return std::max(0.1 * max_value(r0), 1e-6); }

/// Step used by classic CPS when none is configured: half the inverse of the
/// estimated gain of (R^-1)^T R^-1.
inline double default_cps_step(const Geometry& geo) { return 0.5 / estimate_lipschitz(geo); }

/// ||cur - prev|| / ||prev||, with 0/0 read as 0 and x/0 as infinity.
inline double relative_change(const Grid& cur, const Grid& prev) {
    const double diff = distance(cur, prev);
    const double base = norm2(prev);
    if (base == 0) return diff == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    return diff / base;
}

struct CpsResult {
    Sinogram x;
    int iterations = 0;
    std::vector<double> changes;  // relative change after each iteration
};

/// Forward-backward iterations on the Cauchy-regularized line model,
/// starting from the forward projection of y:
///   z = x - mu * (R^-1)^T (R^-1 x - y),   x <- prox(z)
/// until the relative change drops below tol or max_iter is reached.
inline CpsResult cps_solve(const Image& y, const Geometry& geo, double gamma, double mu, int max_iter,
                           double tol = 1e-3) {
    const ProxParams prox{gamma, mu};
    prox.validate();
    if (max_iter < 1) throw ConfigError("cps_solve: max_iter must be >= 1");
    CpsResult res;
    res.x = forward_radon(y, geo);
    for (int k = 1; k <= max_iter; ++k) {
        Image residual = inverse_radon(res.x);
        for (std::size_t i = 0; i < residual.size(); ++i) residual[i] -= y[i];
        const Sinogram grad = adjoint_inverse(residual, geo);
        Sinogram next(geo, cauchy_prox(add_scaled(res.x.values, -mu, grad.values), prox));
        if (!all_finite(next.values))
            throw NumericError("cps_solve: non-finite iterate at iteration " + std::to_string(k));
        const double change = relative_change(next.values, res.x.values);
        res.x = std::move(next);
        res.iterations = k;
        res.changes.push_back(change);
        if (change < tol) break;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Unrolled network

struct DucpsParams {
    Grid weights;  // elementwise W, same shape as the sinogram
    double mu = 1e-5;
    double gamma = 1.0;
    int layers = 7;

    void validate() const {
        if (weights.empty()) throw ConfigError("ducps: empty weight field");
        for (double w : weights)
            if (!(w > 0)) throw ConfigError("ducps: weights must be positive");
        if (!(mu > 0)) throw ConfigError("ducps: mu must be positive");
        if (!(gamma > 0)) throw ConfigError("ducps: gamma must be positive");
        if (layers < 1) throw ConfigError("ducps: layer count must be >= 1");
    }
};

inline constexpr int kDefaultLayers = 7;
inline constexpr double kInitWeight = 1.0 - 1e-5;
inline constexpr double kInitStep = 1e-5;

inline DucpsParams ducps_init(std::size_t n_r, std::size_t n_angles, double gamma, int layers = kDefaultLayers) {
    if (!(gamma > 0)) throw ConfigError("ducps_init: gamma must be positive");
    if (layers < 1) throw ConfigError("ducps_init: layer count must be >= 1");
    return {Grid(n_r, n_angles, kInitWeight), kInitStep, gamma, layers};
}

inline DucpsParams ducps_init(const Geometry& geo, double gamma, int layers = kDefaultLayers) {
    return ducps_init(static_cast<std::size_t>(geo.n_r()), static_cast<std::size_t>(geo.n_angles), gamma, layers);
}

/// Per-layer inputs x^k and pre-prox values z^k, plus the drive term.
struct ForwardTrace {
    std::vector<Grid> x;
    std::vector<Grid> z;
    Grid drive;
};

struct DucpsOutput {
    Grid x;
    ForwardTrace trace;
};

/// k layers of z = W .* x + mu * s, x <- prox_{gamma, mu}(z), starting at r0.
inline DucpsOutput ducps_forward(const Grid& r0, const Grid& drive, const DucpsParams& p) {
    p.validate();
    require_same_shape(r0, p.weights, "ducps_forward(input, W)");
    require_same_shape(drive, p.weights, "ducps_forward(drive, W)");
    DucpsOutput out;
    out.trace.drive = drive;
    out.trace.x.reserve(static_cast<std::size_t>(p.layers));
    out.trace.z.reserve(static_cast<std::size_t>(p.layers));
    Grid x = r0;
    const ProxParams prox{p.gamma, p.mu};
    for (int k = 0; k < p.layers; ++k) {
        Grid z(x.rows(), x.cols());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = p.weights[i] * x[i] + p.mu * drive[i];
        Grid next = cauchy_prox(z, prox);
        if (!all_finite(next)) throw NumericError("ducps_forward: non-finite output at layer " + std::to_string(k));
        out.trace.x.push_back(std::move(x));
        out.trace.z.push_back(std::move(z));
        x = std::move(next);
    }
    out.x = std::move(x);
    return out;
}

struct DucpsOutputSino {
    Sinogram x;
    ForwardTrace trace;
};

inline DucpsOutputSino ducps_forward(const Sinogram& r0, const Sinogram& drive, const DucpsParams& p) {
    auto out = ducps_forward(r0.values, drive.values, p);
    return {Sinogram(r0.geometry, std::move(out.x)), std::move(out.trace)};
}

struct DucpsGrads {
    Grid weights;
    double mu = 0;
};

namespace detail {

// Reverse sweep over layers [0, first). gx holds dL/dx^{first} on entry.
inline void ducps_reverse_layers(const ForwardTrace& trace, const DucpsParams& p, int first, Grid gx, DucpsGrads& g) {
    for (int k = first - 1; k >= 0; --k) {
        const Grid& xk = trace.x[static_cast<std::size_t>(k)];
        const Grid& zk = trace.z[static_cast<std::size_t>(k)];
        const Grid* xn = k + 1 < static_cast<int>(trace.x.size()) ? &trace.x[static_cast<std::size_t>(k + 1)] : nullptr;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double u = xn ? (*xn)[i] : solve_prox_cubic(zk[i], p.gamma, p.mu);
            const ProxGrads pg = cauchy_prox_grads_safe(zk[i], u, p.gamma, p.mu);
            const double gz = pg.du_dz * gx[i];
            g.weights[i] += xk[i] * gz;
            g.mu += trace.drive[i] * gz + pg.du_dmu * gx[i];
            gx[i] = p.weights[i] * gz;
        }
    }
}

inline void check_trace(const ForwardTrace& trace, const DucpsParams& p, const Grid& g, const char* op) {
    if (trace.x.size() != static_cast<std::size_t>(p.layers) || trace.z.size() != trace.x.size())
        throw DimensionError(std::string(op) + ": trace length does not match layer count");
    require_same_shape(g, p.weights, op);
}

}  // namespace detail

/// Gradients of a scalar loss with respect to the shared (W, mu), given
/// dL/dx at the network output.
inline DucpsGrads ducps_backward(const ForwardTrace& trace, const Grid& dl_dx_final, const DucpsParams& p) {
    detail::check_trace(trace, p, dl_dx_final, "ducps_backward");
    DucpsGrads g{Grid(p.weights.rows(), p.weights.cols()), 0.0};
    // The output of the last layer is not stored in the trace; it is
    // recomputed from z for that layer.
    detail::ducps_reverse_layers(trace, p, p.layers, dl_dx_final, g);
    return g;
}

/// Gradients when the loss attaches to the last pre-prox value z^{k-1}
/// instead of the output.
inline DucpsGrads ducps_backward_from_last_z(const ForwardTrace& trace, const Grid& dl_dz_last,
                                             const DucpsParams& p) {
    detail::check_trace(trace, p, dl_dz_last, "ducps_backward_from_last_z");
    DucpsGrads g{Grid(p.weights.rows(), p.weights.cols()), 0.0};
    const auto last = static_cast<std::size_t>(p.layers - 1);
    Grid gx(dl_dz_last.rows(), dl_dz_last.cols());
    for (std::size_t i = 0; i < gx.size(); ++i) {
        const double gz = dl_dz_last[i];
        g.weights[i] += trace.x[last][i] * gz;
        g.mu += trace.drive[i] * gz;
        gx[i] = p.weights[i] * gz;
    }
    detail::ducps_reverse_layers(trace, p, p.layers - 1, std::move(gx), g);
    return g;
}

// ---------------------------------------------------------------------------
// Model file

inline constexpr char kModelMagic[4] = {'D', 'U', 'C', 'P'};
inline constexpr std::uint32_t kModelVersion = 1;

/// "DUCP", u32 version, u32 n_r, u32 n_angles, u32 layers, f64 gamma,
/// f64 mu, then W as little-endian f32 row-major.
inline void save_params(const DucpsParams& p, const std::filesystem::path& path) {
    p.validate();
    std::vector<unsigned char> out(kModelMagic, kModelMagic + 4);
    detail::put_u32(out, kModelVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(p.weights.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(p.weights.cols()));
    detail::put_u32(out, static_cast<std::uint32_t>(p.layers));
    detail::put_f64(out, p.gamma);
    detail::put_f64(out, p.mu);
    for (double w : p.weights) detail::put_f32(out, static_cast<float>(w));
    detail::write_file(path, out);
}

inline DucpsParams load_params(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    const std::string name = path.string();
    detail::ByteReader rd(bytes, name);
    if (rd.tag4() != std::string(kModelMagic, 4)) throw FormatError(name + ": bad model magic");
    const std::uint32_t version = rd.u32();
    if (version != kModelVersion)
        throw FormatError(name + ": unsupported model version " + std::to_string(version) + " (expected " +
                          std::to_string(kModelVersion) + ")");
    const std::uint32_t nr = rd.u32();
    const std::uint32_t na = rd.u32();
    const std::uint32_t layers = rd.u32();
    DucpsParams p;
    p.gamma = rd.f64();
    p.mu = rd.f64();
    p.layers = static_cast<int>(layers);
    if (rd.remaining() != static_cast<std::size_t>(nr) * na * 4)
        throw FormatError(name + ": weight payload size does not match header");
    p.weights = Grid(nr, na);
    for (double& w : p.weights) w = rd.f32();
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw FormatError(name + ": " + e.what());
    }
    return p;
}

}  // namespace luslines
