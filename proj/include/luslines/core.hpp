#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "luslines/error.hpp"
#include "luslines/grid.hpp"

namespace luslines {

/// Spatial-domain intensities, row-major, height() rows by width() columns.
class Image : public Grid {
public:
    Image() = default;
    Image(std::size_t height, std::size_t width, double fill = 0.0) : Grid(height, width, fill) {}
    explicit Image(Grid g) : Grid(std::move(g)) {}

    std::size_t height() const noexcept { return rows(); }
    std::size_t width() const noexcept { return cols(); }
};

inline constexpr std::size_t kMinImageSide = 16;

/// Sampling layout of the (r, omega) plane for an image of a given size.
///
/// Angles are omega_a = a * angle_step degrees for a in [0, n_angles), covering
/// [0, 180). Offsets are r_i = r_min + i * r_step, symmetric about zero, and
/// measured in pixels from the image center with j (rows) pointing down.
struct Geometry {
    int n_angles = 180;
    double angle_step = 1.0;
    double r_min = 0.0;
    double r_max = 0.0;
    double r_step = 1.0;
    int image_h = 0;
    int image_w = 0;

    static double half_diagonal(int h, int w) {
        return 0.5 * std::hypot(static_cast<double>(h - 1), static_cast<double>(w - 1));
    }

    /// Default layout: r covers the half diagonal rounded up to whole steps.
    static Geometry for_image(int h, int w, int n_angles = 180, double r_step = 1.0) {
        Geometry g;
        g.n_angles = n_angles;
        g.angle_step = n_angles > 0 ? 180.0 / n_angles : 0.0;
        g.r_step = r_step;
        const double steps = r_step > 0 ? std::ceil(half_diagonal(h, w) / r_step - 1e-9) : 0.0;
        g.r_max = steps * r_step;
        g.r_min = -g.r_max;
        g.image_h = h;
        g.image_w = w;
        g.validate();
        return g;
    }

    /// Layout with an explicit number of offset bins spread over the
    /// rounded-up half diagonal.
    static Geometry with_bins(int h, int w, int n_angles, int n_r) {
        if (n_r < 2) throw ConfigError("geometry: need at least 2 offset bins");
        Geometry g;
        g.n_angles = n_angles;
        g.angle_step = n_angles > 0 ? 180.0 / n_angles : 0.0;
        g.r_max = std::ceil(half_diagonal(h, w) - 1e-9);
        g.r_min = -g.r_max;
        g.r_step = (g.r_max - g.r_min) / (n_r - 1);
        g.image_h = h;
        g.image_w = w;
        g.validate();
        return g;
    }

    int n_r() const { return static_cast<int>(std::llround((r_max - r_min) / r_step)) + 1; }
    double r_at(int i) const { return r_min + i * r_step; }
    double angle_deg(int a) const { return a * angle_step; }
    double angle_rad(int a) const { return angle_deg(a) * std::numbers::pi / 180.0; }
    /// Fractional offset-bin index of a signed offset.
    double r_index(double r) const { return (r - r_min) / r_step; }

    void validate() const {
        if (image_h < static_cast<int>(kMinImageSide) || image_w < static_cast<int>(kMinImageSide))
            throw ConfigError("geometry: image must be at least 16x16, got " + std::to_string(image_h) +
                              "x" + std::to_string(image_w));
        if (n_angles < 1 || std::abs(n_angles * angle_step - 180.0) > 1e-9)
            throw ConfigError("geometry: n_angles * angle_step must equal 180");
        if (!(r_step > 0)) throw ConfigError("geometry: r_step must be positive");
        if (std::abs(r_min + r_max) > 1e-9) throw ConfigError("geometry: r range must be symmetric");
        if (r_max < half_diagonal(image_h, image_w) - 1e-9)
            throw ConfigError("geometry: r range does not cover the half diagonal");
        const double bins = (r_max - r_min) / r_step;
        if (std::abs(bins - std::round(bins)) > 1e-6)
            throw ConfigError("geometry: r range is not a whole number of r_step");
    }

    bool matches(const Image& img) const {
        return static_cast<std::size_t>(image_h) == img.height() &&
               static_cast<std::size_t>(image_w) == img.width();
    }

    friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Radon-domain data: values has n_r() rows (offsets) and n_angles columns.
struct Sinogram {
    Geometry geometry;
    Grid values;

    Sinogram() = default;
    explicit Sinogram(const Geometry& g, double fill = 0.0)
        : geometry(g), values(static_cast<std::size_t>(g.n_r()), static_cast<std::size_t>(g.n_angles), fill) {}
    Sinogram(const Geometry& g, Grid v) : geometry(g), values(std::move(v)) {
        if (values.rows() != static_cast<std::size_t>(g.n_r()) ||
            values.cols() != static_cast<std::size_t>(g.n_angles))
            throw DimensionError("sinogram: values do not match geometry");
    }

    std::size_t n_r() const { return values.rows(); }
    std::size_t n_angles() const { return values.cols(); }
    double& operator()(std::size_t ri, std::size_t a) { return values(ri, a); }
    double operator()(std::size_t ri, std::size_t a) const { return values(ri, a); }
};

enum class LineKind { pleural, a_line, b_line };

inline const char* to_string(LineKind k) {
    switch (k) {
        case LineKind::pleural: return "pleural";
        case LineKind::a_line: return "A";
        case LineKind::b_line: return "B";
    }
    return "?";
}

inline LineKind line_kind_from_string(const std::string& s) {
    if (s == "pleural") return LineKind::pleural;
    if (s == "A") return LineKind::a_line;
    if (s == "B") return LineKind::b_line;
    throw FormatError("unknown line kind '" + s + "'");
}

struct GroundTruthBox {
    int x_min = 0;
    int x_max = 0;
    LineKind kind = LineKind::b_line;
    friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

struct GroundTruth {
    std::vector<GroundTruthBox> boxes;
    friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

/// Synthetic linear-probe lung frame: a pleural band, decaying A-line
/// reverberations at multiples of the pleural depth, and vertical B-line
/// bands that run from the pleura to the bottom and erase the A-lines they
/// cross.
struct PhantomSpec {
    int height = 128;
    int width = 160;
    double pleural_depth = 36;
    std::vector<double> bline_columns;
    double bline_width = 6;
    int n_alines = 1;
    double line_amplitude = 0.8;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    double band_fwhm = 3.0;
    double aline_decay = 0.7;

    void validate() const {
        if (height < static_cast<int>(kMinImageSide) || width < static_cast<int>(kMinImageSide))
            throw ConfigError("phantom.height/width: must be at least 16");
        if (pleural_depth < height / 4.0 || pleural_depth > height / 3.0)
            throw ConfigError("phantom.pleural_depth: must lie in [H/4, H/3]");
        for (double c : bline_columns)
            if (c < 0 || c >= width) throw ConfigError("phantom.bline_columns: column outside [0, width)");
        if (!(bline_width > 0)) throw ConfigError("phantom.bline_width: must be positive");
        if (n_alines < 0) throw ConfigError("phantom.n_alines: must be nonnegative");
        if (!(line_amplitude > 0)) throw ConfigError("phantom.line_amplitude: must be positive");
        if (!(noise_sigma >= 0)) throw ConfigError("phantom.noise_sigma: must be nonnegative");
        if (!(band_fwhm > 0)) throw ConfigError("phantom.band_fwhm: must be positive");
        if (!(aline_decay > 0 && aline_decay <= 1)) throw ConfigError("phantom.aline_decay: must be in (0, 1]");
    }
};

inline double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

struct Phantom {
    Image image;
    GroundTruth truth;
};

inline Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const auto H = static_cast<std::size_t>(spec.height);
    const auto W = static_cast<std::size_t>(spec.width);
    const double sv = fwhm_to_sigma(spec.band_fwhm);
    const double sb = fwhm_to_sigma(spec.bline_width);

    // Horizontal bands depend only on the row.
    std::vector<double> rows(H, 0.0);
    for (std::size_t i = 0; i < H; ++i) {
        const double d = static_cast<double>(i) - spec.pleural_depth;
        rows[i] = spec.line_amplitude * std::exp(-d * d / (2 * sv * sv));
    }
    double amp = spec.line_amplitude;
    for (int m = 2; m < spec.n_alines + 2; ++m) {
        amp *= spec.aline_decay;
        const double depth = m * spec.pleural_depth;
        if (depth > static_cast<double>(H - 1)) break;
        for (std::size_t i = 0; i < H; ++i) {
            const double d = static_cast<double>(i) - depth;
            rows[i] += amp * std::exp(-d * d / (2 * sv * sv));
        }
    }

    // B-line coverage per column, in [0, 1].
    std::vector<double> cover(W, 0.0);
    for (double c : spec.bline_columns) {
        for (std::size_t j = 0; j < W; ++j) {
            const double d = static_cast<double>(j) - c;
            cover[j] = std::max(cover[j], std::exp(-d * d / (2 * sb * sb)));
        }
    }

    Phantom out{Image(H, W), {}};
    for (std::size_t i = 0; i < H; ++i) {
        const bool below = static_cast<double>(i) >= spec.pleural_depth;
        for (std::size_t j = 0; j < W; ++j) {
            double v = rows[i];
            if (below) v = v * (1.0 - cover[j]) + spec.line_amplitude * cover[j];
            out.image(i, j) = v;
        }
    }

    if (spec.noise_sigma > 0) {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> noise(0.0, spec.noise_sigma);
        for (double& v : out.image) v += noise(rng);
    }
    for (double& v : out.image) v = std::clamp(v, 0.0, 1.0);

    for (double c : spec.bline_columns) {
        const int lo = std::max(0, static_cast<int>(std::floor(c - spec.bline_width)));
        const int hi = std::min(spec.width - 1, static_cast<int>(std::ceil(c + spec.bline_width)));
        out.truth.boxes.push_back({lo, hi, LineKind::b_line});
    }
    return out;
}

/// Seeded family of phantoms: pleural depth uniform in [H/4, H/3] (whole
/// pixels), 1..max_blines B-lines at least min_separation apart and
/// 2 * bline_width away from the side borders.
struct SuiteSpec {
    int count = 20;
    std::uint64_t seed = 0;
    int height = 128;
    int width = 160;
    int min_blines = 1;
    int max_blines = 3;
    double min_separation = 16;
    double bline_width = 6;
    double noise_sigma = 0;
    int n_alines = 1;

    void validate() const {
        if (count < 1) throw ConfigError("suite.count: must be >= 1");
        if (min_blines < 0 || max_blines < min_blines) throw ConfigError("suite.min_blines/max_blines: bad range");
        if (!(min_separation > 0)) throw ConfigError("suite.min_separation: must be positive");
        if (width - 4 * bline_width < (max_blines - 1) * min_separation)
            throw ConfigError("suite.width: too narrow for max_blines at min_separation");
    }
};

inline std::vector<PhantomSpec> phantom_suite(const SuiteSpec& s) {
    s.validate();
    std::mt19937_64 rng(s.seed);
    const int dp_lo = static_cast<int>(std::ceil(s.height / 4.0));
    const int dp_hi = static_cast<int>(std::floor(s.height / 3.0));
    std::vector<PhantomSpec> out;
    for (int n = 0; n < s.count; ++n) {
        PhantomSpec p;
        p.height = s.height;
        p.width = s.width;
        p.bline_width = s.bline_width;
        p.noise_sigma = s.noise_sigma;
        p.n_alines = s.n_alines;
        p.pleural_depth = std::uniform_int_distribution<int>(dp_lo, dp_hi)(rng);
        const int nb = std::uniform_int_distribution<int>(s.min_blines, s.max_blines)(rng);
        const double lo = 2 * s.bline_width;
        const double hi = s.width - 1 - 2 * s.bline_width;
        std::uniform_int_distribution<int> col(static_cast<int>(std::ceil(lo)), static_cast<int>(std::floor(hi)));
        while (static_cast<int>(p.bline_columns.size()) < nb) {
            const double c = col(rng);
            bool ok = true;
            for (double o : p.bline_columns) ok = ok && std::abs(o - c) >= s.min_separation;
            if (ok) p.bline_columns.push_back(c);
            // Restart a crowded draw rather than looping forever.
            if (!ok && rng() % 64 == 0) p.bline_columns.clear();
        }
        std::sort(p.bline_columns.begin(), p.bline_columns.end());
        p.seed = rng();
        out.push_back(p);
    }
    return out;
}

/// Maps intensities into [0, 1]. Images already inside [0, 1] are returned
/// unchanged, so normalize(normalize(x)) == normalize(x).
inline Image normalize(const Image& img) {
    if (img.empty()) return img;
    const double lo = min_value(img);
    const double hi = max_value(img);
    if (lo >= 0.0 && hi <= 1.0) return img;
    Image out = img;
    if (hi - lo <= 0) {
        for (double& v : out) v = std::clamp(v, 0.0, 1.0);
        return out;
    }
    for (double& v : out) v = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    return out;
}

/// Centers img on an h x w canvas of zeros.
inline Image pad_to(const Image& img, std::size_t h, std::size_t w) {
    if (h < img.height() || w < img.width())
        throw DimensionError("pad_to: target " + std::to_string(h) + "x" + std::to_string(w) +
                             " is smaller than source " + std::to_string(img.height()) + "x" +
                             std::to_string(img.width()));
    Image out(h, w, 0.0);
    const std::size_t oy = (h - img.height()) / 2;
    const std::size_t ox = (w - img.width()) / 2;
    for (std::size_t i = 0; i < img.height(); ++i)
        for (std::size_t j = 0; j < img.width(); ++j) out(oy + i, ox + j) = img(i, j);
    return out;
}

}  // namespace luslines
