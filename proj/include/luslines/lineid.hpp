#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "luslines/core.hpp"
#include "luslines/error.hpp"
#include "luslines/radon.hpp"
#include "luslines/solvers.hpp"

namespace luslines {

struct Detection {
    LineKind kind = LineKind::b_line;
    double r = 0;
    double omega = 0;  // degrees in [0, 180)
    double intensity = 0;
    double spatial_x = 0;      // B-lines: column at mid-depth below the pleura
    double spatial_depth = 0;  // horizontal lines: row at the center column
};

/// Region of the (r, omega) plane. With wrap set the angles are
/// omega >= omega_lo or omega <= omega_hi, and r for the omega >= omega_lo
/// part is compared after negation (the convention just past 0 degrees).
struct SearchBand {
    double omega_lo = 0;
    double omega_hi = 180;
    bool wrap = false;
    double r_lo = 0;
    double r_hi = 0;

    bool contains(double r, double omega) const {
        if (!wrap) return omega >= omega_lo && omega <= omega_hi && r >= r_lo && r <= r_hi;
        if (omega <= omega_hi) return r >= r_lo && r <= r_hi;
        if (omega >= omega_lo) return -r >= r_lo && -r <= r_hi;
        return false;
    }
};

struct Peak {
    int ri = 0;
    int ai = 0;
    double r = 0;
    double omega = 0;
    double value = 0;
};

/// Tunables for line identification. The defaults are the documented
/// operating point.
struct DetectKnobs {
    double lambda = 0.3;
    double floor_frac = 0.3;
    int nms_radius = 3;
    int guard = 2;
    double horizontal_halfwidth = 20;  // degrees around 90
    double vertical_halfwidth = 10;    // degrees around 0 / 180
    int zline_patch = 5;
    double zline_factor = 0.5;
    int zline_offset = 6;

    void validate() const {
        if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("detect.lambda: must be in [0, 1]");
        if (!(floor_frac >= 0 && floor_frac <= 1)) throw ConfigError("detect.floor_frac: must be in [0, 1]");
        if (nms_radius < 0) throw ConfigError("detect.nms_radius: must be >= 0");
        if (guard < 0) throw ConfigError("detect.guard: must be >= 0");
        if (!(horizontal_halfwidth > 0 && horizontal_halfwidth < 90))
            throw ConfigError("detect.horizontal_halfwidth: must be in (0, 90)");
        if (!(vertical_halfwidth > 0 && vertical_halfwidth < 90))
            throw ConfigError("detect.vertical_halfwidth: must be in (0, 90)");
        if (zline_patch < 1) throw ConfigError("detect.zline_patch: must be >= 1");
        if (!(zline_factor >= 0)) throw ConfigError("detect.zline_factor: must be nonnegative");
        if (zline_offset < 1) throw ConfigError("detect.zline_offset: must be >= 1");
    }
};

namespace detail {

// Neighbor of (ri, ai) displaced by (dr, da), wrapping across 180 degrees
// with r mirrored. Returns false when off the grid in r.
inline bool wrapped_neighbor(int nr, int na, int ri, int ai, int dr, int da, int& out_r, int& out_a) {
    int a = ai + da;
    int r = ri + dr;
    if (a < 0 || a >= na) {
        a = (a + na) % na;
        r = nr - 1 - r;
    }
    if (r < 0 || r >= nr) return false;
    out_r = r;
    out_a = a;
    return true;
}

inline bool lex_before(int r1, int a1, int r2, int a2) { return r1 < r2 || (r1 == r2 && a1 < a2); }

// Chebyshev distance on the wrapped (r, omega) grid.
inline int cell_distance(int nr, int na, const Peak& p, const Peak& q) {
    const int da = std::abs(p.ai - q.ai);
    const int direct = std::max(std::abs(p.ri - q.ri), da);
    // The same pair seen across the wrap.
    const int across = std::max(std::abs(p.ri - (nr - 1 - q.ri)), na - da);
    return std::min(direct, across);
}

}  // namespace detail

/// Local peaks of s inside band: cells no smaller than every cell in their
/// (2 nms_radius + 1)^2 neighborhood (on plateaus the first cell in (r, omega)
/// order wins), at least floor_frac of the band maximum and positive. Sorted
/// by value descending, ties by (r, omega), then thinned by greedy
/// suppression at nms_radius.
inline std::vector<Peak> local_maxima(const Sinogram& s, const SearchBand& band, int nms_radius, double floor_frac) {
    const Geometry& geo = s.geometry;
    const int nr = static_cast<int>(s.n_r());
    const int na = static_cast<int>(s.n_angles());
    std::vector<std::pair<int, int>> cells;
    double band_max = -std::numeric_limits<double>::infinity();
    for (int ri = 0; ri < nr; ++ri)
        for (int ai = 0; ai < na; ++ai)
            if (band.contains(geo.r_at(ri), geo.angle_deg(ai))) {
                cells.emplace_back(ri, ai);
                band_max = std::max(band_max, s(static_cast<std::size_t>(ri), static_cast<std::size_t>(ai)));
            }
    if (cells.empty()) throw ConfigError("local_maxima: search band is empty after clipping to the grid");

    std::vector<Peak> peaks;
    const double floor = floor_frac * band_max;
    for (auto [ri, ai] : cells) {
        const double v = s(static_cast<std::size_t>(ri), static_cast<std::size_t>(ai));
        if (!(v > 0) || v < floor) continue;
        bool is_max = true;
        for (int dr = -nms_radius; dr <= nms_radius && is_max; ++dr)
            for (int da = -nms_radius; da <= nms_radius; ++da) {
                if (dr == 0 && da == 0) continue;
                int qr = 0, qa = 0;
                if (!detail::wrapped_neighbor(nr, na, ri, ai, dr, da, qr, qa)) continue;
                if (qr == ri && qa == ai) continue;
                const double u = s(static_cast<std::size_t>(qr), static_cast<std::size_t>(qa));
                if (u > v || (u == v && detail::lex_before(qr, qa, ri, ai))) {
                    is_max = false;
                    break;
                }
            }
        if (is_max) peaks.push_back({ri, ai, geo.r_at(ri), geo.angle_deg(ai), v});
    }
    std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
        if (a.value != b.value) return a.value > b.value;
        return detail::lex_before(a.ri, a.ai, b.ri, b.ai);
    });
    std::vector<Peak> kept;
    for (const Peak& p : peaks) {
        bool clear = true;
        for (const Peak& q : kept)
            if (detail::cell_distance(nr, na, p, q) <= nms_radius) {
                clear = false;
                break;
            }
        if (clear) kept.push_back(p);
    }
    return kept;
}

/// Row of a near-horizontal line at the center column.
inline double line_depth(double r, double omega_deg, int image_h) {
    const double s = std::sin(omega_deg * std::numbers::pi / 180.0);
    return r / s + (image_h - 1) / 2.0;
}

/// Column of a near-vertical line at the given row.
inline double line_column(double r, double omega_deg, double row, int image_h, int image_w) {
    const double w = omega_deg * std::numbers::pi / 180.0;
    const double j = row - (image_h - 1) / 2.0;
    return (r - j * std::sin(w)) / std::cos(w) + (image_w - 1) / 2.0;
}

/// Row at which the line of a detection crosses column col.
inline double line_row(double r, double omega_deg, double col, int image_h, int image_w) {
    const double w = omega_deg * std::numbers::pi / 180.0;
    const double i = col - (image_w - 1) / 2.0;
    return (r - i * std::cos(w)) / std::sin(w) + (image_h - 1) / 2.0;
}

inline Detection horizontal_detection(const Peak& p, LineKind kind, int image_h) {
    Detection d;
    d.kind = kind;
    d.r = p.r;
    d.omega = p.omega;
    d.intensity = p.value;
    d.spatial_depth = line_depth(p.r, p.omega, image_h);
    d.spatial_x = std::numeric_limits<double>::quiet_NaN();
    return d;
}

inline SearchBand horizontal_band(double depth_lo, double depth_hi, int image_h, const DetectKnobs& knobs) {
    const double c = (image_h - 1) / 2.0;
    return {90 - knobs.horizontal_halfwidth, 90 + knobs.horizontal_halfwidth, false, depth_lo - c, depth_hi - c};
}

/// Brightest peak with angle within 90 +- 20 degrees and depth in [H/4, H/3].
inline Detection detect_pleural(const Sinogram& s, const DetectKnobs& knobs = {}) {
    const int H = s.geometry.image_h;
    const auto peaks = local_maxima(s, horizontal_band(H / 4.0, H / 3.0, H, knobs), knobs.nms_radius, 0.0);
    if (peaks.empty()) throw PleuralNotFound("detect_pleural: no peak in the pleural search band");
    return horizontal_detection(peaks.front(), LineKind::pleural, H);
}

/// Zeroes every row strictly above (pleural depth - guard).
inline Image dim_above_pleural(const Image& y, const Detection& pleural, int guard = 2) {
    if (pleural.kind != LineKind::pleural) throw ConfigError("dim_above_pleural: detection is not a pleural line");
    Image out = y;
    const double cut = pleural.spatial_depth - guard;
    for (std::size_t i = 0; i < out.height() && static_cast<double>(i) < cut; ++i)
        for (std::size_t j = 0; j < out.width(); ++j) out(i, j) = 0.0;
    return out;
}

/// The A-line band: angles 90 +- 20 degrees, depths from
/// d_p + H/2 - 1.5 H_p down to d_p + H/2, where H_p is the pleural offset
/// from the image center.
inline SearchBand aline_band(const Detection& pleural, int image_h, const DetectKnobs& knobs = {}) {
    const double hp = std::abs(pleural.r);
    const double top = pleural.spatial_depth + image_h / 2.0 - 1.5 * hp;
    const double bottom = pleural.spatial_depth + image_h / 2.0;
    return horizontal_band(top, bottom, image_h, knobs);
}

/// Brightest A-line candidate with intensity >= lambda * pleural intensity,
/// or nothing.
inline std::vector<Detection> detect_alines(const Sinogram& s_dim, const Detection& pleural,
                                            const DetectKnobs& knobs = {}) {
    const int H = s_dim.geometry.image_h;
    const auto peaks = local_maxima(s_dim, aline_band(pleural, H, knobs), knobs.nms_radius, 0.0);
    for (const Peak& p : peaks)
        if (p.value >= knobs.lambda * pleural.intensity) return {horizontal_detection(p, LineKind::a_line, H)};
    return {};
}

/// Vertical-band peaks (within 10 degrees of 0 / 180, |r| <= W/2), each
/// located at mid-depth between the pleura and the image bottom.
inline std::vector<Detection> detect_bline_candidates(const Sinogram& s_dim, const Detection& pleural,
                                                      const DetectKnobs& knobs = {}) {
    const Geometry& geo = s_dim.geometry;
    const double half_w = geo.image_w / 2.0;
    const SearchBand band{180 - knobs.vertical_halfwidth, knobs.vertical_halfwidth, true, -half_w, half_w};
    const double mid = (pleural.spatial_depth + geo.image_h - 1) / 2.0;
    std::vector<Detection> out;
    for (const Peak& p : local_maxima(s_dim, band, knobs.nms_radius, knobs.floor_frac)) {
        Detection d;
        d.kind = LineKind::b_line;
        d.r = p.r;
        d.omega = p.omega;
        d.intensity = p.value;
        d.spatial_x = line_column(p.r, p.omega, mid, geo.image_h, geo.image_w);
        d.spatial_depth = std::numeric_limits<double>::quiet_NaN();
        out.push_back(d);
    }
    return out;
}

namespace detail {

inline std::optional<double> patch_mean(const Image& img, double row, double col, int size) {
    const long r0 = std::lround(row) - size / 2;
    const long c0 = std::lround(col) - size / 2;
    double acc = 0;
    int n = 0;
    for (long i = r0; i < r0 + size; ++i)
        for (long j = c0; j < c0 + size; ++j)
            if (i >= 0 && j >= 0 && i < static_cast<long>(img.height()) && j < static_cast<long>(img.width())) {
                acc += img(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
                ++n;
            }
    if (n == 0) return std::nullopt;
    return acc / n;
}

inline std::optional<double> band_mean(const Image& img, double row, int size) {
    const long r0 = std::lround(row) - size / 2;
    double acc = 0;
    std::size_t n = 0;
    for (long i = r0; i < r0 + size; ++i)
        if (i >= 0 && i < static_cast<long>(img.height())) {
            for (std::size_t j = 0; j < img.width(); ++j) acc += img(static_cast<std::size_t>(i), j);
            n += img.width();
        }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
}

// Center value minus the mean of the values offset rows above and below.
template <typename F>
std::optional<double> vertical_contrast(F&& at, double row, int offset) {
    const auto c = at(row);
    if (!c) return std::nullopt;
    const auto up = at(row - offset);
    const auto down = at(row + offset);
    if (!up && !down) return std::nullopt;
    const double side = (up && down) ? 0.5 * (*up + *down) : (up ? *up : *down);
    return *c - side;
}

}  // namespace detail

/// Drops candidates where an A-line survives at the crossing.
///
/// At each A-line depth the local contrast (patch on the candidate column
/// minus patches zline_offset rows above and below) is compared with the
/// contrast of the whole A-line row band; a candidate keeping at least
/// zline_factor of it does not erase the A-line and is discarded.
inline std::vector<Detection> filter_zlines(const std::vector<Detection>& cands, const std::vector<Detection>& alines,
                                            const Image& y_dim, const Detection& pleural,
                                            const DetectKnobs& knobs = {}) {
    (void)pleural;
    std::vector<Detection> out;
    const int h = static_cast<int>(y_dim.height());
    const int w = static_cast<int>(y_dim.width());
    for (const Detection& c : cands) {
        bool crosses = false;
        for (const Detection& a : alines) {
            const double depth = line_row(a.r, a.omega, c.spatial_x, h, w);
            const auto row_ref = detail::vertical_contrast(
                [&](double row) { return detail::band_mean(y_dim, row, knobs.zline_patch); }, depth,
                knobs.zline_offset);
            const auto local = detail::vertical_contrast(
                [&](double row) { return detail::patch_mean(y_dim, row, c.spatial_x, knobs.zline_patch); }, depth,
                knobs.zline_offset);
            if (!row_ref || !local || !(*row_ref > 0)) continue;
            if (*local >= knobs.zline_factor * *row_ref) {
                crosses = true;
                break;
            }
        }
        if (!crosses) out.push_back(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

enum class SolverKind { cps, ducps };

inline const char* to_string(SolverKind k) { return k == SolverKind::cps ? "cps" : "ducps"; }

/// How the sinogram of an image is restored before peak search.
struct RestoreConfig {
    SolverKind solver = SolverKind::ducps;
    std::optional<DucpsParams> params;  // untrained initialization when empty
    double gamma = 0;                   // 0: a tenth of the image's largest sinogram cell
    double cps_step = 0;                // 0: half the inverse gain estimate
    int max_iter = 500;
    double tol = 1e-3;
};

struct Restoration {
    Sinogram x;
    int iterations = 0;
};

inline Restoration restore(const Image& y, const Geometry& geo, const RestoreConfig& cfg) {
    const Sinogram r0 = forward_radon(y, geo);
    const double peak = max_value(r0.values);
    if (!(peak > 0)) return {r0, 0};
    const double gamma = cfg.gamma > 0 ? cfg.gamma : default_gamma(r0.values);
    if (cfg.solver == SolverKind::cps) {
        const double mu = cfg.cps_step > 0 ? cfg.cps_step : default_cps_step(geo);
        CpsResult res = cps_solve(y, geo, gamma, mu, cfg.max_iter, cfg.tol);
        return {std::move(res.x), res.iterations};
    }
    const DucpsParams p = cfg.params ? *cfg.params : ducps_init(geo, gamma);
    auto out = ducps_forward(r0, r0, p);
    return {std::move(out.x), p.layers};
}

struct DetectionResult {
    bool pleural_found = false;
    std::optional<Detection> pleural;
    std::vector<Detection> alines;
    std::vector<Detection> blines;
    Image dimmed;
};

/// Restoration followed by pleural search, dimming, A-line search, B-line
/// candidates and Z-line rejection.
inline DetectionResult detect_pipeline(const Image& y, const Geometry& geo, const RestoreConfig& restore_cfg,
                                       const DetectKnobs& knobs = {}) {
    knobs.validate();
    DetectionResult out;
    out.dimmed = y;
    const Restoration full = restore(y, geo, restore_cfg);
    Detection pleural;
    try {
        pleural = detect_pleural(full.x, knobs);
    } catch (const PleuralNotFound&) {
        return out;
    }
    out.pleural_found = true;
    out.pleural = pleural;
    out.dimmed = dim_above_pleural(y, pleural, knobs.guard);
    const Restoration dim = restore(out.dimmed, geo, restore_cfg);
    out.alines = detect_alines(dim.x, pleural, knobs);
    out.blines = filter_zlines(detect_bline_candidates(dim.x, pleural, knobs), out.alines, out.dimmed, pleural, knobs);
    return out;
}

inline nlohmann::json to_json(const Detection& d) {
    nlohmann::json j{{"kind", to_string(d.kind)}, {"r", d.r}, {"omega", d.omega}, {"intensity", d.intensity}};
    if (d.kind == LineKind::b_line)
        j["x"] = static_cast<long>(std::lround(d.spatial_x));
    else
        j["depth"] = d.spatial_depth;
    return j;
}

inline nlohmann::json to_json(const DetectionResult& res) {
    nlohmann::json j;
    j["pleural_found"] = res.pleural_found;
    j["pleural"] = res.pleural ? to_json(*res.pleural) : nlohmann::json(nullptr);
    j["alines"] = nlohmann::json::array();
    for (const auto& a : res.alines) j["alines"].push_back(to_json(a));
    j["blines"] = nlohmann::json::array();
    for (const auto& b : res.blines) j["blines"].push_back(to_json(b));
    return j;
}

/// Column positions of the B-lines listed in a detections document.
inline std::vector<double> bline_columns_from_json(const nlohmann::json& j) {
    std::vector<double> xs;
    try {
        for (const auto& b : j.at("blines")) xs.push_back(b.at("x").get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("detections: ") + e.what());
    }
    return xs;
}

// ---------------------------------------------------------------------------
// Overlays

namespace detail {

template <typename Put>
void draw_detection(const Detection& d, const Detection* pleural, int h, int w, Put&& put) {
    if (d.kind == LineKind::b_line) {
        const int top = pleural ? std::max(0, static_cast<int>(std::lround(pleural->spatial_depth))) : 0;
        for (int row = top; row < h; ++row) {
            const long col = std::lround(line_column(d.r, d.omega, row, h, w));
            if (col >= 0 && col < w) put(row, static_cast<int>(col));
        }
    } else {
        for (int col = 0; col < w; ++col) {
            const long row = std::lround(line_row(d.r, d.omega, col, h, w));
            if (row >= 0 && row < h) put(static_cast<int>(row), col);
        }
    }
}

}  // namespace detail

inline constexpr double kOverlayPleural = 1.0;
inline constexpr double kOverlayA = 192.0 / 255.0;
inline constexpr double kOverlayB = 128.0 / 255.0;

/// Gray-coded loci drawn on the dimmed image (pleural 255, A 192, B 128).
inline Image overlay_gray(const DetectionResult& res) {
    Image out = res.dimmed;
    const int h = static_cast<int>(out.height());
    const int w = static_cast<int>(out.width());
    const Detection* p = res.pleural ? &*res.pleural : nullptr;
    auto draw = [&](const Detection& d, double v) {
        detail::draw_detection(d, p, h, w, [&](int r, int c) {
            out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = v;
        });
    };
    for (const auto& b : res.blines) draw(b, kOverlayB);
    for (const auto& a : res.alines) draw(a, kOverlayA);
    if (p) draw(*p, kOverlayPleural);
    return out;
}

/// Interleaved 8-bit RGB: pleural red, A-lines blue, B-lines green.
inline std::vector<unsigned char> overlay_rgb(const DetectionResult& res) {
    const int h = static_cast<int>(res.dimmed.height());
    const int w = static_cast<int>(res.dimmed.width());
    std::vector<unsigned char> rgb(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
    for (std::size_t i = 0; i < res.dimmed.size(); ++i) {
        const auto g = static_cast<unsigned char>(std::lround(std::clamp(res.dimmed[i], 0.0, 1.0) * 255));
        rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = g;
    }
    const Detection* p = res.pleural ? &*res.pleural : nullptr;
    auto draw = [&](const Detection& d, unsigned char r, unsigned char g, unsigned char b) {
        detail::draw_detection(d, p, h, w, [&](int row, int col) {
            const std::size_t k = 3 * (static_cast<std::size_t>(row) * static_cast<std::size_t>(w) +
                                       static_cast<std::size_t>(col));
            rgb[k] = r;
            rgb[k + 1] = g;
            rgb[k + 2] = b;
        });
    };
    for (const auto& b : res.blines) draw(b, 0, 255, 0);
    for (const auto& a : res.alines) draw(a, 0, 0, 255);
    if (p) draw(*p, 255, 0, 0);
    return rgb;
}

}  // namespace luslines
