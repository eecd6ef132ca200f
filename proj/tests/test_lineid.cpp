#include <gtest/gtest.h>

#include "luslines/core.hpp"
#include "luslines/lineid.hpp"
#include "support.hpp"

using namespace luslines;

namespace {

Phantom make_phantom(std::vector<double> cols, double dp = 36, double sigma = 0, int n_alines = 1) {
    PhantomSpec s;
    s.pleural_depth = dp;
    s.bline_columns = std::move(cols);
    s.noise_sigma = sigma;
    s.n_alines = n_alines;
    s.seed = 3;
    return generate_phantom(s);
}

const Geometry& geo128() {
    static const Geometry g = Geometry::for_image(128, 160);
    return g;
}

Image horizontal_bands(std::size_t h, std::size_t w, const std::vector<std::pair<std::size_t, double>>& rows) {
    Image img(h, w);
    for (auto [r, v] : rows)
        for (std::size_t j = 0; j < w; ++j) img(r, j) = v;
    return img;
}

Detection pleural_at(double depth, int H, double intensity = 1.0) {
    Detection d;
    d.kind = LineKind::pleural;
    d.omega = 90;
    d.r = depth - (H - 1) / 2.0;
    d.spatial_depth = depth;
    d.intensity = intensity;
    return d;
}

bool angle_ok(const Detection& d) {
    if (!(d.omega >= 0 && d.omega < 180) || !(d.intensity >= 0)) return false;
    if (d.kind == LineKind::b_line) return d.omega <= 10 || d.omega >= 170;
    return d.omega >= 70 && d.omega <= 110;
}

std::vector<double> sorted_x(const std::vector<Detection>& ds) {
    std::vector<double> xs;
    for (const auto& d : ds) xs.push_back(d.spatial_x);
    std::sort(xs.begin(), xs.end());
    return xs;
}

}  // namespace

TEST(LocalMaxima, SingleBrightCell) {
    const Geometry g = Geometry::for_image(20, 20, 36);
    Sinogram s(g);
    s(10, 5) = 3.0;
    const SearchBand all{0, 180, false, -100, 100};
    const auto peaks = local_maxima(s, all, 3, 0.3);
    ASSERT_EQ(peaks.size(), 1u);
    EXPECT_EQ(peaks[0].ri, 10);
    EXPECT_EQ(peaks[0].ai, 5);
    EXPECT_EQ(peaks[0].value, 3.0);
}

TEST(LocalMaxima, EqualPeaksTieBrokenLexicographically) {
    const Geometry g = Geometry::for_image(20, 20, 36);
    Sinogram s(g);
    s(15, 20) = 2.0;
    s(5, 30) = 2.0;
    s(15, 8) = 2.0;
    const auto peaks = local_maxima(s, SearchBand{0, 180, false, -100, 100}, 3, 0.3);
    ASSERT_EQ(peaks.size(), 3u);
    EXPECT_EQ(std::pair(peaks[0].ri, peaks[0].ai), std::pair(5, 30));
    EXPECT_EQ(std::pair(peaks[1].ri, peaks[1].ai), std::pair(15, 8));
    EXPECT_EQ(std::pair(peaks[2].ri, peaks[2].ai), std::pair(15, 20));
}

TEST(LocalMaxima, PlateauYieldsOnePeak) {
    const Geometry g = Geometry::for_image(20, 20, 36);
    Sinogram s(g);
    s(10, 10) = s(10, 11) = s(11, 10) = 1.0;
    const auto peaks = local_maxima(s, SearchBand{0, 180, false, -100, 100}, 1, 0.0);
    ASSERT_EQ(peaks.size(), 1u);
    EXPECT_EQ(std::pair(peaks[0].ri, peaks[0].ai), std::pair(10, 10));
}

TEST(LocalMaxima, FloorAndSuppression) {
    const Geometry g = Geometry::for_image(20, 20, 36);
    Sinogram s(g);
    s(10, 10) = 10.0;
    s(10, 20) = 2.0;  // below 0.3 of the maximum
    s(20, 20) = 4.0;
    const auto peaks = local_maxima(s, SearchBand{0, 180, false, -100, 100}, 3, 0.3);
    ASSERT_EQ(peaks.size(), 2u);
    EXPECT_EQ(peaks[0].value, 10.0);
    EXPECT_EQ(peaks[1].value, 4.0);
}

TEST(LocalMaxima, PeakAcrossTheWrapIsFoundOnce) {
    // A line at omega = 0 and r = -x appears again at omega -> 180, r = +x.
    const Geometry g = Geometry::for_image(20, 20, 36);
    Sinogram s(g);
    const auto nr = static_cast<std::size_t>(g.n_r());
    s(8, 0) = 5.0;
    s(nr - 1 - 8, 35) = 4.9;
    const SearchBand band{170, 10, true, -10, 10};
    const auto peaks = local_maxima(s, band, 3, 0.3);
    ASSERT_EQ(peaks.size(), 1u);
    EXPECT_EQ(peaks[0].ai, 0);
}

TEST(LocalMaxima, EmptyBandRejected) {
    const Geometry g = Geometry::for_image(20, 20, 36);
    EXPECT_THROW(local_maxima(Sinogram(g), SearchBand{30, 40, false, 500, 600}, 3, 0.3), ConfigError);
}

TEST(LocalMaxima, ThreeBlinePhantom) {
    const Phantom ph = make_phantom({40, 80, 120});
    const Sinogram s = forward_radon(ph.image, geo128());
    const Detection p = detect_pleural(s);
    const Sinogram sd = forward_radon(dim_above_pleural(ph.image, p), geo128());
    const SearchBand band{170, 10, true, -80, 80};
    const auto peaks = local_maxima(sd, band, 3, 0.3);
    ASSERT_EQ(peaks.size(), 3u);
    std::vector<double> cols;
    for (const auto& q : peaks) cols.push_back(line_column(q.r, q.omega, 90, 128, 160));
    std::sort(cols.begin(), cols.end());
    EXPECT_NEAR(cols[0], 40, 1.0);
    EXPECT_NEAR(cols[1], 80, 1.0);
    EXPECT_NEAR(cols[2], 120, 1.0);
}

TEST(DetectPleural, PhantomDepth) {
    const Phantom ph = make_phantom({}, 40);
    const Detection p = detect_pleural(forward_radon(ph.image, geo128()));
    EXPECT_EQ(p.kind, LineKind::pleural);
    EXPECT_NEAR(p.spatial_depth, 40, 2.0);
    EXPECT_TRUE(angle_ok(p));
}

TEST(DetectPleural, BrighterOfTwoBands) {
    const Image img = horizontal_bands(128, 160, {{34, 1.0}, {40, 0.5}});
    const Detection p = detect_pleural(forward_radon(img, geo128()));
    EXPECT_NEAR(p.spatial_depth, 34, 1.0);
    const Image img2 = horizontal_bands(128, 160, {{34, 0.5}, {40, 1.0}});
    EXPECT_NEAR(detect_pleural(forward_radon(img2, geo128())).spatial_depth, 40, 1.0);
}

TEST(DetectPleural, BlankImage) {
    EXPECT_THROW(detect_pleural(forward_radon(Image(128, 160), geo128())), PleuralNotFound);
}

TEST(DimAbovePleural, DepthZeroLeavesImage) {
    const Image y(testing_support::random_grid(32, 32, 0, 1, 1));
    EXPECT_EQ(dim_above_pleural(y, pleural_at(0, 32)), y);
}

TEST(DimAbovePleural, HalfImage) {
    const Image y(64, 40, 1.0);
    const Image d = dim_above_pleural(y, pleural_at(32, 64));
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 40; ++j) EXPECT_EQ(d(i, j), i < 30 ? 0.0 : 1.0) << i;
    Detection notp = pleural_at(32, 64);
    notp.kind = LineKind::a_line;
    EXPECT_THROW(dim_above_pleural(y, notp), ConfigError);
}

TEST(DimAbovePleural, ReducesEnergyAndNeverIncreasesCells) {
    const Phantom ph = make_phantom({60}, 36, 0.05);
    const Sinogram before = forward_radon(ph.image, geo128());
    const Sinogram after = forward_radon(dim_above_pleural(ph.image, detect_pleural(before)), geo128());
    EXPECT_LT(sum(after.values), sum(before.values));
    for (std::size_t i = 0; i < before.values.size(); ++i) EXPECT_LE(after.values[i], before.values[i]);
}

TEST(DetectAlines, PhantomDepth) {
    const Phantom ph = make_phantom({}, 36);
    const Sinogram s = forward_radon(ph.image, geo128());
    const Detection p = detect_pleural(s);
    const Sinogram sd = forward_radon(dim_above_pleural(ph.image, p), geo128());
    const auto a = detect_alines(sd, p);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_NEAR(a[0].spatial_depth, 72, 2.0);
    EXPECT_TRUE(angle_ok(a[0]));
}

TEST(DetectAlines, LambdaSemantics) {
    const Phantom ph = make_phantom({}, 36);
    const Sinogram s = forward_radon(ph.image, geo128());
    const Detection p = detect_pleural(s);
    const Sinogram sd = forward_radon(dim_above_pleural(ph.image, p), geo128());
    DetectKnobs k;
    k.lambda = 1.0;
    EXPECT_TRUE(detect_alines(sd, p, k).empty());
    k.lambda = 0.0;
    EXPECT_EQ(detect_alines(sd, p, k).size(), 1u);
}

TEST(DetectBlineCandidates, PlantedColumns) {
    const Phantom ph = make_phantom({40, 80, 120});
    const Sinogram s = forward_radon(ph.image, geo128());
    const Detection p = detect_pleural(s);
    const auto c = detect_bline_candidates(forward_radon(dim_above_pleural(ph.image, p), geo128()), p);
    const auto xs = sorted_x(c);
    ASSERT_EQ(xs.size(), 3u);
    EXPECT_NEAR(xs[0], 40, 2.0);
    EXPECT_NEAR(xs[1], 80, 2.0);
    EXPECT_NEAR(xs[2], 120, 2.0);
    for (const auto& d : c) EXPECT_TRUE(angle_ok(d));
}

TEST(DetectBlineCandidates, NoVerticalStructure) {
    const Image img = horizontal_bands(128, 160, {{36, 1.0}, {72, 0.6}});
    const Sinogram s = forward_radon(img, geo128());
    const Detection p = detect_pleural(s);
    EXPECT_TRUE(detect_bline_candidates(forward_radon(dim_above_pleural(img, p), geo128()), p).empty());
}

TEST(DetectBlineCandidates, WrapNormalization) {
    // omega = 175 with r and omega = -5 with -r name the same line.
    const double r = 12.0;
    const double a = line_column(r, 175.0, 80, 128, 160);
    const double b = line_column(-r, -5.0, 80, 128, 160);
    EXPECT_NEAR(a, b, 1e-9);
    const SearchBand band{170, 10, true, -80, 80};
    EXPECT_TRUE(band.contains(r, 175.0));
    EXPECT_FALSE(SearchBand({170, 10, true, 5, 80}).contains(r, 175.0));
}

TEST(FilterZlines, NoAlinesPassThrough) {
    std::vector<Detection> c(2);
    c[0].spatial_x = 30;
    c[1].spatial_x = 90;
    const auto out = filter_zlines(c, {}, Image(64, 128, 0.5), pleural_at(20, 64));
    EXPECT_EQ(out.size(), 2u);
}

namespace {

// Dimmed frame with an A-line at row 80 and a vertical band at column 60.
// erased: the band wipes the A-line where they cross (a B-line); otherwise
// the band stops above the A-line (a Z-line).
Image crossing_image(bool erased) {
    Image img(128, 160);
    for (std::size_t j = 0; j < 160; ++j)
        for (std::size_t i = 79; i <= 81; ++i) img(i, j) = 0.6;
    const std::size_t bottom = erased ? 128 : 70;
    for (std::size_t i = 38; i < bottom; ++i)
        for (std::size_t j = 57; j <= 63; ++j) img(i, j) = 0.8;
    if (erased)
        for (std::size_t i = 79; i <= 81; ++i)
            for (std::size_t j = 57; j <= 63; ++j) img(i, j) = 0.8;
    return img;
}

std::vector<Detection> crossing_candidate() {
    Detection c;
    c.kind = LineKind::b_line;
    c.r = 60 - 79.5;
    c.omega = 0;
    c.spatial_x = 60;
    return {c};
}

std::vector<Detection> crossing_aline() {
    Detection a;
    a.kind = LineKind::a_line;
    a.omega = 90;
    a.r = 80 - 63.5;
    a.spatial_depth = 80;
    return {a};
}

}  // namespace

TEST(FilterZlines, ErasedCrossingRetained) {
    const auto out = filter_zlines(crossing_candidate(), crossing_aline(), crossing_image(true), pleural_at(36, 128));
    EXPECT_EQ(out.size(), 1u);
}

TEST(FilterZlines, IntactCrossingDiscarded) {
    const auto out = filter_zlines(crossing_candidate(), crossing_aline(), crossing_image(false), pleural_at(36, 128));
    EXPECT_TRUE(out.empty());
}

TEST(DetectPipeline, NoiseFreeThreeBlines) {
    const Phantom ph = make_phantom({40, 80, 120});
    for (SolverKind k : {SolverKind::ducps, SolverKind::cps}) {
        RestoreConfig cfg;
        cfg.solver = k;
        const DetectionResult r = detect_pipeline(ph.image, geo128(), cfg);
        ASSERT_TRUE(r.pleural_found);
        const auto xs = sorted_x(r.blines);
        ASSERT_EQ(xs.size(), 3u) << to_string(k);
        EXPECT_NEAR(xs[0], 40, 2.0);
        EXPECT_NEAR(xs[1], 80, 2.0);
        EXPECT_NEAR(xs[2], 120, 2.0);
        EXPECT_TRUE(angle_ok(*r.pleural));
        for (const auto& d : r.alines) EXPECT_TRUE(angle_ok(d));
        for (const auto& d : r.blines) EXPECT_TRUE(angle_ok(d));
    }
}

TEST(DetectPipeline, BlankImageFlagged) {
    const DetectionResult r = detect_pipeline(Image(128, 160), geo128(), RestoreConfig{});
    EXPECT_FALSE(r.pleural_found);
    EXPECT_TRUE(r.alines.empty());
    EXPECT_TRUE(r.blines.empty());
    const auto j = to_json(r);
    EXPECT_EQ(j["pleural_found"], false);
    EXPECT_TRUE(j["pleural"].is_null());
}

TEST(DetectPipeline, Deterministic) {
    const Phantom ph = make_phantom({50, 100}, 38, 0.1);
    const auto a = to_json(detect_pipeline(ph.image, geo128(), RestoreConfig{}));
    const auto b = to_json(detect_pipeline(ph.image, geo128(), RestoreConfig{}));
    EXPECT_EQ(a.dump(), b.dump());
}

TEST(DetectPipeline, BlineCountMonotoneInFloor) {
    for (std::uint64_t seed : {1u, 2u}) {
        PhantomSpec s;
        s.bline_columns = {30, 70, 110, 140};
        s.noise_sigma = 0.15;
        s.seed = seed;
        const Image img = generate_phantom(s).image;
        std::size_t prev = std::numeric_limits<std::size_t>::max();
        for (double f : {0.0, 0.1, 0.3, 0.5, 0.8, 1.0}) {
            DetectKnobs k;
            k.floor_frac = f;
            const std::size_t n = detect_pipeline(img, geo128(), RestoreConfig{}, k).blines.size();
            EXPECT_LE(n, prev) << f;
            prev = n;
        }
    }
}

TEST(DetectPipeline, KnobValidation) {
    DetectKnobs k;
    k.lambda = 1.5;
    EXPECT_THROW(detect_pipeline(Image(128, 160), geo128(), RestoreConfig{}, k), ConfigError);
}

TEST(DetectionJson, Shape) {
    const Phantom ph = make_phantom({80});
    const auto j = to_json(detect_pipeline(ph.image, geo128(), RestoreConfig{}));
    ASSERT_EQ(j["blines"].size(), 1u);
    EXPECT_TRUE(j["blines"][0]["x"].is_number_integer());
    EXPECT_TRUE(j["pleural"]["depth"].is_number());
    EXPECT_EQ(bline_columns_from_json(j), std::vector<double>{j["blines"][0]["x"].get<double>()});
    EXPECT_THROW(bline_columns_from_json(nlohmann::json::object()), FormatError);
}

TEST(Overlay, GrayCodes) {
    const Phantom ph = make_phantom({80});
    const DetectionResult r = detect_pipeline(ph.image, geo128(), RestoreConfig{});
    const Image o = overlay_gray(r);
    const auto has = [&](double v) { return std::find(o.begin(), o.end(), v) != o.end(); };
    EXPECT_TRUE(has(kOverlayPleural));
    EXPECT_TRUE(has(kOverlayB));
    const auto rgb = overlay_rgb(r);
    EXPECT_EQ(rgb.size(), 128u * 160u * 3u);
    bool red = false, green = false;
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        red |= rgb[i] == 255 && rgb[i + 1] == 0 && rgb[i + 2] == 0;
        green |= rgb[i] == 0 && rgb[i + 1] == 255 && rgb[i + 2] == 0;
    }
    EXPECT_TRUE(red);
    EXPECT_TRUE(green);
}
