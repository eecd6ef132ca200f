#pragma once

// Command implementations behind the luslines executable.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luslines/core.hpp"
#include "luslines/eval.hpp"
#include "luslines/io.hpp"
#include "luslines/lineid.hpp"
#include "luslines/radon.hpp"
#include "luslines/solvers.hpp"
#include "luslines/training.hpp"

namespace luslines {

namespace fs = std::filesystem;

struct RunConfig {
    int n_angles = 180;
    double r_step = 1.0;
    SolverKind solver = SolverKind::ducps;
    std::optional<fs::path> model;
    double gamma = 0;  // 0: per-image default
    double cps_step = 0;
    int cps_max_iter = 500;
    double cps_tol = 1e-3;
    DetectKnobs detect;
    double threshold = kMatchThreshold;
    TrainConfig train;
    bool png_overlay = false;

    void validate() const {
        if (n_angles < 1) throw ConfigError("geometry.n_angles: must be >= 1");
        if (!(r_step > 0)) throw ConfigError("geometry.r_step: must be positive");
        if (gamma < 0) throw ConfigError("gamma: must be nonnegative");
        if (cps_step < 0) throw ConfigError("cps.step: must be nonnegative");
        if (cps_max_iter < 1) throw ConfigError("cps.max_iter: must be >= 1");
        if (!(cps_tol > 0)) throw ConfigError("cps.tol: must be positive");
        if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold: must be in [0, 1]");
        detect.validate();
        train.validate();
    }

    Geometry geometry_for(const Image& img) const {
        return Geometry::for_image(static_cast<int>(img.height()), static_cast<int>(img.width()), n_angles, r_step);
    }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& prefix) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(prefix + key + ": wrong type");
    }
}

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& prefix) {
    if (!j.is_object()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw ConfigError(prefix + k + ": unknown key");
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::check_keys(j, {"geometry", "solver", "model", "gamma", "cps", "detect", "threshold", "train", "png_overlay"},
                       "");
    if (j.contains("geometry")) {
        const auto& g = j["geometry"];
        detail::check_keys(g, {"n_angles", "r_step"}, "geometry.");
        detail::read_field(g, "n_angles", c.n_angles, "geometry.");
        detail::read_field(g, "r_step", c.r_step, "geometry.");
    }
    std::string solver = to_string(c.solver);
    detail::read_field(j, "solver", solver, "");
    if (solver == "cps") c.solver = SolverKind::cps;
    else if (solver == "ducps") c.solver = SolverKind::ducps;
    else throw ConfigError("solver: expected 'cps' or 'ducps', got '" + solver + "'");
    if (j.contains("model") && !j["model"].is_null()) {
        std::string m;
        detail::read_field(j, "model", m, "");
        c.model = m;
    }
    detail::read_field(j, "gamma", c.gamma, "");
    if (j.contains("cps")) {
        const auto& s = j["cps"];
        detail::check_keys(s, {"step", "max_iter", "tol"}, "cps.");
        detail::read_field(s, "step", c.cps_step, "cps.");
        detail::read_field(s, "max_iter", c.cps_max_iter, "cps.");
        detail::read_field(s, "tol", c.cps_tol, "cps.");
    }
    if (j.contains("detect")) {
        const auto& d = j["detect"];
        detail::check_keys(d, {"lambda", "floor_frac", "nms_radius", "guard", "horizontal_halfwidth",
                               "vertical_halfwidth", "zline_patch", "zline_factor", "zline_offset"},
                           "detect.");
        detail::read_field(d, "lambda", c.detect.lambda, "detect.");
        detail::read_field(d, "floor_frac", c.detect.floor_frac, "detect.");
        detail::read_field(d, "nms_radius", c.detect.nms_radius, "detect.");
        detail::read_field(d, "guard", c.detect.guard, "detect.");
        detail::read_field(d, "horizontal_halfwidth", c.detect.horizontal_halfwidth, "detect.");
        detail::read_field(d, "vertical_halfwidth", c.detect.vertical_halfwidth, "detect.");
        detail::read_field(d, "zline_patch", c.detect.zline_patch, "detect.");
        detail::read_field(d, "zline_factor", c.detect.zline_factor, "detect.");
        detail::read_field(d, "zline_offset", c.detect.zline_offset, "detect.");
    }
    detail::read_field(j, "threshold", c.threshold, "");
    if (j.contains("train")) {
        detail::check_keys(j["train"], {"epochs", "lr0", "lr_halve_every", "lr_factor", "alpha", "loss", "optimizer",
                                        "seed", "layers", "gamma"},
                           "train.");
        c.train = train_config_from_json(j["train"]);
    }
    detail::read_field(j, "png_overlay", c.png_overlay, "");
    c.validate();
    return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"geometry", {{"n_angles", c.n_angles}, {"r_step", c.r_step}}},
            {"solver", to_string(c.solver)},
            {"model", c.model ? nlohmann::json(c.model->string()) : nlohmann::json(nullptr)},
            {"gamma", c.gamma},
            {"cps", {{"step", c.cps_step}, {"max_iter", c.cps_max_iter}, {"tol", c.cps_tol}}},
            {"detect",
             {{"lambda", c.detect.lambda},
              {"floor_frac", c.detect.floor_frac},
              {"nms_radius", c.detect.nms_radius},
              {"guard", c.detect.guard},
              {"horizontal_halfwidth", c.detect.horizontal_halfwidth},
              {"vertical_halfwidth", c.detect.vertical_halfwidth},
              {"zline_patch", c.detect.zline_patch},
              {"zline_factor", c.detect.zline_factor},
              {"zline_offset", c.detect.zline_offset}}},
            {"threshold", c.threshold},
            {"train", to_json(c.train)},
            {"png_overlay", c.png_overlay}};
}

inline RunConfig load_run_config(const std::optional<fs::path>& path) {
    if (!path) return {};
    return run_config_from_json(load_json(*path));
}

// ---------------------------------------------------------------------------
// Phantom specs

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j, const std::string& prefix) {
    PhantomSpec p;
    detail::check_keys(j, {"name", "height", "width", "pleural_depth", "bline_columns", "bline_width", "n_alines",
                           "line_amplitude", "noise_sigma", "seed", "band_fwhm", "aline_decay"},
                       prefix);
    detail::read_field(j, "height", p.height, prefix);
    detail::read_field(j, "width", p.width, prefix);
    detail::read_field(j, "pleural_depth", p.pleural_depth, prefix);
    detail::read_field(j, "bline_columns", p.bline_columns, prefix);
    detail::read_field(j, "bline_width", p.bline_width, prefix);
    detail::read_field(j, "n_alines", p.n_alines, prefix);
    detail::read_field(j, "line_amplitude", p.line_amplitude, prefix);
    detail::read_field(j, "noise_sigma", p.noise_sigma, prefix);
    detail::read_field(j, "seed", p.seed, prefix);
    detail::read_field(j, "band_fwhm", p.band_fwhm, prefix);
    detail::read_field(j, "aline_decay", p.aline_decay, prefix);
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + std::string(e.what()).substr(std::string("phantom.").size()));
    }
    return p;
}

inline SuiteSpec suite_spec_from_json(const nlohmann::json& j) {
    SuiteSpec s;
    const std::string pre = "suite.";
    detail::check_keys(j, {"count", "seed", "height", "width", "min_blines", "max_blines", "min_separation",
                           "bline_width", "noise_sigma", "n_alines"},
                       pre);
    detail::read_field(j, "count", s.count, pre);
    detail::read_field(j, "seed", s.seed, pre);
    detail::read_field(j, "height", s.height, pre);
    detail::read_field(j, "width", s.width, pre);
    detail::read_field(j, "min_blines", s.min_blines, pre);
    detail::read_field(j, "max_blines", s.max_blines, pre);
    detail::read_field(j, "min_separation", s.min_separation, pre);
    detail::read_field(j, "bline_width", s.bline_width, pre);
    detail::read_field(j, "noise_sigma", s.noise_sigma, pre);
    detail::read_field(j, "n_alines", s.n_alines, pre);
    s.validate();
    return s;
}

/// {"phantoms": [{...}, ...]} lists specs explicitly (optional "name" each);
/// {"suite": {...}} draws a seeded family. Both may be present.
inline std::vector<std::pair<std::string, PhantomSpec>> phantom_specs_from_json(const nlohmann::json& j) {
    detail::check_keys(j, {"phantoms", "suite"}, "");
    std::vector<std::pair<std::string, PhantomSpec>> out;
    char buf[32];
    if (j.contains("phantoms")) {
        if (!j["phantoms"].is_array()) throw ConfigError("phantoms: expected an array");
        for (std::size_t i = 0; i < j["phantoms"].size(); ++i) {
            const auto& e = j["phantoms"][i];
            const std::string prefix = "phantoms[" + std::to_string(i) + "].";
            std::snprintf(buf, sizeof buf, "phantom_%03zu", i);
            std::string name = buf;
            detail::read_field(e, "name", name, prefix);
            out.emplace_back(name, phantom_spec_from_json(e, prefix));
        }
    }
    if (j.contains("suite")) {
        const auto specs = phantom_suite(suite_spec_from_json(j["suite"]));
        for (std::size_t i = 0; i < specs.size(); ++i) {
            std::snprintf(buf, sizeof buf, "suite_%03zu", i);
            out.emplace_back(buf, specs[i]);
        }
    }
    if (out.empty()) throw ConfigError("phantoms: spec lists no phantoms");
    return out;
}

// ---------------------------------------------------------------------------
// Helpers

inline bool is_image_file(const fs::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".pgm" || ext == ".png" || ext == ".PGM" || ext == ".PNG";
}

/// Sorted image files of a directory, or the path itself when it is a file.
inline std::vector<fs::path> list_images(const fs::path& input) {
    if (!fs::exists(input)) throw IoError("'" + input.string() + "' does not exist");
    if (!fs::is_directory(input)) return {input};
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(input))
        if (e.is_regular_file() && is_image_file(e.path()) && e.path().stem().string().find("_overlay") == std::string::npos)
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::map<std::string, fs::path> json_files_by_stem(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json") out[e.path().stem().string()] = e.path();
    return out;
}

inline void write_text(const fs::path& path, const std::string& s) {
    detail::write_file(path, std::vector<unsigned char>(s.begin(), s.end()));
}

inline RestoreConfig restore_config(const RunConfig& c, const Geometry& geo) {
    RestoreConfig r;
    r.solver = c.solver;
    r.gamma = c.gamma;
    r.cps_step = c.cps_step;
    r.max_iter = c.cps_max_iter;
    r.tol = c.cps_tol;
    if (c.solver == SolverKind::ducps && c.model) {
        DucpsParams p = load_params(*c.model);
        if (p.weights.rows() != static_cast<std::size_t>(geo.n_r()) ||
            p.weights.cols() != static_cast<std::size_t>(geo.n_angles))
            throw DimensionError("model " + c.model->string() + " has a " + std::to_string(p.weights.rows()) + "x" +
                                 std::to_string(p.weights.cols()) + " weight field, geometry needs " +
                                 std::to_string(geo.n_r()) + "x" + std::to_string(geo.n_angles));
        r.params = std::move(p);
    }
    return r;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Commands

/// Writes <name>.pgm and <name>.json per phantom. Returns the count.
inline std::size_t cmd_phantom(const fs::path& spec_file, const fs::path& out_dir, std::ostream& log) {
    const auto specs = phantom_specs_from_json(load_json(spec_file));
    fs::create_directories(out_dir);
    for (const auto& [name, spec] : specs) {
        const Phantom ph = generate_phantom(spec);
        save_image(ph.image, out_dir / (name + ".pgm"), 16);
        save_ground_truth(ph.truth, out_dir / (name + ".json"));
    }
    log << "[phantom] wrote " << specs.size() << " phantoms to " << out_dir.string() << "\n";
    return specs.size();
}

inline std::vector<Image> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    std::vector<Image> out;
    for (const auto& p : list_images(dir)) out.push_back(normalize(load_image(p)));
    if (out.empty()) throw IoError("no images in '" + dir.string() + "'");
    for (const auto& img : out)
        if (img.height() != out.front().height() || img.width() != out.front().width())
            throw DimensionError("images in '" + dir.string() + "' differ in size");
    return out;
}

/// Trains DUCPS parameters and writes the model plus a loss history CSV.
inline TrainResult cmd_train(const RunConfig& cfg, const fs::path& image_dir, const fs::path& model_out,
                             const fs::path& history_out, std::ostream& log) {
    const auto dataset = load_dataset(image_dir);
    const Geometry geo = cfg.geometry_for(dataset.front());
    log << "[train] loss=" << to_string(cfg.train.loss) << " optimizer=" << to_string(cfg.train.optimizer)
        << " images=" << dataset.size() << " epochs=" << cfg.train.epochs << "\n";
    TrainResult res = train(dataset, cfg.train, geo, [&](const EpochStats& e) {
        log << "[train] loss=" << to_string(cfg.train.loss) << " epoch " << e.epoch << " mean_loss " << fmt(e.mean_loss)
            << " lr " << fmt(e.lr) << "\n";
    });
    if (model_out.has_parent_path()) fs::create_directories(model_out.parent_path());
    if (history_out.has_parent_path()) fs::create_directories(history_out.parent_path());
    save_params(res.params, model_out);
    std::string csv = "epoch,mean_loss,lr\n";
    for (const auto& e : res.history) csv += std::to_string(e.epoch) + "," + fmt(e.mean_loss) + "," + fmt(e.lr) + "\n";
    write_text(history_out, csv);
    return res;
}

/// Runs the detection pipeline on one image or every image of a directory,
/// writing <stem>.json and <stem>_overlay.pgm (and .png when enabled).
inline std::size_t cmd_detect(const RunConfig& cfg, const fs::path& input, const fs::path& out_dir, std::ostream& log) {
    const auto files = list_images(input);
    if (files.empty()) throw IoError("no images in '" + input.string() + "'");
    fs::create_directories(out_dir);
    std::optional<Geometry> geo;
    std::optional<RestoreConfig> rc;
    for (const auto& f : files) {
        const Image y = normalize(load_image(f));
        const Geometry g = cfg.geometry_for(y);
        if (!geo || !(*geo == g)) {
            geo = g;
            rc = restore_config(cfg, g);
        }
        const DetectionResult res = detect_pipeline(y, g, *rc, cfg.detect);
        const std::string stem = f.stem().string();
        save_json(to_json(res), out_dir / (stem + ".json"));
        save_image(overlay_gray(res), out_dir / (stem + "_overlay.pgm"));
        if (cfg.png_overlay) save_rgb_png(out_dir / (stem + "_overlay.png"), y.height(), y.width(), overlay_rgb(res));
        log << "[detect] " << stem << ": pleural " << (res.pleural_found ? "found" : "not found") << ", "
            << res.alines.size() << " A, " << res.blines.size() << " B\n";
    }
    return files.size();
}

/// Pairs detection and ground-truth JSON files by stem; writes a CSV with a
/// row per image and a final aggregate row. Returns the aggregate.
inline ScoreReport cmd_score(const fs::path& det_dir, const fs::path& gt_dir, const fs::path& csv_out,
                             const std::optional<fs::path>& json_out, double threshold, std::ostream& log) {
    const auto dets = json_files_by_stem(det_dir);
    const auto gts = json_files_by_stem(gt_dir);
    std::vector<std::string> missing;
    for (const auto& [stem, p] : gts)
        if (!dets.count(stem)) missing.push_back("detections for '" + stem + "'");
    for (const auto& [stem, p] : dets)
        if (!gts.count(stem)) missing.push_back("ground truth for '" + stem + "'");
    if (!missing.empty()) {
        std::string msg = "missing counterpart files:";
        for (const auto& m : missing) msg += " " + m + ";";
        msg.pop_back();
        throw IoError(msg);
    }
    if (gts.empty()) throw IoError("no ground-truth files in '" + gt_dir.string() + "'");
    std::string csv = std::string(kScoreCsvHeader) + "\n";
    std::vector<ScoreReport> reports;
    nlohmann::json per_image = nlohmann::json::object();
    for (const auto& [stem, gt_path] : gts) {
        const ScoreReport r =
            match_detections(bline_columns_from_json(load_json(dets.at(stem))), load_ground_truth(gt_path), threshold);
        csv += score_csv_row(stem, r) + "\n";
        per_image[stem] = to_json(r);
        reports.push_back(r);
    }
    const ScoreReport agg = aggregate(reports);
    csv += score_csv_row("aggregate", agg) + "\n";
    if (csv_out.has_parent_path()) fs::create_directories(csv_out.parent_path());
    write_text(csv_out, csv);
    if (json_out) save_json({{"images", per_image}, {"aggregate", to_json(agg)}}, *json_out);
    log << "[score] " << reports.size() << " images: TP " << agg.tp << " FP " << agg.fp << " FN " << agg.fn << " F2 "
        << csv_number(agg.f2) << "\n";
    return agg;
}

struct BenchRow {
    std::string name;
    int cps_iterations = 0;
    double cps_seconds = 0;
    int ducps_layers = 0;
    double ducps_seconds = 0;
};

/// Times cps_solve to tolerance and a DUCPS forward pass per image. The
/// CSV ends with a "mean" row.
inline std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const fs::path& image_dir, const fs::path& csv_out,
                                       std::ostream& log) {
    const auto files = list_images(image_dir);
    if (files.empty()) throw IoError("no images in '" + image_dir.string() + "'");
    std::vector<BenchRow> rows;
    using clock = std::chrono::steady_clock;
    for (const auto& f : files) {
        const Image y = normalize(load_image(f));
        const Geometry geo = cfg.geometry_for(y);
        const Sinogram r0 = forward_radon(y, geo);
        const double gamma = cfg.gamma > 0 ? cfg.gamma : default_gamma(r0.values);
        const double mu = cfg.cps_step > 0 ? cfg.cps_step : default_cps_step(geo);
        BenchRow row;
        row.name = f.stem().string();
        auto t0 = clock::now();
        row.cps_iterations = cps_solve(y, geo, gamma, mu, cfg.cps_max_iter, cfg.cps_tol).iterations;
        row.cps_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        RunConfig dc = cfg;
        dc.solver = SolverKind::ducps;
        const RestoreConfig rc = restore_config(dc, geo);
        const DucpsParams p = rc.params ? *rc.params : ducps_init(geo, gamma);
        t0 = clock::now();
        const Sinogram s = adjoint_inverse(y, geo);
        ducps_forward(s, s, p);
        row.ducps_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        row.ducps_layers = p.layers;
        log << "[bench] " << row.name << ": cps " << row.cps_iterations << " iterations, ducps " << row.ducps_layers
            << " layers\n";
        rows.push_back(row);
    }
    BenchRow mean{"mean", 0, 0, 0, 0};
    double it = 0, layers = 0;
    for (const auto& r : rows) {
        it += r.cps_iterations;
        layers += r.ducps_layers;
        mean.cps_seconds += r.cps_seconds;
        mean.ducps_seconds += r.ducps_seconds;
    }
    const double n = static_cast<double>(rows.size());
    std::string csv = "name,cps_iterations,cps_seconds,ducps_layers,ducps_seconds\n";
    for (const auto& r : rows)
        csv += r.name + "," + std::to_string(r.cps_iterations) + "," + fmt(r.cps_seconds) + "," +
               std::to_string(r.ducps_layers) + "," + fmt(r.ducps_seconds) + "\n";
    csv += "mean," + fmt(it / n) + "," + fmt(mean.cps_seconds / n) + "," + fmt(layers / n) + "," +
           fmt(mean.ducps_seconds / n) + "\n";
    if (csv_out.has_parent_path()) fs::create_directories(csv_out.parent_path());
    write_text(csv_out, csv);
    return rows;
}

}  // namespace luslines
