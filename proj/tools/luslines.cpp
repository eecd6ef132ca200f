// luslines: phantom | train | detect | score | bench
//
// Errors are reported as one line on stderr, "error: <category>: <message>",
// with a nonzero exit status.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "luslines/luslines.hpp"

namespace fs = std::filesystem;
using namespace luslines;

namespace {

struct Overrides {
    std::optional<std::string> solver;
    std::optional<std::string> model;
    std::optional<double> gamma;
    std::optional<double> lambda;
    std::optional<double> floor_frac;
    std::optional<int> nms_radius;
    std::optional<double> threshold;
    std::optional<int> epochs;
    std::optional<std::string> loss;
    std::optional<std::uint64_t> seed;
    bool png = false;
};

RunConfig resolve(const std::optional<std::string>& config_path, const Overrides& o) {
    nlohmann::json j = config_path ? load_json(*config_path) : nlohmann::json::object();
    if (!j.is_object()) throw ConfigError("config: expected an object");
    if (o.solver) j["solver"] = *o.solver;
    if (o.model) j["model"] = *o.model;
    if (o.gamma) j["gamma"] = *o.gamma;
    if (o.lambda) j["detect"]["lambda"] = *o.lambda;
    if (o.floor_frac) j["detect"]["floor_frac"] = *o.floor_frac;
    if (o.nms_radius) j["detect"]["nms_radius"] = *o.nms_radius;
    if (o.threshold) j["threshold"] = *o.threshold;
    if (o.epochs) j["train"]["epochs"] = *o.epochs;
    if (o.loss) j["train"]["loss"] = *o.loss;
    if (o.seed) j["train"]["seed"] = *o.seed;
    if (o.png) j["png_overlay"] = true;
    RunConfig c = run_config_from_json(j);
    if (c.model && !fs::exists(*c.model)) throw IoError("model '" + c.model->string() + "' does not exist");
    return c;
}

int fail(const std::string& category, const std::string& what) {
    std::string msg = what;
    for (char& ch : msg)
        if (ch == '\n') ch = ' ';
    std::cerr << "error: " << category << ": " << msg << "\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Line artifact restoration and identification for lung ultrasound frames"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "luslines 0.1.0");

    Overrides o;
    std::optional<std::string> config;
    std::string spec, out, images, input, model_out, history, det_dir, gt_dir;
    std::optional<std::string> json_out;

    auto* phantom = app.add_subcommand("phantom", "Generate synthetic phantoms and ground truth");
    phantom->add_option("--spec", spec, "Phantom spec JSON")->required()->check(CLI::ExistingFile);
    phantom->add_option("--out", out, "Output directory")->required();

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
        sub->add_option("--gamma", o.gamma, "Cauchy scale (0: per-image default)");
    };

    auto* train_cmd = app.add_subcommand("train", "Train DUCPS parameters on a directory of images");
    add_common(train_cmd);
    train_cmd->add_option("--images", images, "Training image directory")->required();
    train_cmd->add_option("--model", model_out, "Output model file")->required();
    train_cmd->add_option("--history", history, "Loss history CSV (default: model path with a .csv extension)");
    train_cmd->add_option("--epochs", o.epochs, "Epoch count");
    train_cmd->add_option("--loss", o.loss, "n2n or ssim");
    train_cmd->add_option("--seed", o.seed, "Sub-sampler seed");

    auto* detect = app.add_subcommand("detect", "Identify pleural, A- and B-lines");
    add_common(detect);
    detect->add_option("--input", input, "Image file or directory")->required();
    detect->add_option("--out", out, "Output directory")->required();
    detect->add_option("--solver", o.solver, "cps or ducps");
    detect->add_option("--model", o.model, "Trained DUCPS model");
    detect->add_option("--lambda", o.lambda, "A-line intensity ratio");
    detect->add_option("--floor-frac", o.floor_frac, "Peak floor as a fraction of the band maximum");
    detect->add_option("--nms-radius", o.nms_radius, "Suppression radius in cells");
    detect->add_flag("--png", o.png, "Also write a color PNG overlay");

    auto* score = app.add_subcommand("score", "Score detections against ground truth");
    score->add_option("--detections", det_dir, "Detections directory")->required();
    score->add_option("--truth", gt_dir, "Ground-truth directory")->required();
    score->add_option("--out", out, "Metrics CSV")->required();
    score->add_option("--json", json_out, "Also write the full report as JSON");
    score->add_option("--threshold", o.threshold, "Score threshold for a true positive");

    auto* bench = app.add_subcommand("bench", "Time CPS and DUCPS per image");
    add_common(bench);
    bench->add_option("--images", images, "Image directory")->required();
    bench->add_option("--out", out, "Timing CSV")->required();
    bench->add_option("--model", o.model, "Trained DUCPS model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        if (*phantom) {
            cmd_phantom(spec, out, std::cerr);
        } else if (*train_cmd) {
            const RunConfig cfg = resolve(config, o);
            const fs::path model_path = model_out;
            const fs::path hist = history.empty() ? fs::path(model_path).replace_extension(".csv") : fs::path(history);
            cmd_train(cfg, images, model_path, hist, std::cerr);
        } else if (*detect) {
            cmd_detect(resolve(config, o), input, out, std::cerr);
        } else if (*score) {
            const RunConfig cfg = resolve(std::nullopt, o);
            std::optional<fs::path> jp;
            if (json_out) jp = *json_out;
            cmd_score(det_dir, gt_dir, out, jp, cfg.threshold, std::cerr);
        } else if (*bench) {
            cmd_bench(resolve(config, o), images, out, std::cerr);
        }
    } catch (const luslines::Error& e) {
        return fail(e.category(), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail("io", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
