#include <gtest/gtest.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "luslines/app.hpp"
#include "support.hpp"

using namespace luslines;
using testing_support::read_bytes;
using testing_support::TempDir;

namespace {

const std::string kCli = LUSLINES_CLI;

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

// Runs the CLI and captures stderr into a file.
int cli(const std::string& args, const fs::path& err = "/dev/null") {
    return std::system((kCli + " " + args + " >/dev/null 2>" + quoted(err)).c_str());
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string f; std::getline(in, f, ',');) out.push_back(f);
    return out;
}

// Drops the *_seconds columns (1-based 3 and 5) of the bench CSV.
std::string without_timings(const std::string& csv) {
    std::string out;
    for (const auto& l : lines(csv)) {
        const auto f = split(l);
        out += f[0] + "," + f[1] + "," + f[3] + "\n";
    }
    return out;
}

std::string dir_digest(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string out;
    for (const auto& f : files) out += f.filename().string() + ":" + read_bytes(f) + "\n";
    return out;
}

// Small frames keep the train command quick.
nlohmann::json small_spec() {
    nlohmann::json list = nlohmann::json::array();
    for (int k = 0; k < 4; ++k)
        list.push_back({{"height", 48},
                        {"width", 56},
                        {"pleural_depth", 14},
                        {"bline_columns", {12 + 10 * k, 44}},
                        {"noise_sigma", 0.05},
                        {"seed", k}});
    return {{"phantoms", list}};
}

class Cli : public ::testing::Test {
protected:
    TempDir dir;
    fs::path spec = dir / "spec.json";
    fs::path images = dir / "img";

    void SetUp() override {
        save_json(small_spec(), spec);
        ASSERT_EQ(cli("phantom --spec " + quoted(spec) + " --out " + quoted(images)), 0);
    }
};

}  // namespace

TEST_F(Cli, PhantomWritesImageAndTruthPerSpec) {
    std::size_t pgm = 0, json = 0;
    for (const auto& e : fs::directory_iterator(images)) {
        pgm += e.path().extension() == ".pgm";
        json += e.path().extension() == ".json";
    }
    EXPECT_EQ(pgm, 4u);
    EXPECT_EQ(json, 4u);
    const fs::path again = dir / "img2";
    ASSERT_EQ(cli("phantom --spec " + quoted(spec) + " --out " + quoted(again)), 0);
    EXPECT_EQ(dir_digest(images), dir_digest(again));
}

TEST_F(Cli, PhantomRejectsPleuralDepthOutsideBand) {
    nlohmann::json bad = small_spec();
    bad["phantoms"][2]["pleural_depth"] = 30;
    save_json(bad, dir / "bad.json");
    const fs::path err = dir / "err.txt";
    EXPECT_NE(cli("phantom --spec " + quoted(dir / "bad.json") + " --out " + quoted(dir / "x"), err), 0);
    const auto l = lines(read_bytes(err));
    ASSERT_EQ(l.size(), 1u);
    EXPECT_EQ(l[0].rfind("error: config: phantoms[2].pleural_depth", 0), 0u) << l[0];
}

TEST_F(Cli, TrainWritesModelAndHistoryDeterministically) {
    const fs::path m1 = dir / "m1.ducp", m2 = dir / "m2.ducp";
    ASSERT_EQ(cli("train --images " + quoted(images) + " --model " + quoted(m1) + " --seed 4"), 0);
    ASSERT_EQ(cli("train --images " + quoted(images) + " --model " + quoted(m2) + " --seed 4"), 0);
    const std::string h1 = read_bytes(dir / "m1.csv");
    EXPECT_EQ(lines(h1).size(), 21u);
    EXPECT_EQ(lines(h1)[0], "epoch,mean_loss,lr");
    EXPECT_EQ(h1, read_bytes(dir / "m2.csv"));
    EXPECT_EQ(read_bytes(m1), read_bytes(m2));
    const DucpsParams p = load_params(m1);
    EXPECT_EQ(p.layers, 7);
}

TEST_F(Cli, TrainSsimPathIsTagged) {
    const fs::path log = dir / "log.txt";
    ASSERT_EQ(std::system((kCli + " train --images " + quoted(images) + " --model " + quoted(dir / "s.ducp") +
                           " --loss ssim --epochs 2 >" + quoted(log) + " 2>&1")
                              .c_str()),
              0);
    const std::string text = read_bytes(log);
    EXPECT_NE(text.find("[train] loss=ssim"), std::string::npos);
    EXPECT_EQ(text.find("loss=n2n"), std::string::npos);
    EXPECT_EQ(lines(read_bytes(dir / "s.csv")).size(), 3u);
}

TEST_F(Cli, TrainRejectsEmptyDirectory) {
    fs::create_directories(dir / "empty");
    const fs::path err = dir / "err.txt";
    EXPECT_NE(cli("train --images " + quoted(dir / "empty") + " --model " + quoted(dir / "e.ducp"), err), 0);
    EXPECT_EQ(read_bytes(err).rfind("error: io: ", 0), 0u);
}

TEST_F(Cli, DetectScoreRoundTrip) {
    const fs::path det = dir / "det", det2 = dir / "det2";
    ASSERT_EQ(cli("detect --input " + quoted(images) + " --out " + quoted(det) + " --png"), 0);
    ASSERT_EQ(cli("detect --input " + quoted(images) + " --out " + quoted(det2) + " --png"), 0);
    EXPECT_EQ(dir_digest(det), dir_digest(det2));
    std::size_t json = 0;
    for (const auto& e : fs::directory_iterator(det)) json += e.path().extension() == ".json";
    EXPECT_EQ(json, 4u);
    EXPECT_TRUE(fs::exists(det / "phantom_000_overlay.pgm"));
    EXPECT_TRUE(fs::exists(det / "phantom_000_overlay.png"));

    const fs::path csv = dir / "score.csv", csv2 = dir / "score2.csv";
    ASSERT_EQ(cli("score --detections " + quoted(det) + " --truth " + quoted(images) + " --out " + quoted(csv) +
                  " --json " + quoted(dir / "score.json")),
              0);
    ASSERT_EQ(cli("score --detections " + quoted(det) + " --truth " + quoted(images) + " --out " + quoted(csv2)), 0);
    EXPECT_EQ(read_bytes(csv), read_bytes(csv2));
    const auto l = lines(read_bytes(csv));
    ASSERT_EQ(l.size(), 6u);
    EXPECT_EQ(l[0], kScoreCsvHeader);
    // Aggregate row recomputed from the summed counts.
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 1; i <= 4; ++i) {
        const auto f = split(l[i]);
        tp += std::stoi(f[7]);
        fp += std::stoi(f[8]);
        fn += std::stoi(f[9]);
    }
    ScoreReport agg;
    agg.tp = tp;
    agg.fp = fp;
    agg.fn = fn;
    finish_ratios(agg);
    EXPECT_EQ(l[5], score_csv_row("aggregate", agg));
    EXPECT_EQ(fn + tp, 8);
}

TEST_F(Cli, ScoreEdgeCases) {
    // Perfect detections: one B-line at each box center.
    const fs::path det = dir / "det";
    fs::create_directories(det);
    for (int k = 0; k < 4; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "phantom_%03d", k);
        const GroundTruth gt = load_ground_truth(images / (std::string(name) + ".json"));
        nlohmann::json d{{"pleural_found", true}, {"pleural", nullptr}, {"alines", nlohmann::json::array()}};
        d["blines"] = nlohmann::json::array();
        if (k != 3)
            for (const auto& b : gt.boxes)
                if (b.kind == LineKind::b_line) d["blines"].push_back({{"x", (b.x_min + b.x_max) / 2}});
        save_json(d, det / (std::string(name) + ".json"));
    }
    const fs::path csv = dir / "s.csv";
    ASSERT_EQ(cli("score --detections " + quoted(det) + " --truth " + quoted(images) + " --out " + quoted(csv)), 0);
    const auto l = lines(read_bytes(csv));
    ASSERT_EQ(l.size(), 6u);
    EXPECT_EQ(l[1], "phantom_000,1.000000,1.000000,1.000000,1.000000,2,2,2,0,0");
    EXPECT_EQ(l[4], "phantom_003,NaN,0.000000,NaN,NaN,2,0,0,0,2");

    fs::remove(det / "phantom_001.json");
    const fs::path err = dir / "err.txt";
    EXPECT_NE(cli("score --detections " + quoted(det) + " --truth " + quoted(images) + " --out " + quoted(csv), err), 0);
    const std::string e = read_bytes(err);
    EXPECT_EQ(e.rfind("error: io: ", 0), 0u);
    EXPECT_NE(e.find("phantom_001"), std::string::npos);
}

TEST_F(Cli, DetectBlankImage) {
    fs::create_directories(dir / "blank");
    save_image(Image(48, 56), dir / "blank" / "blank.pgm");
    ASSERT_EQ(cli("detect --input " + quoted(dir / "blank" / "blank.pgm") + " --out " + quoted(dir / "bd")), 0);
    const auto j = load_json(dir / "bd" / "blank.json");
    EXPECT_EQ(j["pleural_found"], false);
    EXPECT_TRUE(j["alines"].empty());
    EXPECT_TRUE(j["blines"].empty());
}

TEST_F(Cli, BenchRowsAndDeterminism) {
    const fs::path a = dir / "a.csv", b = dir / "b.csv", cfg = dir / "bench.json";
    save_json({{"cps", {{"max_iter", 60}}}}, cfg);
    ASSERT_EQ(cli("bench --config " + quoted(cfg) + " --images " + quoted(images) + " --out " + quoted(a)), 0);
    ASSERT_EQ(cli("bench --config " + quoted(cfg) + " --images " + quoted(images) + " --out " + quoted(b)), 0);
    const auto l = lines(read_bytes(a));
    ASSERT_EQ(l.size(), 6u);
    EXPECT_EQ(l[0], "name,cps_iterations,cps_seconds,ducps_layers,ducps_seconds");
    for (std::size_t i = 1; i <= 4; ++i) {
        const auto f = split(l[i]);
        EXPECT_EQ(f[3], "7");
        EXPECT_GE(std::stoi(f[1]), 7);
    }
    EXPECT_EQ(split(l[5])[0], "mean");
    EXPECT_EQ(without_timings(read_bytes(a)), without_timings(read_bytes(b)));
}

TEST_F(Cli, ErrorLines) {
    const fs::path err = dir / "err.txt";
    EXPECT_NE(cli("detect --input " + quoted(dir / "nope.pgm") + " --out " + quoted(dir / "o"), err), 0);
    EXPECT_EQ(read_bytes(err).rfind("error: io: ", 0), 0u);
    EXPECT_NE(cli("frobnicate", err), 0);
    EXPECT_EQ(read_bytes(err).rfind("error: usage: ", 0), 0u);
    save_json({{"solver", "magic"}}, dir / "c.json");
    EXPECT_NE(cli("detect --config " + quoted(dir / "c.json") + " --input " + quoted(images) + " --out " +
                      quoted(dir / "o"),
                  err),
              0);
    EXPECT_EQ(read_bytes(err).rfind("error: config: solver", 0), 0u);
    testing_support::write_bytes(dir / "junk.pgm", "P5 junk");
    EXPECT_NE(cli("detect --input " + quoted(dir / "junk.pgm") + " --out " + quoted(dir / "o"), err), 0);
    EXPECT_EQ(read_bytes(err).rfind("error: format: ", 0), 0u);
    for (const auto& l : lines(read_bytes(err))) EXPECT_FALSE(l.empty());
    EXPECT_EQ(lines(read_bytes(err)).size(), 1u);
}

TEST(RunConfigJson, DefaultsAndUnknownKeys) {
    const RunConfig c = run_config_from_json(nlohmann::json::object());
    EXPECT_EQ(c.n_angles, 180);
    EXPECT_EQ(c.solver, SolverKind::ducps);
    EXPECT_EQ(run_config_from_json(to_json(c)).detect.lambda, c.detect.lambda);
    try {
        run_config_from_json({{"detect", {{"lamda", 0.2}}}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(std::string(e.what()), "detect.lamda: unknown key");
    }
    EXPECT_THROW(run_config_from_json({{"detect", {{"floor_frac", 2.0}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"geometry", {{"n_angles", "many"}}}}), ConfigError);
}
