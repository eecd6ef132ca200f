#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luslines/core.hpp"
#include "luslines/error.hpp"

namespace luslines {

/// Graded distance score of a detected column against a box: 1.0 in the
/// tenth of the half-width nearest the center, dropping by 0.1 per tenth,
/// 0 on or beyond the box edge.
inline double score_detection(double x_d, double x_min, double x_max) {
    if (!(x_min < x_max)) throw ConfigError("score_detection: degenerate box");
    const double c = (x_min + x_max) / 2.0;
    const double h = (x_max - x_min) / 2.0;
    const double off = std::abs(x_d - c);
    if (off >= h) return 0.0;
    const double idx = std::floor(off / (h / 10.0));
    return std::max(0.0, 1.0 - 0.1 * idx);
}

inline double score_detection(double x_d, const GroundTruthBox& box) {
    return score_detection(x_d, box.x_min, box.x_max);
}

inline constexpr double kMatchThreshold = 0.5;

struct DetectionScore {
    std::size_t detection = 0;
    std::optional<std::size_t> box;
    double score = 0;
};

struct ScoreReport {
    std::vector<DetectionScore> per_detection;
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> f2;

    int num_bline() const { return tp + fn; }
    int num_detection() const { return tp + fp; }
};

inline std::optional<double> f_beta(std::optional<double> p, std::optional<double> r, double beta) {
    if (!p || !r) return std::nullopt;
    const double b2 = beta * beta;
    const double den = b2 * *p + *r;
    if (den == 0) return std::nullopt;
    return (1 + b2) * *p * *r / den;
}

/// Fills precision, recall, F1 and F2 from the counts; a ratio with a zero
/// denominator is left empty.
inline void finish_ratios(ScoreReport& r) {
    r.precision = r.tp + r.fp > 0 ? std::optional<double>(static_cast<double>(r.tp) / (r.tp + r.fp)) : std::nullopt;
    r.recall = r.tp + r.fn > 0 ? std::optional<double>(static_cast<double>(r.tp) / (r.tp + r.fn)) : std::nullopt;
    r.f1 = f_beta(r.precision, r.recall, 1.0);
    r.f2 = f_beta(r.precision, r.recall, 2.0);
}

/// Greedy one-to-one matching by descending score (ties by detection then
/// box index). Matched pairs scoring above threshold are true positives.
inline ScoreReport match_detections(const std::vector<double>& dets, const std::vector<GroundTruthBox>& boxes,
                                    double threshold = kMatchThreshold) {
    struct Pair {
        double score;
        std::size_t d, b;
    };
    std::vector<Pair> pairs;
    for (std::size_t d = 0; d < dets.size(); ++d)
        for (std::size_t b = 0; b < boxes.size(); ++b) pairs.push_back({score_detection(dets[d], boxes[b]), d, b});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.score > b.score; });

    ScoreReport rep;
    rep.per_detection.resize(dets.size());
    for (std::size_t d = 0; d < dets.size(); ++d) rep.per_detection[d].detection = d;
    std::vector<bool> det_used(dets.size(), false), box_used(boxes.size(), false);
    for (const Pair& p : pairs) {
        if (det_used[p.d] || box_used[p.b] || !(p.score > 0)) continue;
        det_used[p.d] = box_used[p.b] = true;
        rep.per_detection[p.d].box = p.b;
        rep.per_detection[p.d].score = p.score;
    }
    std::vector<bool> box_hit(boxes.size(), false);
    for (const auto& s : rep.per_detection) {
        if (s.box && s.score > threshold) {
            ++rep.tp;
            box_hit[*s.box] = true;
        } else {
            ++rep.fp;
        }
    }
    rep.fn = static_cast<int>(std::count(box_hit.begin(), box_hit.end(), false));
    finish_ratios(rep);
    return rep;
}

/// B-kind boxes only.
inline ScoreReport match_detections(const std::vector<double>& dets, const GroundTruth& gt,
                                    double threshold = kMatchThreshold) {
    std::vector<GroundTruthBox> bs;
    for (const auto& b : gt.boxes)
        if (b.kind == LineKind::b_line) bs.push_back(b);
    return match_detections(dets, bs, threshold);
}

/// Micro-average: counts summed, ratios recomputed.
inline ScoreReport aggregate(const std::vector<ScoreReport>& reports) {
    ScoreReport out;
    for (const auto& r : reports) {
        out.tp += r.tp;
        out.fp += r.fp;
        out.fn += r.fn;
    }
    finish_ratios(out);
    return out;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const ScoreReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& s : r.per_detection)
        per.push_back({{"detection", s.detection},
                       {"box", s.box ? nlohmann::json(*s.box) : nlohmann::json(nullptr)},
                       {"score", s.score}});
    return {{"tp", r.tp},
            {"fp", r.fp},
            {"fn", r.fn},
            {"precision", optional_json(r.precision)},
            {"recall", optional_json(r.recall)},
            {"f1", optional_json(r.f1)},
            {"f2", optional_json(r.f2)},
            {"per_detection", per}};
}

inline const char* kScoreCsvHeader = "name,Precision,Recall,F1,F2,Num_Bline,Num_Detection,TP,FP,FN";

inline std::string csv_number(const std::optional<double>& v) {
    if (!v) return "NaN";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

inline std::string score_csv_row(const std::string& name, const ScoreReport& r) {
    return name + "," + csv_number(r.precision) + "," + csv_number(r.recall) + "," + csv_number(r.f1) + "," +
           csv_number(r.f2) + "," + std::to_string(r.num_bline()) + "," + std::to_string(r.num_detection()) + "," +
           std::to_string(r.tp) + "," + std::to_string(r.fp) + "," + std::to_string(r.fn);
}

}  // namespace luslines
