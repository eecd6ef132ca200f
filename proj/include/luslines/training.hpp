#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luslines/core.hpp"
#include "luslines/radon.hpp"
#include "luslines/solvers.hpp"
#include "luslines/ssim.hpp"

namespace luslines {

// ---------------------------------------------------------------------------
// Losses

struct SsimLoss {
    double loss = 0;
    Grid dl_dz;
};

/// 1 - SSIM(R^-1 z, y) and its gradient with respect to the sinogram z.
inline SsimLoss ssim_loss_and_grad(const Grid& z, const Image& y, const Geometry& geo) {
    const Sinogram zs(geo, z);
    const Image rec = inverse_radon(zs);
    Grid g;
    const double s = ssim(rec, y, &g);
    for (double& v : g) v = -v;
    return {1.0 - s, inverse_radon_transpose(Image(std::move(g)), geo).values};
}

/// Two half-resolution grids drawn from adjacent cells of every 2x2 block,
/// with the flat source index behind each output cell.
struct SubsamplePair {
    Grid g1;
    Grid g2;
    std::vector<std::size_t> index1;
    std::vector<std::size_t> index2;
};

namespace detail {

// Cell positions in a 2x2 block: 0 top-left, 1 top-right, 2 bottom-left,
// 3 bottom-right. The eight ordered pairs of edge-adjacent cells.
inline constexpr std::array<std::array<int, 2>, 8> kNeighborPairs{{
    {0, 1}, {1, 0}, {2, 3}, {3, 2}, {0, 2}, {2, 0}, {1, 3}, {3, 1},
}};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline Grid gather(const Grid& src, const std::vector<std::size_t>& index, std::size_t rows, std::size_t cols) {
    Grid out(rows, cols);
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = src[index[i]];
    return out;
}

}  // namespace detail

inline SubsamplePair neighbor_subsample(const Grid& s, std::uint64_t seed) {
    if (s.rows() < 2 || s.cols() < 2) throw DimensionError("neighbor_subsample: grid smaller than 2x2");
    const std::size_t h = s.rows() / 2;
    const std::size_t w = s.cols() / 2;
    SubsamplePair out{Grid(h, w), Grid(h, w), std::vector<std::size_t>(h * w), std::vector<std::size_t>(h * w)};
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const auto& pair = detail::kNeighborPairs[static_cast<std::size_t>(rng() >> 61)];
            auto flat = [&](int pos) {
                return (2 * i + static_cast<std::size_t>(pos / 2)) * s.cols() + 2 * j + static_cast<std::size_t>(pos % 2);
            };
            const std::size_t o = i * w + j;
            out.index1[o] = flat(pair[0]);
            out.index2[o] = flat(pair[1]);
            out.g1[o] = s[out.index1[o]];
            out.g2[o] = s[out.index2[o]];
        }
    }
    return out;
}

struct N2nLoss {
    double loss = 0;
    double reconstruction = 0;
    double regularizer = 0;
    DucpsGrads grads;
};

/// g1(f(r)) - g2(f(r)) for the full-resolution network output; held fixed
/// when differentiating the regularizer.
inline Grid n2n_target(const DucpsParams& p, const Grid& r, const SubsamplePair& pair) {
    const Grid fr = ducps_forward(r, r, p).x;
    Grid t(pair.g1.rows(), pair.g1.cols());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = fr[pair.index1[i]] - fr[pair.index2[i]];
    return t;
}

/// Neighbor2Neighbor loss for a given sub-sampled pair and regularizer target.
///
/// The half-size network uses the sub-sampled input as its own drive term
/// and the weight field gathered through the g1 index map; weight gradients
/// are scattered back through the same map.
inline N2nLoss n2n_loss_with_target(const DucpsParams& p, const SubsamplePair& pair, const Grid& target,
                                    double alpha) {
    require_same_shape(pair.g1, target, "n2n_loss(target)");
    if (pair.index1.size() != pair.g1.size()) throw DimensionError("n2n_loss: index map does not match g1");
    for (std::size_t idx : pair.index1)
        if (idx >= p.weights.size()) throw DimensionError("n2n_loss: index map exceeds weight field");
    DucpsParams half = p;
    half.weights = detail::gather(p.weights, pair.index1, pair.g1.rows(), pair.g1.cols());
    const DucpsOutput f = ducps_forward(pair.g1, pair.g1, half);

    N2nLoss out;
    Grid dl(f.x.rows(), f.x.cols());
    for (std::size_t i = 0; i < dl.size(); ++i) {
        const double rec = f.x[i] - pair.g2[i];
        const double reg = rec - target[i];
        out.reconstruction += rec * rec;
        out.regularizer += reg * reg;
        dl[i] = 2 * rec + alpha * 2 * reg;
    }
    out.loss = out.reconstruction + alpha * out.regularizer;
    const DucpsGrads half_grads = ducps_backward(f.trace, dl, half);
    out.grads.weights = Grid(p.weights.rows(), p.weights.cols());
    for (std::size_t i = 0; i < pair.index1.size(); ++i) out.grads.weights[pair.index1[i]] += half_grads.weights[i];
    out.grads.mu = half_grads.mu;
    return out;
}

inline N2nLoss n2n_loss_and_grads(const DucpsParams& p, const Grid& r, double alpha, std::uint64_t seed) {
    require_same_shape(r, p.weights, "n2n_loss_and_grads");
    const SubsamplePair pair = neighbor_subsample(r, seed);
    return n2n_loss_with_target(p, pair, n2n_target(p, r, pair), alpha);
}

// ---------------------------------------------------------------------------
// Training loop

enum class LossKind { ssim, n2n };
enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    int epochs = 20;
    double lr0 = 1e-4;
    int lr_halve_every = 5;
    double lr_factor = 0.5;
    double alpha = 1.0;
    LossKind loss = LossKind::n2n;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 0;
    int layers = kDefaultLayers;
    double gamma = 0;  // 0 selects 0.1 * the largest training sinogram cell

    void validate() const {
        if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
        if (!(lr0 > 0)) throw ConfigError("train.lr0: must be positive");
        if (lr_halve_every < 1) throw ConfigError("train.lr_halve_every: must be >= 1");
        if (!(lr_factor > 0 && lr_factor <= 1)) throw ConfigError("train.lr_factor: must be in (0, 1]");
        if (!(alpha >= 0)) throw ConfigError("train.alpha: must be nonnegative");
        if (layers < 1) throw ConfigError("train.layers: must be >= 1");
        if (gamma < 0) throw ConfigError("train.gamma: must be nonnegative");
    }

    double learning_rate(int epoch) const {
        return lr0 * std::pow(lr_factor, static_cast<double>(epoch / lr_halve_every));
    }
};

inline const char* to_string(LossKind k) { return k == LossKind::ssim ? "ssim" : "n2n"; }
inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.lr0 = j.value("lr0", c.lr0);
        c.lr_halve_every = j.value("lr_halve_every", c.lr_halve_every);
        c.lr_factor = j.value("lr_factor", c.lr_factor);
        c.alpha = j.value("alpha", c.alpha);
        c.seed = j.value("seed", c.seed);
        c.layers = j.value("layers", c.layers);
        c.gamma = j.value("gamma", c.gamma);
        const std::string loss = j.value("loss", std::string(to_string(c.loss)));
        if (loss == "ssim") c.loss = LossKind::ssim;
        else if (loss == "n2n") c.loss = LossKind::n2n;
        else throw ConfigError("train.loss: expected 'ssim' or 'n2n', got '" + loss + "'");
        const std::string opt = j.value("optimizer", std::string(to_string(c.optimizer)));
        if (opt == "adam") c.optimizer = OptimizerKind::adam;
        else if (opt == "sgd") c.optimizer = OptimizerKind::sgd;
        else throw ConfigError("train.optimizer: expected 'adam' or 'sgd', got '" + opt + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs}, {"lr0", c.lr0}, {"lr_halve_every", c.lr_halve_every},
            {"lr_factor", c.lr_factor}, {"alpha", c.alpha}, {"loss", to_string(c.loss)},
            {"optimizer", to_string(c.optimizer)}, {"seed", c.seed}, {"layers", c.layers},
            {"gamma", c.gamma}};
}

inline constexpr double kMinParam = 1e-8;

/// Adaptive-moment update (decays 0.9 / 0.999, eps 1e-8) or plain gradient
/// descent over (W, mu), with positivity enforced by clamping.
class ParamOptimizer {
public:
    ParamOptimizer(OptimizerKind kind, std::size_t n) : kind_(kind), m_w_(n, 0.0), v_w_(n, 0.0) {}

    void step(DucpsParams& p, const DucpsGrads& g, double lr) {
        ++t_;
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] -= lr * g.weights[i];
            p.mu -= lr * g.mu;
        } else {
            const double c1 = 1 - std::pow(kBeta1, t_);
            const double c2 = 1 - std::pow(kBeta2, t_);
            for (std::size_t i = 0; i < p.weights.size(); ++i)
                p.weights[i] -= lr * update(m_w_[i], v_w_[i], g.weights[i], c1, c2);
            p.mu -= lr * update(m_mu_, v_mu_, g.mu, c1, c2);
        }
        for (double& w : p.weights) w = std::max(w, kMinParam);
        p.mu = std::max(p.mu, kMinParam);
    }

private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    static double update(double& m, double& v, double g, double c1, double c2) {
        m = kBeta1 * m + (1 - kBeta1) * g;
        v = kBeta2 * v + (1 - kBeta2) * g * g;
        return (m / c1) / (std::sqrt(v / c2) + kEps);
    }

    OptimizerKind kind_;
    double t_ = 0;
    std::vector<double> m_w_, v_w_;
    double m_mu_ = 0, v_mu_ = 0;
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double mean_loss = 0;
    double lr = 0;
};

struct TrainResult {
    DucpsParams params;
    std::vector<EpochStats> history;
};

/// Seed of the neighbor sub-sampler for one (epoch, image) step.
inline std::uint64_t step_seed(std::uint64_t base, int epoch, std::size_t image) {
    return detail::splitmix64(detail::splitmix64(base ^ (static_cast<std::uint64_t>(epoch) << 32)) + image);
}

/// One image per step, images visited in order each epoch.
inline TrainResult train(const std::vector<Image>& dataset, const TrainConfig& cfg, const Geometry& geo,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("train: empty dataset");
    std::vector<Grid> sinograms;
    sinograms.reserve(dataset.size());
    double peak = 0;
    for (const auto& y : dataset) {
        sinograms.push_back(forward_radon(y, geo).values);
        peak = std::max(peak, max_value(sinograms.back()));
    }
    const double gamma = cfg.gamma > 0 ? cfg.gamma : std::max(0.1 * peak, 1e-6);
    TrainResult res{ducps_init(geo, gamma, cfg.layers), {}};
    ParamOptimizer opt(cfg.optimizer, res.params.weights.size());

    for (int e = 0; e < cfg.epochs; ++e) {
        const double lr = cfg.learning_rate(e);
        double total = 0;
        for (std::size_t n = 0; n < dataset.size(); ++n) {
            double loss = 0;
            DucpsGrads grads;
            if (cfg.loss == LossKind::n2n) {
                N2nLoss l = n2n_loss_and_grads(res.params, sinograms[n], cfg.alpha, step_seed(cfg.seed, e, n));
                loss = l.loss;
                grads = std::move(l.grads);
            } else {
                const DucpsOutput f = ducps_forward(sinograms[n], sinograms[n], res.params);
                SsimLoss l = ssim_loss_and_grad(f.trace.z.back(), dataset[n], geo);
                loss = l.loss;
                grads = ducps_backward_from_last_z(f.trace, l.dl_dz, res.params);
            }
            if (!std::isfinite(loss))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(e + 1) + ", step " +
                                   std::to_string(n + 1));
            total += loss;
            opt.step(res.params, grads, lr);
        }
        res.history.push_back({e + 1, total / static_cast<double>(dataset.size()), lr});
        if (on_epoch) on_epoch(res.history.back());
    }
    return res;
}

}  // namespace luslines
