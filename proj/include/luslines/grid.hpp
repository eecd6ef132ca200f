#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "luslines/error.hpp"

namespace luslines {

/// Dense row-major grid of doubles. Used directly for weight fields and
/// intermediate sinogram-shaped data; Image and Sinogram wrap it.
class Grid {
public:
    Grid() = default;
    Grid(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
    }
}

inline double sum(const Grid& g) { return std::accumulate(g.begin(), g.end(), 0.0); }

inline double dot(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "dot");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(const Grid& g) { return std::sqrt(dot(g, g)); }

inline double max_value(const Grid& g) {
    return g.empty() ? 0.0 : *std::max_element(g.begin(), g.end());
}

inline double min_value(const Grid& g) {
    return g.empty() ? 0.0 : *std::min_element(g.begin(), g.end());
}

inline bool all_finite(const Grid& g) {
    return std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); });
}

inline double distance(const Grid& a, const Grid& b) {
    require_same_shape(a, b, "distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

/// a + s*b, elementwise.
inline Grid add_scaled(const Grid& a, double s, const Grid& b) {
    require_same_shape(a, b, "add_scaled");
    Grid out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + s * b[i];
    return out;
}

inline Grid scaled(const Grid& a, double s) {
    Grid out = a;
    for (double& v : out) v *= s;
    return out;
}

}  // namespace luslines
