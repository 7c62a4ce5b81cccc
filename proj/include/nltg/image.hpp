#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace nltg {

/// Real-valued raster stored row-major. Values are intensities in [0, 255]
/// once clipped; iterates may leave that range.
class Image {
  public:
    Image() = default;
    Image(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), data_(width * height, fill) {}
    Image(std::size_t width, std::size_t height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data)) {
        detail::require(data_.size() == width_ * height_,
                        "image data length " + std::to_string(data_.size()) + " does not match " +
                            std::to_string(width_) + "x" + std::to_string(height_));
    }

    static Image square(std::size_t side, double fill = 0.0) { return Image(side, side, fill); }

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
    double operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Spans into a temporary would dangle; use raw() on rvalues.
    std::span<double> values() & { return data_; }
    std::span<const double> values() const& { return data_; }
    std::span<const double> values() && = delete;
    std::vector<double>& raw() & { return data_; }
    const std::vector<double>& raw() const& { return data_; }
    std::vector<double> raw() && { return std::move(data_); }

    bool same_shape(const Image& other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Image&, const Image&) = default;

  private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> data_;
};

struct NoiseModel {
    double sigma = 0.0;
    std::uint64_t seed = 0;
};

/// Adds i.i.d. N(0, sigma^2) noise drawn from a generator seeded per call.
inline std::vector<double> add_noise(std::span<const double> in, const NoiseModel& nm) {
    detail::require(nm.sigma >= 0.0, "noise sigma must be non-negative");
    std::vector<double> out(in.begin(), in.end());
    if (nm.sigma == 0.0) return out;
    std::mt19937_64 rng(nm.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : out) v += nm.sigma * normal(rng);
    return out;
}

inline Image add_noise(const Image& img, const NoiseModel& nm) {
    return Image(img.width(), img.height(), add_noise(img.values(), nm));
}

inline constexpr double kIntensityMin = 0.0;
inline constexpr double kIntensityMax = 255.0;

inline Image clip_intensity(Image u) {
    for (double& v : u.raw()) v = std::clamp(v, kIntensityMin, kIntensityMax);
    return u;
}

// Plain vector helpers shared by the solvers.
namespace vec {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace vec
}  // namespace nltg
