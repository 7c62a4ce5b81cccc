#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>

#include "errors.hpp"
#include "image.hpp"

namespace nltg {

enum class PhantomKind { SheppLogan, XcatLike };

struct Tumor {
    double center_x = 0.0;  // normalized coordinates, [-1, 1], x to the right
    double center_y = 0.0;  // y upwards
    double radius = 0.0;
    double intensity = 0.0;
};

struct BackgroundWave {
    double amplitude = 0.0;
    double frequency = 1.0;  // cycles across the field of view
};

struct Phantom {
    PhantomKind kind = PhantomKind::SheppLogan;
    std::size_t size = 128;
    std::optional<Tumor> tumor;
    std::optional<BackgroundWave> background_wave;
};

/// Ellipse in normalized [-1, 1]^2 coordinates; angle in degrees.
struct Ellipse {
    double value;
    double semi_x;
    double semi_y;
    double center_x;
    double center_y;
    double angle_deg;

    bool contains(double x, double y) const {
        const double phi = angle_deg * std::numbers::pi / 180.0;
        const double dx = x - center_x;
        const double dy = y - center_y;
        const double xr = dx * std::cos(phi) + dy * std::sin(phi);
        const double yr = -dx * std::sin(phi) + dy * std::cos(phi);
        return (xr * xr) / (semi_x * semi_x) + (yr * yr) / (semi_y * semi_y) <= 1.0;
    }
};

// Modified Shepp-Logan (Toft). Values are additive, peak sum 1.
inline constexpr std::array<Ellipse, 10> kSheppLoganEllipses{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
    {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
    {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
    {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
    {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
    {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
    {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
}};

namespace detail {

// Pixel centre in normalized coordinates.
inline double pixel_x(std::size_t col, std::size_t n) {
    return (2.0 * static_cast<double>(col) + 1.0) / static_cast<double>(n) - 1.0;
}
inline double pixel_y(std::size_t row, std::size_t n) {
    return 1.0 - (2.0 * static_cast<double>(row) + 1.0) / static_cast<double>(n);
}

inline constexpr Ellipse kTorso{130.0, 0.86, 0.62, 0.0, -0.02, 0.0};

// Painter-ordered layers of the torso slice: later entries overwrite earlier ones.
inline std::vector<Ellipse> xcat_like_layers() {
    std::vector<Ellipse> layers;
    layers.push_back({150.0, 0.86, 0.62, 0.0, -0.02, 0.0});   // skin and fat rim
    layers.push_back(kTorso);
    layers.back().semi_x -= 0.04;
    layers.back().semi_y -= 0.04;
    // Ribs: a repeated pattern of small bright ellipses just inside the rim.
    constexpr int kRibs = 14;
    for (int k = 0; k < kRibs; ++k) {
        const double t = 2.0 * std::numbers::pi * (k + 0.5) / kRibs;
        const double x = 0.74 * std::cos(t);
        const double y = -0.02 + 0.50 * std::sin(t);
        layers.push_back({220.0, 0.045, 0.03, x, y, t * 180.0 / std::numbers::pi});
    }
    layers.push_back({30.0, 0.27, 0.38, -0.36, 0.04, 8.0});   // right lung
    layers.push_back({30.0, 0.25, 0.36, 0.38, 0.06, -8.0});   // left lung
    // Vessels in the lungs.
    const std::array<std::array<double, 2>, 8> vessels{{{-0.42, 0.22},
                                                        {-0.30, -0.10},
                                                        {-0.45, -0.05},
                                                        {-0.26, 0.30},
                                                        {0.44, 0.20},
                                                        {0.32, -0.12},
                                                        {0.48, -0.08},
                                                        {0.30, 0.32}}};
    for (const auto& v : vessels) layers.push_back({95.0, 0.028, 0.028, v[0], v[1], 0.0});
    layers.push_back({175.0, 0.17, 0.20, 0.04, -0.10, 25.0});  // heart
    layers.push_back({205.0, 0.07, 0.08, 0.08, -0.12, 0.0});   // ventricle
    layers.push_back({195.0, 0.055, 0.055, -0.14, -0.33, 0.0});  // aorta
    layers.push_back({235.0, 0.10, 0.09, 0.0, -0.48, 0.0});    // vertebral body
    layers.push_back({80.0, 0.035, 0.035, 0.0, -0.48, 0.0});   // spinal canal
    layers.push_back({225.0, 0.08, 0.03, 0.0, 0.52, 0.0});     // sternum
    return layers;
}

}  // namespace detail

/// Rasterizes a phantom by point sampling at pixel centres. Shepp-Logan is the
/// additive ellipse sum scaled to [0, 255]; XcatLike is a painter-ordered
/// torso slice rounded to integer intensities. Tumor disc and background wave
/// are applied before the final clip.
inline Image generate_phantom(const Phantom& p) {
    detail::require(p.size >= 8, "phantom size must be at least 8");
    if (p.tumor) detail::require(p.tumor->radius >= 0.0, "tumor radius must be non-negative");
    const std::size_t n = p.size;
    Image img = Image::square(n);
    std::vector<bool> body(n * n, false);

    if (p.kind == PhantomKind::SheppLogan) {
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double x = detail::pixel_x(c, n);
                const double y = detail::pixel_y(r, n);
                double v = 0.0;
                for (const auto& e : kSheppLoganEllipses)
                    if (e.contains(x, y)) v += e.value;
                img(r, c) = 255.0 * v;
                body[r * n + c] = kSheppLoganEllipses[0].contains(x, y);
            }
        }
    } else {
        const auto layers = detail::xcat_like_layers();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double x = detail::pixel_x(c, n);
                const double y = detail::pixel_y(r, n);
                double v = 0.0;
                for (const auto& e : layers)
                    if (e.contains(x, y)) v = e.value;
                img(r, c) = v;
                body[r * n + c] = layers.front().contains(x, y);
            }
        }
    }

    if (p.tumor && p.tumor->radius > 0.0) {
        const auto& t = *p.tumor;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                const double dx = detail::pixel_x(c, n) - t.center_x;
                const double dy = detail::pixel_y(r, n) - t.center_y;
                if (dx * dx + dy * dy <= t.radius * t.radius) img(r, c) = t.intensity;
            }
        }
    }

    if (p.background_wave && p.background_wave->amplitude != 0.0) {
        const auto& w = *p.background_wave;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                if (!body[r * n + c]) continue;
                const double x = detail::pixel_x(c, n);
                const double y = detail::pixel_y(r, n);
                img(r, c) += w.amplitude * std::sin(std::numbers::pi * w.frequency * (x + 1.0)) *
                             std::cos(std::numbers::pi * w.frequency * y);
            }
        }
    }

    if (p.kind == PhantomKind::XcatLike)
        for (double& v : img.raw()) v = std::round(v);
    return clip_intensity(std::move(img));
}

inline PhantomKind parse_phantom_kind(const std::string& s) {
    if (s == "shepp-logan") return PhantomKind::SheppLogan;
    if (s == "xcat-like") return PhantomKind::XcatLike;
    throw UsageError("unknown phantom kind '" + s + "' (expected shepp-logan or xcat-like)");
}

}  // namespace nltg
