#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image.hpp"

namespace nltg {

namespace detail {
inline void check_same_shape(const Image& a, const Image& b) {
    if (!a.same_shape(b))
        throw UsageError("image dimensions differ: " + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()));
}
}  // namespace detail

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
inline double psnr(const Image& a, const Image& b, double peak = 255.0) {
    detail::check_same_shape(a, b);
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(a.size());
    return 10.0 * std::log10(peak * peak / mse);
}

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 255.0;
};

/// Mean SSIM over all fully-contained Gaussian windows.
inline double ssim(const Image& a, const Image& b, const SsimParams& prm = {}) {
    detail::check_same_shape(a, b);
    const std::size_t win = prm.window;
    if (a.width() < win || a.height() < win)
        throw UsageError("ssim needs images at least " + std::to_string(win) + " pixels per side");

    std::vector<double> g(win);
    double total = 0.0;
    const double mid = 0.5 * static_cast<double>(win - 1);
    for (std::size_t k = 0; k < win; ++k) {
        const double d = static_cast<double>(k) - mid;
        g[k] = std::exp(-d * d / (2.0 * prm.sigma * prm.sigma));
        total += g[k];
    }
    for (double& v : g) v /= total;

    const double c1 = (prm.k1 * prm.dynamic_range) * (prm.k1 * prm.dynamic_range);
    const double c2 = (prm.k2 * prm.dynamic_range) * (prm.k2 * prm.dynamic_range);
    const std::size_t ow = a.width() - win + 1;
    const std::size_t oh = a.height() - win + 1;

    double acc = 0.0;
    for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t y = 0; y < win; ++y) {
                for (std::size_t x = 0; x < win; ++x) {
                    const double w = g[y] * g[x];
                    const double va = a(r + y, c + x);
                    const double vb = b(r + y, c + x);
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            const double var_a = saa - ma * ma;
            const double var_b = sbb - mb * mb;
            const double cov = sab - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
    }
    return acc / static_cast<double>(ow * oh);
}

struct QualityReport {
    std::string method;
    std::string sinogram_noise;
    std::string ref_noise;
    double psnr = 0.0;
    double ssim = 0.0;
};

inline void write_quality_header(std::ostream& os) { os << "method,sinogram_noise,ref_noise,psnr,ssim\n"; }

inline void write_quality_row(std::ostream& os, const QualityReport& q) {
    const auto old = os.precision(6);
    os << q.method << ',' << q.sinogram_noise << ',' << q.ref_noise << ',' << std::fixed << q.psnr << ','
       << q.ssim << '\n';
    os.unsetf(std::ios::fixed);
    os.precision(old);
}

inline QualityReport assess(const Image& estimate, const Image& truth, std::string method,
                            std::string sinogram_noise, std::string ref_noise) {
    return {std::move(method), std::move(sinogram_noise), std::move(ref_noise), psnr(estimate, truth),
            ssim(estimate, truth)};
}

}  // namespace nltg
