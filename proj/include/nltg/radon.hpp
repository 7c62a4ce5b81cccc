#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "errors.hpp"
#include "image.hpp"
#include "image_io.hpp"

namespace nltg {

// Parallel-beam geometry. The image occupies [-side/2, side/2]^2 in image
// units with pixel_size = 1/image_side, i.e. the unit square. Angles are
// k*pi/n_angles; detector bins are centred on s = 0.
struct ScanGeometry {
    std::size_t n_angles = 50;
    std::size_t n_detectors = 0;
    double detector_spacing = 0.0;
    double detector_extent = std::numeric_limits<double>::infinity();  // r of S_r
    std::size_t image_side = 0;

    /// Default geometry: detector bins one pixel wide, enough of them to cover
    /// the image diagonal, and no truncation.
    static ScanGeometry for_image(std::size_t side, std::size_t n_angles) {
        ScanGeometry g;
        g.image_side = side;
        g.n_angles = n_angles;
        g.n_detectors = static_cast<std::size_t>(std::ceil(std::numbers::sqrt2 * side));
        g.detector_spacing = 1.0 / static_cast<double>(side);
        g.detector_extent = g.full_extent();
        return g;
    }

    double pixel_size() const { return 1.0 / static_cast<double>(image_side); }
    /// Half-width of the physical detector array.
    double full_extent() const { return 0.5 * detector_spacing * static_cast<double>(n_detectors); }
    double angle(std::size_t k) const {
        return std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_angles);
    }
    double offset(std::size_t d) const {
        return (static_cast<double>(d) - 0.5 * static_cast<double>(n_detectors - 1)) *
               detector_spacing;
    }
    std::size_t size() const { return n_angles * n_detectors; }

    void validate() const {
        detail::require(n_angles >= 1, "geometry needs at least one angle");
        detail::require(n_detectors >= 1, "geometry needs at least one detector");
        detail::require(image_side >= 1, "geometry image side must be positive");
        detail::require(detector_spacing > 0.0, "detector spacing must be positive");
        detail::require(detector_extent >= 0.0, "detector extent must be non-negative");
    }
};

/// Projection data indexed (angle, detector), row-major by angle. mask marks
/// observed entries; unobserved entries hold zero.
struct Sinogram {
    ScanGeometry geometry;
    std::vector<double> data;
    std::vector<std::uint8_t> mask;

    explicit Sinogram(const ScanGeometry& g) : geometry(g), data(g.size(), 0.0), mask(g.size(), 1) {}

    double& at(std::size_t angle, std::size_t det) { return data[angle * geometry.n_detectors + det]; }
    double at(std::size_t angle, std::size_t det) const {
        return data[angle * geometry.n_detectors + det];
    }
    std::size_t observed() const {
        std::size_t n = 0;
        for (auto m : mask) n += m;
        return n;
    }
};

/// Restricts data to S_r = {|s| <= r} using geometry.detector_extent.
inline Sinogram apply_mask(Sinogram y) {
    const auto& g = y.geometry;
    for (std::size_t k = 0; k < g.n_angles; ++k) {
        for (std::size_t d = 0; d < g.n_detectors; ++d) {
            const std::size_t i = k * g.n_detectors + d;
            if (std::abs(g.offset(d)) > g.detector_extent) {
                y.mask[i] = 0;
                y.data[i] = 0.0;
            } else if (!y.mask[i]) {
                y.data[i] = 0.0;
            }
        }
    }
    return y;
}

namespace detail {

// Visits every (ray, pixel, weight) triple of Joseph's method: the ray is
// sampled once per row (or column) along its dominant axis with linear
// interpolation across the other axis; weight includes the path length per
// step. visit(ray_index, pixel_index, weight); end_ray(ray_index) follows the
// last visit of each ray.
template <typename Visit, typename EndRay>
void joseph_rays(const ScanGeometry& g, std::size_t angle, Visit&& visit, EndRay&& end_ray) {
    const std::size_t n = g.image_side;
    const double ps = g.pixel_size();
    const double half = 0.5 * static_cast<double>(n - 1);
    const double theta = g.angle(angle);
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    // Points on the ray: t*(c, s) + z*(-s, c). Along the dominant axis the
    // fractional transverse index is affine in the line index.
    const bool row_major = std::abs(c) >= std::abs(s);
    const double step = ps / (row_major ? std::abs(c) : std::abs(s));
    const double slope = row_major ? s / c : c / s;
    const double top = static_cast<double>(n) - 1.0;

    for (std::size_t det = 0; det < g.n_detectors; ++det) {
        const double t = g.offset(det);
        const std::size_t ray = angle * g.n_detectors + det;
        // row-major: x(line) = t/c - y(line) s/c, y(line) = (half - line) ps
        // column-major: y(line) = t/s - x(line) c/s, x(line) = (line - half) ps
        const double base = row_major ? t / (c * ps) - half * slope + half
                                      : half - t / (s * ps) - half * slope;
        const double inc = slope;
        // Restrict to lines whose sample lands in (-1, n).
        double lo = 0.0, hi = top;
        if (inc != 0.0) {
            const double a = (-1.0 - base) / inc;
            const double b = (static_cast<double>(n) - base) / inc;
            lo = std::max(lo, std::ceil(std::min(a, b)));
            hi = std::min(hi, std::floor(std::max(a, b)));
        } else if (base <= -1.0 || base >= static_cast<double>(n)) {
            end_ray(ray);
            continue;
        }
        if (lo > hi) {
            end_ray(ray);
            continue;
        }
        for (auto line = static_cast<std::size_t>(lo); line <= static_cast<std::size_t>(hi); ++line) {
            const double frac = base + inc * static_cast<double>(line);
            const double fl = std::floor(frac);
            const double w1 = frac - fl;
            const double w0 = 1.0 - w1;
            const auto i0 = static_cast<long long>(fl);
            if (row_major) {
                if (i0 >= 0 && i0 < static_cast<long long>(n)) visit(ray, line * n + static_cast<std::size_t>(i0), step * w0);
                if (i0 + 1 >= 0 && i0 + 1 < static_cast<long long>(n)) visit(ray, line * n + static_cast<std::size_t>(i0 + 1), step * w1);
            } else {
                if (i0 >= 0 && i0 < static_cast<long long>(n)) visit(ray, static_cast<std::size_t>(i0) * n + line, step * w0);
                if (i0 + 1 >= 0 && i0 + 1 < static_cast<long long>(n)) visit(ray, static_cast<std::size_t>(i0 + 1) * n + line, step * w1);
            }
        }
        end_ray(ray);
    }
}

inline void check_image(const Image& u, const ScanGeometry& g) {
    if (u.width() != g.image_side || u.height() != g.image_side)
        throw UsageError("image is " + std::to_string(u.width()) + "x" + std::to_string(u.height()) +
                         " but geometry expects side " + std::to_string(g.image_side));
}

}  // namespace detail

/// Discrete Radon transform A: Joseph ray sums, then restriction to S_r.
inline Sinogram forward(const Image& u, const ScanGeometry& g) {
    g.validate();
    detail::check_image(u, g);
    Sinogram y(g);
    const auto& src = u.raw();
    double acc = 0.0;
    for (std::size_t k = 0; k < g.n_angles; ++k)
        detail::joseph_rays(
            g, k, [&](std::size_t, std::size_t pix, double w) { acc += w * src[pix]; },
            [&](std::size_t ray) {
                y.data[ray] = acc;
                acc = 0.0;
            });
    return apply_mask(std::move(y));
}

/// Exact transpose of forward(); masked entries contribute nothing.
inline Image adjoint(const Sinogram& y) {
    const auto& g = y.geometry;
    g.validate();
    Image u = Image::square(g.image_side);
    auto& dst = u.raw();
    for (std::size_t k = 0; k < g.n_angles; ++k)
        detail::joseph_rays(
            g, k,
            [&](std::size_t ray, std::size_t pix, double w) {
                if (y.mask[ray]) dst[pix] += w * y.data[ray];
            },
            [](std::size_t) {});
    return u;
}

enum class FbpFilter { RamLak, Hann };

inline FbpFilter parse_fbp_filter(const std::string& s) {
    if (s == "ram-lak") return FbpFilter::RamLak;
    if (s == "hann") return FbpFilter::Hann;
    throw UsageError("unknown filter '" + s + "' (expected ram-lak or hann)");
}

/// Filtered back-projection: band-limited ramp filter applied per angle in the
/// frequency domain (optionally Hann-windowed), then linear-interpolated
/// back-projection weighted by pi/n_angles. Output is not clipped.
inline Image fbp(const Sinogram& y, FbpFilter filter = FbpFilter::RamLak) {
    const auto& g = y.geometry;
    g.validate();
    if (g.n_detectors < 2) throw UsageError("fbp needs at least two detector bins");
    const std::size_t nd = g.n_detectors;
    const double tau = g.detector_spacing;

    std::size_t padded = 64;
    while (padded < 2 * nd) padded *= 2;

    // Spatial Ram-Lak kernel sampled at spacing tau, wrapped for circular convolution.
    std::vector<double> kernel(padded, 0.0);
    kernel[0] = 1.0 / (4.0 * tau * tau);
    for (std::size_t k = 1; k < padded / 2; ++k) {
        if (k % 2 == 1) {
            const double v = -1.0 / (std::numbers::pi * std::numbers::pi * double(k * k) * tau * tau);
            kernel[k] = v;
            kernel[padded - k] = v;
        }
    }
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> response;
    fft.fwd(response, kernel);
    for (std::size_t f = 0; f < padded; ++f) {
        double r = response[f].real();
        if (filter == FbpFilter::Hann) {
            const double nu = static_cast<double>(std::min(f, padded - f)) / static_cast<double>(padded);
            r *= 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * nu));
        }
        response[f] = r;
    }

    std::vector<double> filtered(g.size(), 0.0);
    std::vector<double> row(padded);
    std::vector<std::complex<double>> spectrum;
    std::vector<double> back;
    for (std::size_t k = 0; k < g.n_angles; ++k) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t d = 0; d < nd; ++d) {
            const std::size_t i = k * nd + d;
            row[d] = y.mask[i] ? y.data[i] : 0.0;
        }
        fft.fwd(spectrum, row);
        for (std::size_t f = 0; f < padded; ++f) spectrum[f] *= response[f];
        fft.inv(back, spectrum);
        for (std::size_t d = 0; d < nd; ++d) filtered[k * nd + d] = tau * back[d];
    }

    const std::size_t n = g.image_side;
    const double ps = g.pixel_size();
    const double half = 0.5 * static_cast<double>(n - 1);
    const double det_half = 0.5 * static_cast<double>(nd - 1);
    const double scale = std::numbers::pi / static_cast<double>(g.n_angles);
    Image u = Image::square(n);
    for (std::size_t k = 0; k < g.n_angles; ++k) {
        const double c = std::cos(g.angle(k));
        const double s = std::sin(g.angle(k));
        const double* q = filtered.data() + k * nd;
        for (std::size_t r = 0; r < n; ++r) {
            const double yy = (half - static_cast<double>(r)) * ps;
            for (std::size_t col = 0; col < n; ++col) {
                const double xx = (static_cast<double>(col) - half) * ps;
                const double pos = (xx * c + yy * s) / tau + det_half;
                const double fl = std::floor(pos);
                if (fl < 0.0 || fl >= static_cast<double>(nd - 1)) continue;
                const auto i0 = static_cast<std::size_t>(fl);
                const double w = pos - fl;
                u(r, col) += scale * ((1.0 - w) * q[i0] + w * q[i0 + 1]);
            }
        }
    }
    return u;
}

inline constexpr std::string_view kSinogramMagic = "NLTG-SIN1\n";

/// Writes the sinogram. Geometry fields other than angle/detector counts and r
/// are not stored; readers rebuild them from the image side.
inline void write_sinogram(std::ostream& os, const Sinogram& y) {
    const auto& g = y.geometry;
    std::ostringstream r;
    r.precision(17);
    r << g.detector_extent;
    os << kSinogramMagic << g.n_angles << ' ' << g.n_detectors << ' ' << r.str() << '\n';
    for (double v : y.data) io::write_f64(os, v);
    std::vector<std::uint8_t> packed((y.mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < y.mask.size(); ++i)
        if (y.mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    os.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    if (!os) throw FormatError("sinogram write failed");
}

inline Sinogram read_sinogram(std::istream& is, std::size_t image_side) {
    io::expect_magic(is, kSinogramMagic);
    std::istringstream header(io::read_header_line(is));
    long long na = -1, nd = -1;
    std::string rtext;
    if (!(header >> na >> nd >> rtext) || na <= 0 || nd <= 0)
        throw FormatError("malformed sinogram header");
    double r = 0.0;
    try {
        r = std::stod(rtext);
    } catch (const std::exception&) {
        throw FormatError("malformed detector extent '" + rtext + "'");
    }
    ScanGeometry g = ScanGeometry::for_image(image_side, static_cast<std::size_t>(na));
    g.n_detectors = static_cast<std::size_t>(nd);
    g.detector_extent = r;
    Sinogram y(g);
    for (double& v : y.data) v = io::read_f64(is);
    std::vector<std::uint8_t> packed((y.mask.size() + 7) / 8);
    if (!is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size())))
        throw FormatError("truncated sinogram mask");
    for (std::size_t i = 0; i < y.mask.size(); ++i) y.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after sinogram");
    return y;
}

inline void write_sinogram(const std::string& path, const Sinogram& y) {
    auto os = io::open_out(path);
    write_sinogram(os, y);
}

inline Sinogram read_sinogram(const std::string& path, std::size_t image_side) {
    auto is = io::open_in(path);
    return read_sinogram(is, image_side);
}

}  // namespace nltg
