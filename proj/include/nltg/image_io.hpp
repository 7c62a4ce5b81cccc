#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>

#include "errors.hpp"
#include "image.hpp"

namespace nltg {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts are not supported");

inline constexpr std::string_view kImageMagic = "NLTG-IMG1\n";

namespace io {

inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline double read_f64(std::istream& is) {
    double v = 0.0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated payload");
    return v;
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated payload");
    return v;
}

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
        throw FormatError("bad magic, expected " +
                          std::string(magic.substr(0, magic.size() - 1)));
}

inline std::string read_header_line(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("missing header line");
    return line;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UsageError("cannot open '" + path + "' for writing");
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw UsageError("cannot open '" + path + "' for reading");
    return is;
}

}  // namespace io

inline void write_image(std::ostream& os, const Image& img) {
    if (!img.all_finite()) throw NumericalError("refusing to write non-finite image values");
    os << kImageMagic << img.width() << ' ' << img.height() << '\n';
    for (double v : img.values()) io::write_f64(os, v);
    if (!os) throw FormatError("image write failed");
}

inline Image read_image(std::istream& is) {
    io::expect_magic(is, kImageMagic);
    std::istringstream header(io::read_header_line(is));
    long long w = -1, h = -1;
    if (!(header >> w >> h) || w <= 0 || h <= 0) throw FormatError("malformed image dimensions");
    std::vector<double> data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (double& v : data) v = io::read_f64(is);
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after image payload (dimension mismatch)");
    return Image(static_cast<std::size_t>(w), static_cast<std::size_t>(h), std::move(data));
}

inline void write_image(const std::string& path, const Image& img) {
    auto os = io::open_out(path);
    write_image(os, img);
}

inline Image read_image(const std::string& path) {
    auto is = io::open_in(path);
    return read_image(is);
}

/// Binary P5 export, maxval 255. Values are clipped then rounded half away from zero.
inline void write_pgm(std::ostream& os, const Image& img) {
    if (!img.all_finite()) throw NumericalError("refusing to export non-finite image values");
    os << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    const Image clipped = clip_intensity(img);
    for (double v : clipped.values())
        os.put(static_cast<char>(static_cast<unsigned char>(std::round(v))));
    if (!os) throw FormatError("pgm write failed");
}

inline void write_pgm(const std::string& path, const Image& img) {
    auto os = io::open_out(path);
    write_pgm(os, img);
}

}  // namespace nltg
