#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "image.hpp"
#include "image_io.hpp"

// Nonlocal operators on a sparse, symmetric patch-similarity graph.
//
// Solver-facing functions (nl_gradient, nl_divergence, nl_laplacian,
// group_norm_sum) use plain sums over pixels and edges; constants of the
// continuum normalization are absorbed into the regularization weights.
// nltv() and the *_normalized norms apply dx = 1/n_pixels to every integral
// over the unit square, which is the scaling under which the bounds
// ||grad_w u|| <= 2||u|| and J(u) <= 2||u|| hold.

namespace nltg {

struct PatchKernel {
    std::size_t patch_radius = 2;
    double a = 1.5;
    double h = 10.0;

    /// Gaussian weights over the (2r+1)^2 patch offsets, summing to 1, row-major.
    std::vector<double> offsets_weights() const {
        const auto r = static_cast<long long>(patch_radius);
        std::vector<double> w;
        double total = 0.0;
        for (long long dy = -r; dy <= r; ++dy)
            for (long long dx = -r; dx <= r; ++dx) {
                const double v = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * a * a));
                w.push_back(v);
                total += v;
            }
        for (double& v : w) v /= total;
        return w;
    }
};

/// Symmetric sparse weights in CSR form; each undirected edge is stored in
/// both directions with identical weight, neighbours sorted by index.
struct WeightGraph {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint32_t> neighbors;
    std::vector<double> weights;
    std::vector<double> sqrt_weights;
    std::vector<std::size_t> reverse;  // slot of (j -> i) for slot (i -> j)
    std::size_t search_radius = 0;
    std::size_t k_best = 0;
    std::size_t k_local = 0;

    std::size_t n_pixels() const { return offsets.size() - 1; }
    std::size_t n_edges() const { return neighbors.size(); }
    std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
    std::size_t max_degree() const {
        std::size_t m = 0;
        for (std::size_t i = 0; i < n_pixels(); ++i) m = std::max(m, degree(i));
        return m;
    }

    /// Builds CSR storage from an adjacency list (must already be symmetric).
    static WeightGraph from_adjacency(std::size_t width, std::size_t height,
                                      std::vector<std::vector<std::pair<std::uint32_t, double>>> adj) {
        WeightGraph g;
        g.width = width;
        g.height = height;
        g.offsets.assign(1, 0);
        for (auto& row : adj) {
            std::sort(row.begin(), row.end());
            for (const auto& [j, w] : row) {
                g.neighbors.push_back(j);
                g.weights.push_back(w);
            }
            g.offsets.push_back(g.neighbors.size());
        }
        g.finalize();
        return g;
    }

    /// Recomputes sqrt weights and reverse slots; checks symmetry.
    void finalize() {
        sqrt_weights.resize(weights.size());
        for (std::size_t e = 0; e < weights.size(); ++e) sqrt_weights[e] = std::sqrt(weights[e]);
        reverse.assign(neighbors.size(), 0);
        for (std::size_t i = 0; i < n_pixels(); ++i) {
            for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
                const std::size_t j = neighbors[e];
                const auto first = neighbors.begin() + static_cast<std::ptrdiff_t>(offsets[j]);
                const auto last = neighbors.begin() + static_cast<std::ptrdiff_t>(offsets[j + 1]);
                const auto it = std::lower_bound(first, last, static_cast<std::uint32_t>(i));
                if (it == last || *it != i) throw FormatError("weight graph is not symmetric");
                const auto back = static_cast<std::size_t>(it - neighbors.begin());
                if (weights[back] != weights[e]) throw FormatError("weight graph weights are not symmetric");
                reverse[e] = back;
            }
        }
    }

    friend bool operator==(const WeightGraph& a, const WeightGraph& b) {
        return a.width == b.width && a.height == b.height && a.offsets == b.offsets &&
               a.neighbors == b.neighbors && a.weights == b.weights;
    }
};

/// Values on the directed edges of a WeightGraph, slot-aligned with it.
struct NLGradientField {
    std::vector<double> values;
};

namespace detail {

inline std::size_t mirror(long long i, std::size_t n) {
    const auto m = static_cast<long long>(n);
    if (m == 1) return 0;
    const long long period = 2 * m - 2;
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < m ? i : period - i);
}

// Squared patch distance <G_a, |f(x+.) - f(y+.)|^2> with mirror extension.
inline double patch_distance(const Image& f, const std::vector<double>& gw, long long radius,
                             std::size_t pi, std::size_t pj) {
    const std::size_t w = f.width();
    const std::size_t h = f.height();
    const auto ri = static_cast<long long>(pi / w), ci = static_cast<long long>(pi % w);
    const auto rj = static_cast<long long>(pj / w), cj = static_cast<long long>(pj % w);
    double sum = 0.0;
    std::size_t t = 0;
    for (long long dy = -radius; dy <= radius; ++dy) {
        const std::size_t yi = mirror(ri + dy, h) * w;
        const std::size_t yj = mirror(rj + dy, h) * w;
        for (long long dx = -radius; dx <= radius; ++dx, ++t) {
            const double diff = f[yi + mirror(ci + dx, w)] - f[yj + mirror(cj + dx, w)];
            sum += gw[t] * diff * diff;
        }
    }
    return sum;
}

inline void check_size(std::size_t n, const WeightGraph& g) {
    if (n != g.n_pixels())
        throw UsageError("size mismatch: " + std::to_string(n) + " values for a graph of " +
                         std::to_string(g.n_pixels()) + " pixels");
}

inline void check_field(const NLGradientField& p, const WeightGraph& g) {
    if (p.values.size() != g.n_edges())
        throw UsageError("gradient field has " + std::to_string(p.values.size()) +
                         " edges, graph has " + std::to_string(g.n_edges()));
}

}  // namespace detail

/// Patch-similarity weight w(i,j) between pixels of f.
inline double patch_weight(const Image& f, const PatchKernel& k, std::size_t i, std::size_t j) {
    const auto gw = k.offsets_weights();
    const double d = detail::patch_distance(f, gw, static_cast<long long>(k.patch_radius), i, j);
    return std::exp(-d / (k.h * k.h));
}

/// Builds the sparsified similarity graph: per pixel, the k_best largest
/// weights in the search window (ties to the smaller index) plus the k_local
/// spatially nearest pixels, symmetrized by union.
inline WeightGraph build_weights(const Image& f, const PatchKernel& k, std::size_t search_radius,
                                 std::size_t k_best, std::size_t k_local) {
    detail::require(f.all_finite(), "reference image has non-finite values");
    detail::require(k.h > 0.0, "filtering parameter h must be positive");
    detail::require(k.a > 0.0, "patch kernel std a must be positive");
    detail::require(k_best + k_local >= 1, "k_best + k_local must be at least 1");
    const auto sr = static_cast<long long>(search_radius);
    const std::size_t window = (2 * search_radius + 1) * (2 * search_radius + 1) - 1;
    detail::require(window >= k_local, "search window smaller than the k_local neighbourhood");

    const std::size_t w = f.width();
    const std::size_t h = f.height();
    const std::size_t n = w * h;
    const auto gw = k.offsets_weights();
    const auto pr = static_cast<long long>(k.patch_radius);
    const double inv_h2 = 1.0 / (k.h * k.h);

    // Window offsets ordered by spatial distance, then raster order.
    std::vector<std::pair<long long, long long>> local_order;
    for (long long dy = -sr; dy <= sr; ++dy)
        for (long long dx = -sr; dx <= sr; ++dx)
            if (dx != 0 || dy != 0) local_order.emplace_back(dy, dx);
    std::stable_sort(local_order.begin(), local_order.end(), [](const auto& a, const auto& b) {
        return a.first * a.first + a.second * a.second < b.first * b.first + b.second * b.second;
    });

    std::vector<std::vector<std::uint32_t>> selected(n);
    std::vector<std::pair<double, std::uint32_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<long long>(i / w), c = static_cast<long long>(i % w);
        cand.clear();
        for (long long dy = -sr; dy <= sr; ++dy) {
            const long long rr = r + dy;
            if (rr < 0 || rr >= static_cast<long long>(h)) continue;
            for (long long dx = -sr; dx <= sr; ++dx) {
                const long long cc = c + dx;
                if (cc < 0 || cc >= static_cast<long long>(w) || (dx == 0 && dy == 0)) continue;
                const auto j = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
                const double wij = std::exp(-detail::patch_distance(f, gw, pr, i, j) * inv_h2);
                cand.emplace_back(wij, static_cast<std::uint32_t>(j));
            }
        }
        const std::size_t keep = std::min(k_best, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                          [](const auto& a, const auto& b) {
                              return a.first > b.first || (a.first == b.first && a.second < b.second);
                          });
        auto& sel = selected[i];
        for (std::size_t q = 0; q < keep; ++q) sel.push_back(cand[q].second);
        std::size_t taken = 0;
        for (const auto& [dy, dx] : local_order) {
            if (taken == k_local) break;
            const long long rr = r + dy, cc = c + dx;
            if (rr < 0 || cc < 0 || rr >= static_cast<long long>(h) || cc >= static_cast<long long>(w))
                continue;
            sel.push_back(static_cast<std::uint32_t>(static_cast<std::size_t>(rr) * w +
                                                     static_cast<std::size_t>(cc)));
            ++taken;
        }
    }

    // Union symmetrization; the weight is recomputed from the canonical
    // (smaller, larger) ordering so both directions hold identical bits.
    std::vector<std::vector<std::uint32_t>> undirected(n);
    for (std::size_t i = 0; i < n; ++i)
        for (auto j : selected[i]) {
            undirected[i].push_back(j);
            undirected[j].push_back(static_cast<std::uint32_t>(i));
        }
    std::vector<std::vector<std::pair<std::uint32_t, double>>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& nb = undirected[i];
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        for (auto j : nb) {
            const std::size_t lo = std::min<std::size_t>(i, j), hi = std::max<std::size_t>(i, j);
            const double wij = std::exp(-detail::patch_distance(f, gw, pr, lo, hi) * inv_h2);
            if (wij > 0.0) adj[i].emplace_back(j, wij);
        }
    }
    // Dropping an underflowed edge on one side drops it on the other, so adj stays symmetric.
    auto g = WeightGraph::from_adjacency(w, h, std::move(adj));
    g.search_radius = search_radius;
    g.k_best = k_best;
    g.k_local = k_local;
    return g;
}

/// 4-neighbour graph with unit weights; the local-difference operator of TV.
inline WeightGraph local_graph(std::size_t width, std::size_t height) {
    std::vector<std::vector<std::pair<std::uint32_t, double>>> adj(width * height);
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            auto& row = adj[r * width + c];
            if (r > 0) row.emplace_back(static_cast<std::uint32_t>((r - 1) * width + c), 1.0);
            if (c > 0) row.emplace_back(static_cast<std::uint32_t>(r * width + c - 1), 1.0);
            if (c + 1 < width) row.emplace_back(static_cast<std::uint32_t>(r * width + c + 1), 1.0);
            if (r + 1 < height) row.emplace_back(static_cast<std::uint32_t>((r + 1) * width + c), 1.0);
        }
    auto g = WeightGraph::from_adjacency(width, height, std::move(adj));
    g.k_local = 4;
    g.search_radius = 1;
    return g;
}

// p_ij = (u_j - u_i) * sqrt(w_ij)
inline void nl_gradient(std::span<const double> u, const WeightGraph& g, std::span<double> out) {
    for (std::size_t i = 0; i < g.n_pixels(); ++i)
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
            out[e] = (u[g.neighbors[e]] - u[i]) * g.sqrt_weights[e];
}

inline NLGradientField nl_gradient(std::span<const double> u, const WeightGraph& g) {
    detail::check_size(u.size(), g);
    NLGradientField p{std::vector<double>(g.n_edges())};
    nl_gradient(u, g, p.values);
    return p;
}

inline NLGradientField nl_gradient(const Image& u, const WeightGraph& g) { return nl_gradient(u.values(), g); }

// div p(i) = sum_j (p_ij - p_ji) sqrt(w_ij), the negative adjoint of nl_gradient.
inline void nl_divergence(std::span<const double> p, const WeightGraph& g, std::span<double> out) {
    for (std::size_t i = 0; i < g.n_pixels(); ++i) {
        double s = 0.0;
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e)
            s += (p[e] - p[g.reverse[e]]) * g.sqrt_weights[e];
        out[i] = s;
    }
}

inline Image nl_divergence(const NLGradientField& p, const WeightGraph& g) {
    detail::check_field(p, g);
    Image out(g.width, g.height);
    nl_divergence(p.values, g, out.values());
    return out;
}

/// div(grad u), i.e. 2 * sum_j w_ij (u_j - u_i); negative semidefinite.
inline Image nl_laplacian(const Image& u, const WeightGraph& g) {
    return nl_divergence(nl_gradient(u, g), g);
}

/// Sum over pixels of the l2 norm of each pixel's outgoing edge values.
inline double group_norm_sum(std::span<const double> p, const WeightGraph& g) {
    double total = 0.0;
    for (std::size_t i = 0; i < g.n_pixels(); ++i) {
        double s = 0.0;
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) s += p[e] * p[e];
        total += std::sqrt(s);
    }
    return total;
}

/// Unnormalized NLTV: sum_i (sum_j |u_i - u_j|^2 w_ij)^(1/2).
inline double nltv_sum(std::span<const double> u, const WeightGraph& g) {
    double total = 0.0;
    for (std::size_t i = 0; i < g.n_pixels(); ++i) {
        double s = 0.0;
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
            const double d = u[i] - u[g.neighbors[e]];
            s += d * d * g.weights[e];
        }
        total += std::sqrt(s);
    }
    return total;
}

/// J_NLTV on the unit square: sum_i (sum_j |u_i - u_j|^2 w_ij dx)^(1/2) dx.
inline double nltv(const Image& u, const WeightGraph& g) {
    detail::check_size(u.size(), g);
    const double dx = 1.0 / static_cast<double>(g.n_pixels());
    return std::sqrt(dx) * dx * nltv_sum(u.values(), g);
}

inline double l2_norm_normalized(const Image& u) {
    return std::sqrt(vec::dot(u.values(), u.values()) / static_cast<double>(u.size()));
}

/// ||p||_{L2(Omega x Omega)} with dx^2 per directed edge.
inline double field_norm_normalized(const NLGradientField& p, const WeightGraph& g) {
    const double dx = 1.0 / static_cast<double>(g.n_pixels());
    return std::sqrt(vec::dot(p.values, p.values)) * dx;
}

inline constexpr std::string_view kGraphMagic = "NLTG-WGT1\n";

inline void write_graph(std::ostream& os, const WeightGraph& g) {
    os << kGraphMagic << g.n_pixels() << '\n';
    for (std::size_t i = 0; i < g.n_pixels(); ++i) {
        io::write_u32(os, static_cast<std::uint32_t>(g.degree(i)));
        for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
            io::write_u32(os, g.neighbors[e]);
            io::write_f64(os, g.weights[e]);
        }
    }
    if (!os) throw FormatError("graph write failed");
}

/// The file carries no grid shape; width and height must multiply to n_pixels.
inline WeightGraph read_graph(std::istream& is, std::size_t width, std::size_t height) {
    io::expect_magic(is, kGraphMagic);
    std::istringstream header(io::read_header_line(is));
    long long n = -1;
    if (!(header >> n) || n <= 0) throw FormatError("malformed graph header");
    if (static_cast<std::size_t>(n) != width * height)
        throw FormatError("graph has " + std::to_string(n) + " pixels, expected " +
                          std::to_string(width * height));
    WeightGraph g;
    g.width = width;
    g.height = height;
    g.offsets.assign(1, 0);
    for (long long i = 0; i < n; ++i) {
        const std::uint32_t deg = io::read_u32(is);
        std::uint32_t prev = 0;
        for (std::uint32_t q = 0; q < deg; ++q) {
            const std::uint32_t j = io::read_u32(is);
            const double w = io::read_f64(is);
            if (j >= n || (q > 0 && j <= prev)) throw FormatError("graph neighbours out of range or unsorted");
            if (!(w > 0.0 && w <= 1.0)) throw FormatError("graph weight outside (0, 1]");
            prev = j;
            g.neighbors.push_back(j);
            g.weights.push_back(w);
        }
        g.offsets.push_back(g.neighbors.size());
    }
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after graph");
    g.finalize();
    return g;
}

inline void write_graph(const std::string& path, const WeightGraph& g) {
    auto os = io::open_out(path);
    write_graph(os, g);
}

inline WeightGraph read_graph(const std::string& path, std::size_t width, std::size_t height) {
    auto is = io::open_in(path);
    return read_graph(is, width, height);
}

}  // namespace nltg
