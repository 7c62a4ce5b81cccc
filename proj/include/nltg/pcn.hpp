#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gauss_prior.hpp"
#include "image.hpp"
#include "map_solver.hpp"
#include "nonlocal.hpp"
#include "radon.hpp"

// Preconditioned Crank-Nicolson sampling of the posterior
//   exp(-Phi(u) - lambda J(u)) N(0, C0 / gamma)
// with streaming per-pixel statistics. J is the unnormalized group-norm sum,
// the same functional the MAP solver minimizes.

namespace nltg {

struct PcnConfig {
    double beta = 0.05;
    std::size_t n_samples = 100000;
    std::size_t n_burnin = 5000;
    std::uint64_t seed = 1;
    double target_acceptance = 0.25;
    bool adapt_burnin = true;
    std::size_t thin = 1;
    PriorKind prior = PriorKind::NLTG;
    double lambda = 1.0;
    double sigma = 5.0;
    double gaussian_weight = 1.0;

    void validate() const {
        detail::require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
        detail::require(n_samples >= 1, "n_samples must be at least 1");
        detail::require(thin >= 1, "thin must be at least 1");
        detail::require(target_acceptance > 0.0 && target_acceptance < 1.0, "target acceptance must lie in (0, 1)");
        detail::require(prior == PriorKind::NLTG || prior == PriorKind::TG, "pCN supports the nltg and tg priors");
        detail::require(lambda >= 0.0, "lambda must be non-negative");
        detail::require(sigma > 0.0, "sigma must be positive");
        detail::require(gaussian_weight > 0.0, "gaussian weight must be positive");
    }
};

inline constexpr double kHistogramLow = -64.0;
inline constexpr double kHistogramHigh = 319.0;
inline constexpr std::size_t kHistogramBins = 4096;
inline constexpr std::size_t kAdaptWindow = 500;

/// Welford mean/M2, running min/max and a fixed-bin histogram per pixel.
class ChainStats {
  public:
    ChainStats() = default;
    ChainStats(std::size_t width, std::size_t height)
        : width_(width), height_(height), mean_(width * height, 0.0), m2_(width * height, 0.0),
          min_(width * height, std::numeric_limits<double>::infinity()),
          max_(width * height, -std::numeric_limits<double>::infinity()),
          hist_(width * height * kHistogramBins, 0) {}

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t n_pixels() const { return mean_.size(); }
    std::uint64_t count() const { return count_; }
    std::uint64_t accepted() const { return accepted_; }
    std::uint64_t proposed() const { return proposed_; }
    double acceptance_rate() const {
        return proposed_ ? static_cast<double>(accepted_) / static_cast<double>(proposed_) : 0.0;
    }
    std::span<const double> mean() const { return mean_; }
    std::span<const double> m2() const { return m2_; }

    static std::size_t bin_of(double v) {
        const double t = (v - kHistogramLow) / (kHistogramHigh - kHistogramLow) * static_cast<double>(kHistogramBins);
        if (!(t > 0.0)) return 0;
        return std::min(static_cast<std::size_t>(t), kHistogramBins - 1);
    }

    void add(std::span<const double> u) {
        if (u.size() != n_pixels()) throw UsageError("sample size does not match chain statistics");
        ++count_;
        const double inv = 1.0 / static_cast<double>(count_);
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double delta = u[i] - mean_[i];
            mean_[i] += delta * inv;
            m2_[i] += delta * (u[i] - mean_[i]);
            min_[i] = std::min(min_[i], u[i]);
            max_[i] = std::max(max_[i], u[i]);
            ++hist_[i * kHistogramBins + bin_of(u[i])];
        }
    }

    void record_proposal(bool accepted) {
        ++proposed_;
        if (accepted) ++accepted_;
    }

    /// Combine with an independent chain (pairwise mean/M2 update, histogram sum).
    void merge(const ChainStats& other) {
        if (other.n_pixels() != n_pixels()) throw UsageError("cannot merge chain statistics of different sizes");
        const double na = static_cast<double>(count_);
        const double nb = static_cast<double>(other.count_);
        const double n = na + nb;
        if (n > 0.0) {
            for (std::size_t i = 0; i < mean_.size(); ++i) {
                const double delta = other.mean_[i] - mean_[i];
                mean_[i] += delta * nb / n;
                m2_[i] += other.m2_[i] + delta * delta * na * nb / n;
            }
        }
        for (std::size_t i = 0; i < min_.size(); ++i) {
            min_[i] = std::min(min_[i], other.min_[i]);
            max_[i] = std::max(max_[i], other.max_[i]);
        }
        for (std::size_t k = 0; k < hist_.size(); ++k) hist_[k] += other.hist_[k];
        count_ += other.count_;
        accepted_ += other.accepted_;
        proposed_ += other.proposed_;
    }

    /// Unbiased per-pixel sample variance.
    std::vector<double> variance() const {
        require_samples();
        std::vector<double> v(m2_.size());
        const double d = static_cast<double>(count_ - 1);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / d;
        return v;
    }

    /// Quantile of pixel i from its histogram, linear within the bin and
    /// clamped to the observed range.
    double quantile(std::size_t i, double q) const {
        return std::clamp(histogram_quantile(i, q), min_[i], max_[i]);
    }

    bool operator==(const ChainStats&) const = default;

  private:
    double histogram_quantile(std::size_t i, double q) const {
        require_samples();
        detail::require(q >= 0.0 && q <= 1.0, "quantile level must lie in [0, 1]");
        const double width = (kHistogramHigh - kHistogramLow) / static_cast<double>(kHistogramBins);
        const double target = q * static_cast<double>(count_);
        const std::uint32_t* h = hist_.data() + i * kHistogramBins;
        double cum = 0.0;
        for (std::size_t b = 0; b < kHistogramBins; ++b) {
            if (h[b] == 0) continue;
            const double next = cum + h[b];
            if (next >= target) {
                const double frac = (target - cum) / h[b];
                return kHistogramLow + (static_cast<double>(b) + frac) * width;
            }
            cum = next;
        }
        return kHistogramHigh;
    }

    void require_samples() const {
        if (count_ < 2) throw UsageError("chain statistics need at least 2 accumulated samples");
    }

    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::uint64_t count_ = 0;
    std::uint64_t accepted_ = 0;
    std::uint64_t proposed_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
    std::vector<double> min_;
    std::vector<double> max_;
    std::vector<std::uint32_t> hist_;
};

/// v = sqrt(1 - beta^2) u + beta w, w ~ N(0, C0 / gamma).
inline std::vector<double> propose(std::span<const double> u, double beta, const PriorCovariance& cov,
                                   std::mt19937_64& rng, double gaussian_weight = 1.0) {
    detail::require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
    if (u.size() != cov.n_pixels()) throw UsageError("state size does not match covariance");
    const auto w = cov.sample(rng);
    const double keep = std::sqrt(1.0 - beta * beta);
    const double scale = beta / std::sqrt(gaussian_weight);
    std::vector<double> v(u.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = keep * u[i] + scale * w[i];
    return v;
}

inline Image propose(const Image& u, double beta, const PriorCovariance& cov, std::mt19937_64& rng,
                     double gaussian_weight = 1.0) {
    return Image(u.width(), u.height(), propose(u.values(), beta, cov, rng, gaussian_weight));
}

/// min(1, exp(potential_u - potential_v)).
inline double acceptance(double potential_u, double potential_v) {
    if (!std::isfinite(potential_u) || !std::isfinite(potential_v))
        throw NumericalError("non-finite potential in acceptance test");
    const double e = potential_u - potential_v;
    return e >= 0.0 ? 1.0 : std::exp(e);
}

using Potential = std::function<double(std::span<const double>)>;

struct DiagnosticRow {
    std::size_t step = 0;
    double acceptance_window = 0.0;
    double potential = 0.0;
    double beta = 0.0;
};

struct ChainResult {
    ChainStats stats;
    std::vector<DiagnosticRow> diagnostics;  // one row per window of kAdaptWindow steps
    double final_beta = 0.0;
};

/// Runs n_burnin + n_samples pCN steps for an arbitrary potential. During
/// burn-in beta is scaled by 1.1 every kAdaptWindow steps towards the target
/// acceptance when adapt_burnin is set.
inline ChainResult run_chain(const Potential& potential, const PriorCovariance& cov, const PcnConfig& cfg,
                             const Image& init) {
    cfg.validate();
    if (init.size() != cov.n_pixels()) throw UsageError("initial state does not match covariance size");
    if (!init.all_finite()) throw NumericalError("initial state has non-finite values");
    std::vector<double> u(init.raw());
    double pu = potential(u);
    if (!std::isfinite(pu)) throw NumericalError("potential is not finite at the initial state");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    ChainResult res{ChainStats(init.width(), init.height()), {}, cfg.beta};
    double beta = cfg.beta;
    std::size_t window_accepted = 0;
    const std::size_t total = cfg.n_burnin + cfg.n_samples;
    for (std::size_t step = 1; step <= total; ++step) {
        auto v = propose(u, beta, cov, rng, cfg.gaussian_weight);
        const double pv = potential(v);
        const double a = acceptance(pu, pv);
        const bool accept = uniform(rng) < a;
        if (accept) {
            u.swap(v);
            pu = pv;
            ++window_accepted;
        }
        const bool burning = step <= cfg.n_burnin;
        if (!burning) {
            res.stats.record_proposal(accept);
            if ((step - cfg.n_burnin) % cfg.thin == 0) res.stats.add(u);
        }
        if (step % kAdaptWindow == 0 || step == total) {
            const std::size_t len = step % kAdaptWindow == 0 ? kAdaptWindow : step % kAdaptWindow;
            const double rate = static_cast<double>(window_accepted) / static_cast<double>(len);
            res.diagnostics.push_back({step, rate, pu, beta});
            if (burning && cfg.adapt_burnin && len == kAdaptWindow)
                beta = rate > cfg.target_acceptance ? std::min(1.0, beta * 1.1) : beta / 1.1;
            window_accepted = 0;
        }
    }
    res.final_beta = beta;
    return res;
}

/// Potential Phi(u) + lambda J(u) on the graph.
inline Potential posterior_potential(const Sinogram& y, const WeightGraph& graph, double lambda, double sigma) {
    return [&y, &graph, lambda, sigma](std::span<const double> u) {
        const Image img(graph.width, graph.height, std::vector<double>(u.begin(), u.end()));
        return data_fidelity(img, y, sigma) + lambda * nltv_sum(u, graph);
    };
}

/// Chain for the NLTG or TG posterior. TG uses the 4-neighbour unit-weight graph.
inline ChainResult run_chain(const Sinogram& y, const PcnConfig& cfg, const WeightGraph& graph,
                             const PriorCovariance& cov, const Image& init) {
    cfg.validate();
    std::optional<WeightGraph> local;
    if (cfg.prior == PriorKind::TG) local = local_graph(init.width(), init.height());
    const WeightGraph& g = local ? *local : graph;
    detail::check_size(init.size(), g);
    return run_chain(posterior_potential(y, g, cfg.lambda, cfg.sigma), cov, cfg, init);
}

inline Image cm_image(const ChainStats& stats) {
    if (stats.count() < 2) throw UsageError("chain statistics need at least 2 accumulated samples");
    return Image(stats.width(), stats.height(), std::vector<double>(stats.mean().begin(), stats.mean().end()));
}

/// Per-pixel width of the central credible interval.
inline Image ci_map(const ChainStats& stats, double level = 0.95) {
    detail::require(level > 0.0 && level < 1.0, "credible level must lie in (0, 1)");
    if (stats.count() < 2) throw UsageError("chain statistics need at least 2 accumulated samples");
    const double lo = 0.5 * (1.0 - level);
    Image out(stats.width(), stats.height());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stats.quantile(i, 1.0 - lo) - stats.quantile(i, lo);
    return out;
}

inline void write_diagnostics_csv(std::ostream& os, const std::vector<DiagnosticRow>& rows) {
    os << "step,acceptance_window,potential,beta\n";
    const auto old = os.precision(17);
    for (const auto& r : rows) os << r.step << ',' << r.acceptance_window << ',' << r.potential << ',' << r.beta << '\n';
    os.precision(old);
}

}  // namespace nltg
