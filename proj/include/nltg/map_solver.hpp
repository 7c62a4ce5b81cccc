#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gauss_prior.hpp"
#include "image.hpp"
#include "nonlocal.hpp"
#include "radon.hpp"

namespace nltg {

enum class PriorKind { NLTG, NLTV, TG, TV };

inline std::string to_string(PriorKind p) {
    switch (p) {
        case PriorKind::NLTG: return "NLTG";
        case PriorKind::NLTV: return "NLTV";
        case PriorKind::TG: return "TG";
        case PriorKind::TV: return "TV";
    }
    return "?";
}

inline PriorKind parse_prior(const std::string& s) {
    if (s == "nltg") return PriorKind::NLTG;
    if (s == "nltv") return PriorKind::NLTV;
    if (s == "tg") return PriorKind::TG;
    if (s == "tv") return PriorKind::TV;
    throw UsageError("unknown prior '" + s + "' (expected nltg, nltv, tg or tv)");
}

inline bool uses_gaussian(PriorKind p) { return p == PriorKind::NLTG || p == PriorKind::TG; }
inline bool uses_nonlocal(PriorKind p) { return p == PriorKind::NLTG || p == PriorKind::NLTV; }

struct MapConfig {
    double lambda = 1.0;
    double mu = 1.0;
    std::size_t outer_iters = 80;
    double cg_tol = 1e-8;
    std::size_t cg_max_iters = 200;
    PriorKind prior = PriorKind::NLTG;
    double sigma = 5.0;
    // Weight gamma on 1/2 ||u||_K^2, i.e. the Gaussian reference measure is N(0, C0 / gamma).
    double gaussian_weight = 1.0;

    void validate() const {
        detail::require(gaussian_weight > 0.0, "gaussian weight must be positive");
        detail::require(lambda >= 0.0, "lambda must be non-negative");
        detail::require(mu > 0.0, "mu must be positive");
        detail::require(outer_iters >= 1, "outer_iters must be at least 1");
        detail::require(sigma > 0.0, "sigma must be positive");
    }
};

/// Phi(u) = ||mask (Au - y)||^2 / (2 sigma^2).
inline double data_fidelity(const Image& u, const Sinogram& y, double sigma) {
    detail::require(sigma > 0.0, "sigma must be positive");
    const Sinogram au = forward(u, y.geometry);
    if (au.data.size() != y.data.size()) throw UsageError("sinogram size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        if (!y.mask[i]) continue;
        const double r = au.data[i] - y.data[i];
        s += r * r;
    }
    return s / (2.0 * sigma * sigma);
}

/// Prox of t*||.||_2 on one group: max(||d|| - t, 0) d / ||d||, with 0/0 = 0.
inline void shrink(std::span<double> group, double t) {
    double n2 = 0.0;
    for (double v : group) n2 += v * v;
    const double n = std::sqrt(n2);
    const double scale = n > t ? (n - t) / n : 0.0;
    for (double& v : group) v *= scale;
}

/// Groupwise shrink over each pixel's outgoing edges.
inline void shrink(std::span<double> d, const WeightGraph& g, double t) {
    for (std::size_t i = 0; i < g.n_pixels(); ++i)
        shrink(d.subspan(g.offsets[i], g.offsets[i + 1] - g.offsets[i]), t);
}

struct CgReport {
    std::size_t iterations = 0;
    double relative_residual = 0.0;
    double min_curvature = std::numeric_limits<double>::infinity();  // min <p, Mp> / <p, p>
};

using LinearOperator = std::function<void(std::span<const double>, std::span<double>)>;

/// Conjugate gradients for SPD M from the warm start in x.
inline CgReport conjugate_gradient(const LinearOperator& apply, std::span<const double> rhs,
                                   std::span<double> x, double tol, std::size_t max_iters) {
    const std::size_t n = rhs.size();
    CgReport rep;
    const double rhs_norm = vec::norm(rhs);
    if (rhs_norm == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        return rep;
    }
    std::vector<double> r(n), p(n), q(n);
    apply(x, q);
    for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - q[i];
    double rr = vec::dot(r, r);
    rep.relative_residual = std::sqrt(rr) / rhs_norm;
    p = r;
    while (rep.relative_residual > tol && rep.iterations < max_iters) {
        apply(p, q);
        const double pq = vec::dot(p, q);
        const double pp = vec::dot(p, p);
        if (!(pq > 0.0) || !std::isfinite(pq))
            throw NumericalError("conjugate gradients met non-positive curvature " + std::to_string(pq) +
                                 "; normal operator is not SPD");
        rep.min_curvature = std::min(rep.min_curvature, pq / pp);
        const double alpha = rr / pq;
        vec::axpy(alpha, p, x);
        vec::axpy(-alpha, q, r);
        const double rr_new = vec::dot(r, r);
        if (!std::isfinite(rr_new)) throw NumericalError("conjugate gradients diverged");
        const double beta = rr_new / rr;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
        rr = rr_new;
        ++rep.iterations;
        rep.relative_residual = std::sqrt(rr) / rhs_norm;
    }
    return rep;
}

/// The convex MAP functional I(u) = Phi(u) + lambda J(u) [+ 1/2 u^T C0^{-1} u]
/// on a fixed graph. J is the unnormalized group-norm sum.
class MapProblem {
  public:
    MapProblem(const Sinogram& y, const WeightGraph& graph, const PriorCovariance* cov, double lambda,
               double sigma, double gaussian_weight = 1.0)
        : y_(y), graph_(graph), cov_(cov), lambda_(lambda), sigma_(sigma), gamma_(gaussian_weight) {
        detail::require(gaussian_weight > 0.0, "gaussian weight must be positive");
        detail::require(sigma > 0.0, "sigma must be positive");
        detail::require(lambda >= 0.0, "lambda must be non-negative");
        detail::require(graph.width == y.geometry.image_side && graph.height == y.geometry.image_side,
                        "graph and scan geometry disagree on the image size");
        if (cov) detail::check_size(cov->n_pixels(), graph);
    }

    const Sinogram& data() const { return y_; }
    const WeightGraph& graph() const { return graph_; }
    const PriorCovariance* covariance() const { return cov_; }
    double lambda() const { return lambda_; }
    double sigma() const { return sigma_; }
    double gaussian_weight() const { return gamma_; }
    std::size_t n_pixels() const { return graph_.n_pixels(); }

    Image as_image(std::span<const double> u) const {
        return Image(graph_.width, graph_.height, std::vector<double>(u.begin(), u.end()));
    }

    double fidelity(std::span<const double> u) const { return data_fidelity(as_image(u), y_, sigma_); }
    double regularizer(std::span<const double> u) const { return lambda_ * nltv_sum(u, graph_); }
    double gaussian(std::span<const double> u) const { return cov_ ? gamma_ * cov_->prior_quadratic(u) : 0.0; }
    double objective(std::span<const double> u) const { return fidelity(u) + regularizer(u) + gaussian(u); }

    /// A^T A v / sigma^2 (+ gamma C0^{-1} v).
    void apply_smooth_hessian(std::span<const double> v, std::span<double> out) const {
        const Image ata = adjoint(forward(as_image(v), y_.geometry));
        const double s = 1.0 / (sigma_ * sigma_);
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = s * ata[i];
        if (cov_) {
            const auto cv = cov_->apply_precision(v);
            for (std::size_t i = 0; i < v.size(); ++i) out[i] += gamma_ * cv[i];
        }
    }

    /// A^T y / sigma^2.
    std::vector<double> data_rhs() const {
        const Image aty = adjoint(y_);
        std::vector<double> r(aty.raw());
        for (double& v : r) v /= sigma_ * sigma_;
        return r;
    }

  private:
    const Sinogram& y_;
    const WeightGraph& graph_;
    const PriorCovariance* cov_;
    double lambda_;
    double sigma_;
    double gamma_;
};

struct SplitState {
    Image u;
    std::vector<double> d;
    std::vector<double> b;
};

/// M u = A^T A u / sigma^2 - mu Lap_w u (+ C0^{-1} u).
inline void apply_normal_operator(const MapProblem& prob, double mu, std::span<const double> v,
                                  std::span<double> out) {
    prob.apply_smooth_hessian(v, out);
    const auto& g = prob.graph();
    std::vector<double> grad(g.n_edges());
    std::vector<double> lap(v.size());
    nl_gradient(v, g, grad);
    nl_divergence(grad, g, lap);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] -= mu * lap[i];
}

/// Solves (A^T A / sigma^2 - mu Lap_w + C0^{-1}) u = A^T y / sigma^2 + mu div_w(b - d)
/// by CG warm-started from state.u; state.u is overwritten.
inline CgReport solve_u_subproblem(SplitState& state, const MapProblem& prob, const MapConfig& cfg,
                                   std::span<const double> data_rhs) {
    const auto& g = prob.graph();
    std::vector<double> bd(g.n_edges());
    for (std::size_t e = 0; e < bd.size(); ++e) bd[e] = state.b[e] - state.d[e];
    std::vector<double> rhs(prob.n_pixels());
    nl_divergence(bd, g, rhs);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = data_rhs[i] + cfg.mu * rhs[i];
    const LinearOperator op = [&](std::span<const double> v, std::span<double> out) {
        apply_normal_operator(prob, cfg.mu, v, out);
    };
    return conjugate_gradient(op, rhs, state.u.values(), cfg.cg_tol, cfg.cg_max_iters);
}

struct TraceRow {
    std::size_t iteration = 0;
    double phi = 0.0;
    double lambda_j = 0.0;
    double prior = 0.0;
    double total = 0.0;
    double feasibility_gap = 0.0;  // ||grad_w u - d||
    std::size_t cg_iterations = 0;
};

struct MapResult {
    Image u;  // not clipped
    std::vector<TraceRow> trace;
    double initial_objective = 0.0;
};

/// Split Bregman iterations on a prepared problem. init defaults to zero.
inline MapResult split_bregman(const MapProblem& prob, const MapConfig& cfg, const Image& init) {
    cfg.validate();
    const auto& g = prob.graph();
    detail::check_size(init.size(), g);
    SplitState state{init, std::vector<double>(g.n_edges(), 0.0), std::vector<double>(g.n_edges(), 0.0)};
    const auto data_rhs = prob.data_rhs();
    const double threshold = cfg.lambda / cfg.mu;

    MapResult res;
    res.initial_objective = prob.objective(init.values());
    std::vector<double> grad(g.n_edges());
    for (std::size_t k = 1; k <= cfg.outer_iters; ++k) {
        const CgReport cg = solve_u_subproblem(state, prob, cfg, data_rhs);
        nl_gradient(state.u.values(), g, grad);
        for (std::size_t e = 0; e < grad.size(); ++e) state.d[e] = grad[e] + state.b[e];
        shrink(state.d, g, threshold);
        double gap2 = 0.0;
        for (std::size_t e = 0; e < grad.size(); ++e) {
            const double r = grad[e] - state.d[e];
            state.b[e] += r;
            gap2 += r * r;
        }
        TraceRow row;
        row.iteration = k;
        row.phi = prob.fidelity(state.u.values());
        row.lambda_j = prob.regularizer(state.u.values());
        row.prior = prob.gaussian(state.u.values());
        row.total = row.phi + row.lambda_j + row.prior;
        row.feasibility_gap = std::sqrt(gap2);
        row.cg_iterations = cg.iterations;
        res.trace.push_back(row);
    }
    res.u = std::move(state.u);
    return res;
}

/// MAP estimate for the configured prior. TV and TG replace the nonlocal graph
/// by the 4-neighbour unit-weight graph; TV and NLTV drop the Gaussian term.
/// Iterations start from u_ref unless init is given.
inline MapResult solve_map(const Sinogram& y, const Image& u_ref, const MapConfig& cfg,
                           const WeightGraph& graph, const PriorCovariance* prior_cov,
                           const std::optional<Image>& init = std::nullopt) {
    cfg.validate();
    if (uses_gaussian(cfg.prior) && !prior_cov)
        throw UsageError(to_string(cfg.prior) + " needs a prior covariance");
    std::optional<WeightGraph> local;
    if (!uses_nonlocal(cfg.prior)) local = local_graph(u_ref.width(), u_ref.height());
    const WeightGraph& g = local ? *local : graph;
    const MapProblem prob(y, g, uses_gaussian(cfg.prior) ? prior_cov : nullptr, cfg.lambda, cfg.sigma,
                          cfg.gaussian_weight);
    return split_bregman(prob, cfg, init ? *init : u_ref);
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
    os << "iteration,phi,lambda_j,prior,total\n";
    const auto old = os.precision(17);
    for (const auto& r : trace)
        os << r.iteration << ',' << r.phi << ',' << r.lambda_j << ',' << r.prior << ',' << r.total << '\n';
    os.precision(old);
}

}  // namespace nltg
