#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "errors.hpp"
#include "image.hpp"
#include "nonlocal.hpp"

// Reference-driven Gaussian covariance C0(i,j) = exp(-|f_i - f_j|^2 / h^2)
// with diagonal 1 + shift. Two storage schemes share one interface:
//
//  * sparse: entries kept only on a graph pattern; factored by sparse
//    Cholesky with AMD ordering. The restriction is not positive
//    semidefinite in general, so the shift must cover the most negative
//    eigenvalue of the restricted kernel.
//  * intensity kernel: all pixel pairs. With the reference quantized to a
//    grid of intensity levels the kernel factors exactly as B K_q B^T (B maps
//    pixels to levels, K_q is the Gram matrix of the levels), so
//    C0 = shift I + U U^T with U = B V sqrt(L) from the eigenpairs of K_q.
//    Solves use the Woodbury identity and samples are sqrt(shift) z1 + U z2.

namespace nltg {

enum class CovarianceModel { Sparse, IntensityKernel };

inline CovarianceModel parse_covariance_model(const std::string& s) {
    if (s == "sparse") return CovarianceModel::Sparse;
    if (s == "kernel") return CovarianceModel::IntensityKernel;
    throw UsageError("unknown covariance model '" + s + "' (expected sparse or kernel)");
}

namespace detail {

class CovarianceBackend {
  public:
    virtual ~CovarianceBackend() = default;
    virtual std::size_t size() const = 0;
    virtual Eigen::VectorXd precision(const Eigen::VectorXd& v) const = 0;
    virtual Eigen::VectorXd covariance(const Eigen::VectorXd& v) const = 0;
    virtual Eigen::VectorXd draw(std::mt19937_64& rng) const = 0;
    virtual double entry(std::size_t i, std::size_t j) const = 0;
};

inline Eigen::VectorXd standard_normal(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    return z;
}

class SparseCovariance final : public CovarianceBackend {
  public:
    using SparseMatrix = Eigen::SparseMatrix<double>;
    using Factor = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

    SparseCovariance(SparseMatrix m, double shift) : matrix_(std::move(m)) {
        factor_.compute(matrix_);
        if (factor_.info() != Eigen::Success) {
            std::ostringstream msg;
            msg << "covariance Cholesky failed: matrix not positive definite with diagonal shift " << shift
                << "; increase the shift";
            throw NumericalError(msg.str());
        }
    }

    std::size_t size() const override { return static_cast<std::size_t>(matrix_.rows()); }
    Eigen::VectorXd precision(const Eigen::VectorXd& v) const override { return factor_.solve(v); }
    Eigen::VectorXd covariance(const Eigen::VectorXd& v) const override { return matrix_ * v; }
    Eigen::VectorXd draw(std::mt19937_64& rng) const override {
        const Eigen::VectorXd z = standard_normal(matrix_.rows(), rng);
        const Eigen::VectorXd lz = factor_.matrixL() * z;
        return factor_.permutationPinv() * lz;
    }
    double entry(std::size_t i, std::size_t j) const override {
        return matrix_.coeff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

  private:
    SparseMatrix matrix_;
    Factor factor_;
};

class KernelCovariance final : public CovarianceBackend {
  public:
    // level[i] indexes levels; level_values holds the quantized intensities.
    KernelCovariance(std::vector<std::uint32_t> level, std::vector<double> level_values, double h, double shift)
        : level_(std::move(level)), values_(std::move(level_values)), h_(h), shift_(shift) {
        const auto m = static_cast<Eigen::Index>(values_.size());
        Eigen::MatrixXd kq(m, m);
        for (Eigen::Index a = 0; a < m; ++a)
            for (Eigen::Index b = 0; b < m; ++b) kq(a, b) = kernel(values_[a], values_[b]);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(kq);
        if (eig.info() != Eigen::Success) throw NumericalError("intensity kernel eigendecomposition failed");
        const double top = eig.eigenvalues().maxCoeff();
        std::vector<Eigen::Index> keep;
        for (Eigen::Index k = 0; k < m; ++k)
            if (eig.eigenvalues()[k] > 1e-13 * top) keep.push_back(k);
        // Level-space factor: K_q ~= R R^T.
        factor_.resize(m, static_cast<Eigen::Index>(keep.size()));
        for (std::size_t c = 0; c < keep.size(); ++c)
            factor_.col(static_cast<Eigen::Index>(c)) =
                eig.eigenvectors().col(keep[c]) * std::sqrt(eig.eigenvalues()[keep[c]]);
        // Inner Woodbury matrix shift I + U^T U, with U^T U = R^T diag(counts) R.
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(m);
        for (auto l : level_) counts[l] += 1.0;
        const Eigen::MatrixXd inner = shift_ * Eigen::MatrixXd::Identity(factor_.cols(), factor_.cols()) +
                                      factor_.transpose() * counts.asDiagonal() * factor_;
        inner_.compute(inner);
        if (inner_.info() != Eigen::Success) throw NumericalError("intensity kernel Woodbury factor failed");
    }

    std::size_t size() const override { return level_.size(); }

    Eigen::VectorXd precision(const Eigen::VectorXd& v) const override {
        const Eigen::VectorXd t = inner_.solve(project(v));
        Eigen::VectorXd out = v;
        lift_add(-1.0, t, out);
        return out / shift_;
    }

    Eigen::VectorXd covariance(const Eigen::VectorXd& v) const override {
        Eigen::VectorXd out = shift_ * v;
        lift_add(1.0, project(v), out);
        return out;
    }

    Eigen::VectorXd draw(std::mt19937_64& rng) const override {
        const auto n = static_cast<Eigen::Index>(size());
        Eigen::VectorXd out = std::sqrt(shift_) * standard_normal(n, rng);
        lift_add(1.0, standard_normal(factor_.cols(), rng), out);
        return out;
    }

    double entry(std::size_t i, std::size_t j) const override {
        const double k = kernel(values_[level_[i]], values_[level_[j]]);
        return i == j ? k + shift_ : k;
    }

    std::size_t rank() const { return static_cast<std::size_t>(factor_.cols()); }

  private:
    double kernel(double a, double b) const {
        const double d = a - b;
        return std::exp(-d * d / (h_ * h_));
    }

    // U^T v
    Eigen::VectorXd project(const Eigen::VectorXd& v) const {
        Eigen::VectorXd per_level = Eigen::VectorXd::Zero(factor_.rows());
        for (std::size_t i = 0; i < level_.size(); ++i) per_level[level_[i]] += v[static_cast<Eigen::Index>(i)];
        return factor_.transpose() * per_level;
    }

    // out += alpha U t
    void lift_add(double alpha, const Eigen::VectorXd& t, Eigen::VectorXd& out) const {
        const Eigen::VectorXd per_level = factor_ * t;
        for (std::size_t i = 0; i < level_.size(); ++i)
            out[static_cast<Eigen::Index>(i)] += alpha * per_level[level_[i]];
    }

    std::vector<std::uint32_t> level_;
    std::vector<double> values_;
    double h_;
    double shift_;
    Eigen::MatrixXd factor_;
    Eigen::LLT<Eigen::MatrixXd> inner_;
};

}  // namespace detail

/// Immutable covariance with solve (C0^{-1} v) and sampling (C0^{1/2} z).
class PriorCovariance {
  public:
    PriorCovariance(std::shared_ptr<const detail::CovarianceBackend> backend, CovarianceModel model, double shift,
                    std::size_t width, std::size_t height)
        : backend_(std::move(backend)), model_(model), shift_(shift), width_(width), height_(height) {}

    std::size_t n_pixels() const { return backend_->size(); }
    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    double shift() const { return shift_; }
    CovarianceModel model() const { return model_; }

    double entry(std::size_t i, std::size_t j) const { return backend_->entry(i, j); }

    std::vector<double> apply_precision(std::span<const double> v) const {
        return to_std(backend_->precision(to_eigen(v)));
    }

    std::vector<double> apply_covariance(std::span<const double> v) const {
        return to_std(backend_->covariance(to_eigen(v)));
    }

    /// 1/2 u^T C0^{-1} u, through apply_precision.
    double prior_quadratic(std::span<const double> u) const {
        const auto cu = apply_precision(u);
        return 0.5 * vec::dot(u, cu);
    }

    std::vector<double> sample(std::mt19937_64& rng) const { return to_std(backend_->draw(rng)); }

    Image sample(std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        return Image(width_, height_, sample(rng));
    }

    /// Dense copy, for small problems and tests.
    Eigen::MatrixXd dense() const {
        const auto n = static_cast<Eigen::Index>(n_pixels());
        Eigen::MatrixXd m(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                m(i, j) = entry(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        return m;
    }

  private:
    Eigen::VectorXd to_eigen(std::span<const double> v) const {
        if (v.size() != n_pixels())
            throw UsageError("vector length " + std::to_string(v.size()) + " does not match covariance size " +
                             std::to_string(n_pixels()));
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    static std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

    std::shared_ptr<const detail::CovarianceBackend> backend_;
    CovarianceModel model_;
    double shift_;
    std::size_t width_;
    std::size_t height_;
};

/// 1e-2 times the largest pattern degree.
inline double default_covariance_shift(const WeightGraph& pattern) {
    return 1e-2 * static_cast<double>(pattern.max_degree());
}

/// Sparse-pattern covariance: kernel entries on the edges of pattern.
inline PriorCovariance build_covariance(const Image& u_ref, double h, const WeightGraph& pattern, double shift) {
    detail::require(h > 0.0, "covariance bandwidth h must be positive");
    detail::require(shift > 0.0, "covariance diagonal shift must be positive");
    detail::check_size(u_ref.size(), pattern);
    const std::size_t n = pattern.n_pixels();
    const double inv_h2 = 1.0 / (h * h);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(n + pattern.n_edges());
    for (std::size_t i = 0; i < n; ++i) {
        triplets.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0 + shift);
        for (std::size_t e = pattern.offsets[i]; e < pattern.offsets[i + 1]; ++e) {
            const std::size_t j = pattern.neighbors[e];
            const double d = u_ref[i] - u_ref[j];
            const double c = std::exp(-d * d * inv_h2);
            if (c > 0.0) triplets.emplace_back(static_cast<int>(i), static_cast<int>(j), c);
        }
    }
    Eigen::SparseMatrix<double> m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    m.setFromTriplets(triplets.begin(), triplets.end());
    m.makeCompressed();
    return PriorCovariance(std::make_shared<detail::SparseCovariance>(std::move(m), shift), CovarianceModel::Sparse,
                           shift, u_ref.width(), u_ref.height());
}

/// Full-kernel covariance over all pixel pairs. The reference is quantized to
/// multiples of quantum before evaluating the kernel.
inline PriorCovariance build_kernel_covariance(const Image& u_ref, double h, double shift, double quantum = 0.25) {
    detail::require(h > 0.0, "covariance bandwidth h must be positive");
    detail::require(shift > 0.0, "covariance diagonal shift must be positive");
    detail::require(quantum > 0.0, "intensity quantum must be positive");
    detail::require(u_ref.all_finite(), "reference image has non-finite values");
    std::map<long long, std::uint32_t> index;
    for (double v : u_ref.values()) index.emplace(std::llround(v / quantum), 0);
    std::vector<double> values;
    for (auto& [q, idx] : index) {
        idx = static_cast<std::uint32_t>(values.size());
        values.push_back(static_cast<double>(q) * quantum);
    }
    std::vector<std::uint32_t> level(u_ref.size());
    for (std::size_t i = 0; i < u_ref.size(); ++i) level[i] = index.at(std::llround(u_ref[i] / quantum));
    return PriorCovariance(std::make_shared<detail::KernelCovariance>(std::move(level), std::move(values), h, shift),
                           CovarianceModel::IntensityKernel, shift, u_ref.width(), u_ref.height());
}

}  // namespace nltg
