#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gauss_prior.hpp"
#include "image.hpp"
#include "image_io.hpp"
#include "map_solver.hpp"
#include "metrics.hpp"
#include "nonlocal.hpp"
#include "pcn.hpp"
#include "phantom.hpp"
#include "radon.hpp"

// The reconstruction experiment matrix: methods x sinogram noise x reference
// noise on a synthetic torso phantom, MAP and optionally CM estimates.

namespace nltg {

enum class Method { FBP, TV, TG, NLTV, NLTG };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::FBP: return "FBP";
        case Method::TV: return "TV";
        case Method::TG: return "TG";
        case Method::NLTV: return "NLTV";
        case Method::NLTG: return "NLTG";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "fbp") return Method::FBP;
    if (s == "tv") return Method::TV;
    if (s == "tg") return Method::TG;
    if (s == "nltv") return Method::NLTV;
    if (s == "nltg") return Method::NLTG;
    throw UsageError("unknown method '" + s + "' (expected fbp, tv, tg, nltv or nltg)");
}

inline PriorKind prior_of(Method m) {
    switch (m) {
        case Method::TV: return PriorKind::TV;
        case Method::TG: return PriorKind::TG;
        case Method::NLTV: return PriorKind::NLTV;
        case Method::NLTG: return PriorKind::NLTG;
        case Method::FBP: break;
    }
    throw UsageError("FBP has no prior");
}

/// FBP and TV do not look at the reference image.
inline bool uses_reference(Method m) { return m != Method::FBP && m != Method::TV; }
inline bool samples_cm(Method m) { return m == Method::TG || m == Method::NLTG; }

/// splitmix64 finalizer over (master, stream, index).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (stream * 0x100000001B3ull + index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

struct ExperimentConfig {
    PhantomKind phantom = PhantomKind::XcatLike;
    std::size_t size = 128;
    std::optional<Tumor> tumor = Tumor{0.38, 0.15, 0.07, 150.0};
    std::optional<BackgroundWave> wave = BackgroundWave{10.0, 2.0};
    std::size_t n_angles = 50;
    double detector_extent = std::numeric_limits<double>::infinity();
    std::size_t reference_angles = 500;
    std::vector<double> sinogram_noise{5.0, 20.0};
    std::vector<double> reference_noise{5.0, 20.0};
    std::vector<Method> methods{Method::FBP, Method::TV, Method::TG, Method::NLTV, Method::NLTG};
    bool run_map = true;
    bool run_cm = false;
    std::vector<double> lambda_grid{0.001, 0.002, 0.003, 0.005};

    // Nonlocal weights; h defaults to the RMS of u_ref - u_ori.
    std::optional<double> h;
    std::size_t patch_radius = 2;
    double patch_a = 1.5;
    std::size_t search_radius = 5;
    std::size_t k_best = 10;
    std::size_t k_local = 4;

    CovarianceModel covariance = CovarianceModel::IntensityKernel;
    std::optional<double> covariance_shift;  // kernel: 0.1; sparse: 1e-2 max degree
    double gaussian_weight = 1e-5;

    std::size_t outer_iters = 40;
    std::size_t cg_max_iters = 10;
    double cg_tol = 1e-6;

    std::size_t cm_samples = 100000;
    std::optional<std::size_t> cm_burnin;  // default cm_samples / 19
    double cm_beta = 2e-3;
    std::size_t cm_thin = 1;

    std::string output_dir = "results";
    std::uint64_t master_seed = 20240607;

    void validate() const {
        detail::require(!methods.empty(), "method set must not be empty");
        detail::require(size >= 16, "phantom size must be at least 16");
        detail::require(n_angles >= 1 && reference_angles >= 1, "angle counts must be positive");
        detail::require(!sinogram_noise.empty(), "at least one sinogram noise level is required");
        for (double s : sinogram_noise) detail::require(s > 0.0, "sinogram noise levels must be positive");
        for (double s : reference_noise) detail::require(s >= 0.0, "reference noise levels must be non-negative");
        detail::require(!lambda_grid.empty(), "lambda grid must not be empty");
        for (double l : lambda_grid) detail::require(l > 0.0, "lambda grid values must be positive");
        if (h) detail::require(*h > 0.0, "h must be positive");
        if (covariance_shift) detail::require(*covariance_shift > 0.0, "covariance shift must be positive");
        detail::require(gaussian_weight > 0.0, "gaussian weight must be positive");
        detail::require(cm_beta >= 0.0 && cm_beta <= 1.0, "cm beta must lie in [0, 1]");
        detail::require(cm_samples >= 2 && cm_thin >= 1, "cm needs at least 2 samples and thin >= 1");
        bool needs_ref = false;
        for (Method m : methods) needs_ref = needs_ref || uses_reference(m);
        if (needs_ref) detail::require(!reference_noise.empty(), "reference methods need a reference noise level");
        detail::require(!output_dir.empty(), "output directory must not be empty");
    }

    std::size_t burnin() const { return cm_burnin ? *cm_burnin : cm_samples / 19; }

    /// One key=value line per field, fixed order, full precision.
    std::string canonical() const {
        std::ostringstream os;
        os.precision(17);
        os << "phantom=" << (phantom == PhantomKind::XcatLike ? "xcat-like" : "shepp-logan") << '\n'
           << "size=" << size << '\n';
        if (tumor)
            os << "tumor=" << tumor->center_x << ' ' << tumor->center_y << ' ' << tumor->radius << ' '
               << tumor->intensity << '\n';
        if (wave) os << "wave=" << wave->amplitude << ' ' << wave->frequency << '\n';
        os << "angles=" << n_angles << '\n'
           << "detector-extent=" << detector_extent << '\n'
           << "reference-angles=" << reference_angles << '\n';
        auto list = [&os](const char* key, const std::vector<double>& v) {
            os << key << '=';
            for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
            os << '\n';
        };
        list("sinogram-noise", sinogram_noise);
        list("reference-noise", reference_noise);
        os << "methods=";
        for (std::size_t i = 0; i < methods.size(); ++i) os << (i ? " " : "") << to_string(methods[i]);
        os << '\n' << "map=" << run_map << '\n' << "cm=" << run_cm << '\n';
        list("lambda-grid", lambda_grid);
        os << "h=";
        if (h)
            os << *h;
        else
            os << "auto";
        os << '\n'
           << "patch=" << patch_radius << ' ' << patch_a << ' ' << search_radius << ' ' << k_best << ' '
           << k_local << '\n'
           << "covariance=" << (covariance == CovarianceModel::Sparse ? "sparse" : "kernel") << '\n'
           << "covariance-shift=" << (covariance_shift ? *covariance_shift : -1.0) << '\n'
           << "gaussian-weight=" << gaussian_weight << '\n'
           << "solver=" << outer_iters << ' ' << cg_max_iters << ' ' << cg_tol << '\n'
           << "chain=" << cm_samples << ' ' << burnin() << ' ' << cm_beta << ' ' << cm_thin << '\n'
           << "seed=" << master_seed << '\n';
        return os.str();
    }

    /// FNV-1a of canonical(), as 16 hex digits.
    std::string hash() const {
        std::uint64_t hv = 0xcbf29ce484222325ull;
        for (unsigned char c : canonical()) {
            hv ^= c;
            hv *= 0x100000001b3ull;
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hv));
        return buf;
    }
};

enum class Estimator { Direct, MAP, CM };

struct ResultRow {
    Method method = Method::FBP;
    Estimator estimator = Estimator::Direct;
    double sinogram_noise = 0.0;
    std::optional<double> ref_noise;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    double psnr = 0.0;
    double ssim = 0.0;
    double acceptance = std::numeric_limits<double>::quiet_NaN();
    double beta = std::numeric_limits<double>::quiet_NaN();

    std::string label() const { return to_string(method) + (estimator == Estimator::CM ? "-CM" : ""); }
};

inline std::string format_level(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

inline QualityReport to_report(const ResultRow& r) {
    return {r.label(), format_level(r.sinogram_noise), r.ref_noise ? format_level(*r.ref_noise) : "", r.psnr,
            r.ssim};
}

struct ExperimentData {
    Image original;  // u_ori
    Image truth;     // u_gt
    std::vector<Sinogram> sinograms;  // one per sinogram noise level
    std::vector<Image> references;    // one per reference noise level
};

/// Phantoms, noisy 50-angle sinograms and FBP references from the dense scan
/// of u_ori. Noise seeds come from the master seed.
inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentData d;
    Phantom p{cfg.phantom, cfg.size, std::nullopt, std::nullopt};
    d.original = generate_phantom(p);
    p.tumor = cfg.tumor;
    p.background_wave = cfg.wave;
    d.truth = generate_phantom(p);

    auto geom = ScanGeometry::for_image(cfg.size, cfg.n_angles);
    geom.detector_extent = cfg.detector_extent;
    const Sinogram clean = forward(d.truth, geom);
    for (std::size_t k = 0; k < cfg.sinogram_noise.size(); ++k) {
        Sinogram y = clean;
        y.data = add_noise(y.data, {cfg.sinogram_noise[k], derive_seed(cfg.master_seed, 1, k)});
        d.sinograms.push_back(apply_mask(std::move(y)));
    }
    const auto dense = ScanGeometry::for_image(cfg.size, cfg.reference_angles);
    const Sinogram clean_ref = forward(d.original, dense);
    for (std::size_t k = 0; k < cfg.reference_noise.size(); ++k) {
        Sinogram y = clean_ref;
        y.data = add_noise(y.data, {cfg.reference_noise[k], derive_seed(cfg.master_seed, 2, k)});
        d.references.push_back(clip_intensity(fbp(y, FbpFilter::Hann)));
    }
    return d;
}

/// RMS of u_ref - u_ori, the noise level of the reference.
inline double reference_noise_rms(const Image& reference, const Image& original) {
    if (!reference.same_shape(original)) throw UsageError("reference and original differ in size");
    double s = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - original[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(reference.size()));
}

/// Graph and covariance derived from one reference.
struct ReferenceModel {
    double h = 0.0;
    WeightGraph graph;
    PriorCovariance covariance;
};

inline ReferenceModel build_reference_model(const Image& reference, double h, const ExperimentConfig& cfg) {
    WeightGraph g = build_weights(reference, PatchKernel{cfg.patch_radius, cfg.patch_a, h}, cfg.search_radius,
                                  cfg.k_best, cfg.k_local);
    if (cfg.covariance == CovarianceModel::Sparse) {
        const double shift = cfg.covariance_shift ? *cfg.covariance_shift : default_covariance_shift(g);
        auto cov = build_covariance(reference, h, g, shift);
        return {h, std::move(g), std::move(cov)};
    }
    auto cov = build_kernel_covariance(reference, h, cfg.covariance_shift ? *cfg.covariance_shift : 0.1);
    return {h, std::move(g), std::move(cov)};
}

inline MapConfig map_config(const ExperimentConfig& cfg, Method m, double lambda, double sigma) {
    MapConfig mc;
    mc.prior = prior_of(m);
    mc.lambda = lambda;
    mc.mu = lambda;
    mc.sigma = sigma;
    mc.outer_iters = cfg.outer_iters;
    mc.cg_max_iters = cfg.cg_max_iters;
    mc.cg_tol = cfg.cg_tol;
    mc.gaussian_weight = cfg.gaussian_weight;
    return mc;
}

struct LambdaSelection {
    double lambda = 0.0;
    Image estimate;  // clipped
    double psnr = -std::numeric_limits<double>::infinity();
};

/// Grid search for the lambda with the best PSNR against the truth.
/// Reference-free methods start from the clipped FBP image.
inline LambdaSelection select_lambda(const Sinogram& y, const Image& truth, const Image& start,
                                     const WeightGraph& graph, const PriorCovariance* cov,
                                     const ExperimentConfig& cfg, Method m, double sigma) {
    LambdaSelection best;
    for (double lambda : cfg.lambda_grid) {
        const auto res = solve_map(y, start, map_config(cfg, m, lambda, sigma), graph, cov);
        Image u = clip_intensity(res.u);
        const double v = psnr(u, truth);
        if (v > best.psnr) best = {lambda, std::move(u), v};
    }
    return best;
}

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::string hash;
    std::filesystem::path directory;
};

namespace detail {

inline std::string cell_name(double sinogram_noise, std::optional<double> ref_noise) {
    return "s" + format_level(sinogram_noise) + (ref_noise ? "_r" + format_level(*ref_noise) : "");
}

inline bool has_method(const ExperimentConfig& cfg, Method m) {
    for (Method x : cfg.methods)
        if (x == m) return true;
    return false;
}

}  // namespace detail

/// Runs the matrix. With write_outputs, images and CSV files go to
/// output_dir/<config hash>/.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs = true,
                                       std::ostream* log = nullptr) {
    cfg.validate();
    ExperimentResult out;
    out.hash = cfg.hash();
    out.directory = std::filesystem::path(cfg.output_dir) / out.hash;
    if (write_outputs) std::filesystem::create_directories(out.directory);
    auto save = [&](const std::string& name, const Image& img) {
        if (write_outputs) write_image((out.directory / (name + ".img")).string(), img);
    };

    const ExperimentData data = prepare_data(cfg);
    save("original", data.original);
    save("truth", data.truth);

    // Graphs and covariances depend only on the reference.
    std::vector<std::optional<ReferenceModel>> models(data.references.size());
    auto model_for = [&](std::size_t r) -> const ReferenceModel& {
        if (!models[r]) {
            const double h = cfg.h ? *cfg.h : reference_noise_rms(data.references[r], data.original);
            models[r] = build_reference_model(data.references[r], h, cfg);
            if (log) *log << "reference " << format_level(cfg.reference_noise[r]) << ": h = " << h << '\n';
        }
        return *models[r];
    };

    std::size_t chain_index = 0;
    for (std::size_t s = 0; s < data.sinograms.size(); ++s) {
        const Sinogram& y = data.sinograms[s];
        const double sigma = cfg.sinogram_noise[s];
        const Image fbp_image = clip_intensity(fbp(y));
        if (detail::has_method(cfg, Method::FBP)) {
            out.rows.push_back({Method::FBP, Estimator::Direct, sigma, std::nullopt, std::numeric_limits<double>::quiet_NaN(),
                                psnr(fbp_image, data.truth), ssim(fbp_image, data.truth)});
            save(detail::cell_name(sigma, std::nullopt) + "_FBP", fbp_image);
        }
        if (detail::has_method(cfg, Method::TV) && cfg.run_map) {
            const WeightGraph lg = local_graph(cfg.size, cfg.size);
            const auto sel = select_lambda(y, data.truth, fbp_image, lg, nullptr, cfg, Method::TV, sigma);
            out.rows.push_back({Method::TV, Estimator::MAP, sigma, std::nullopt, sel.lambda, sel.psnr,
                                ssim(sel.estimate, data.truth)});
            save(detail::cell_name(sigma, std::nullopt) + "_TV", sel.estimate);
            if (log) *log << "sinogram " << sigma << " TV lambda " << sel.lambda << " psnr " << sel.psnr << '\n';
        }
        for (std::size_t r = 0; r < data.references.size(); ++r) {
            const double ref_level = cfg.reference_noise[r];
            const std::string cell = detail::cell_name(sigma, ref_level);
            for (Method m : cfg.methods) {
                if (!uses_reference(m)) continue;
                const bool want_cm = cfg.run_cm && samples_cm(m);
                if (!cfg.run_map && !want_cm) continue;
                const ReferenceModel& model = model_for(r);
                const auto sel = select_lambda(y, data.truth, data.references[r], model.graph, &model.covariance,
                                               cfg, m, sigma);
                if (cfg.run_map) {
                    out.rows.push_back({m, Estimator::MAP, sigma, ref_level, sel.lambda, sel.psnr,
                                        ssim(sel.estimate, data.truth)});
                    save(cell + "_" + to_string(m), sel.estimate);
                    if (log)
                        *log << "sinogram " << sigma << " reference " << ref_level << ' ' << to_string(m)
                             << " lambda " << sel.lambda << " psnr " << sel.psnr << '\n';
                }
                if (!want_cm) continue;
                PcnConfig pc;
                pc.prior = prior_of(m);
                pc.lambda = sel.lambda;
                pc.sigma = sigma;
                pc.gaussian_weight = cfg.gaussian_weight;
                pc.beta = cfg.cm_beta;
                pc.n_samples = cfg.cm_samples;
                pc.n_burnin = cfg.burnin();
                pc.thin = cfg.cm_thin;
                pc.seed = derive_seed(cfg.master_seed, 3, chain_index++);
                const auto chain = run_chain(y, pc, model.graph, model.covariance, data.references[r]);
                const Image cm = clip_intensity(cm_image(chain.stats));
                ResultRow row{m, Estimator::CM, sigma, ref_level, sel.lambda, psnr(cm, data.truth),
                              ssim(cm, data.truth)};
                row.acceptance = chain.stats.acceptance_rate();
                row.beta = chain.final_beta;
                out.rows.push_back(row);
                save(cell + "_" + to_string(m) + "-CM", cm);
                save(cell + "_" + to_string(m) + "-CI", ci_map(chain.stats));
                if (log)
                    *log << "sinogram " << sigma << " reference " << ref_level << ' ' << to_string(m)
                         << "-CM psnr " << row.psnr << " acceptance " << row.acceptance << '\n';
            }
        }
    }
    if (write_outputs) {
        std::ofstream cfg_file(out.directory / "config.txt");
        cfg_file << cfg.canonical();
    }
    return out;
}

/// Table layouts: 1 = MAP PSNR, 2 = MAP SSIM (both keep FBP), 3 = CM; 0 = everything.
inline std::vector<ResultRow> table_rows(const std::vector<ResultRow>& rows, int table) {
    detail::require(table >= 0 && table <= 3, "table must be 0, 1, 2 or 3");
    std::vector<ResultRow> out;
    for (const auto& r : rows) {
        const bool cm = r.estimator == Estimator::CM;
        if (table == 0 || (table == 3) == cm) out.push_back(r);
    }
    return out;
}

inline void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
    write_quality_header(os);
    for (const auto& r : rows) write_quality_row(os, to_report(r));
}

/// Companion CSV with the selected lambda and chain diagnostics.
inline void write_selection_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
    os << "method,sinogram_noise,ref_noise,lambda,acceptance,beta\n";
    const auto old = os.precision(17);
    for (const auto& r : rows) {
        const auto q = to_report(r);
        os << q.method << ',' << q.sinogram_noise << ',' << q.ref_noise << ',';
        if (!std::isnan(r.lambda)) os << r.lambda;
        os << ',';
        if (!std::isnan(r.acceptance)) os << r.acceptance;
        os << ',';
        if (!std::isnan(r.beta)) os << r.beta;
        os << '\n';
    }
    os.precision(old);
}

struct Assertion {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline const ResultRow* find_row(const std::vector<ResultRow>& rows, Method m, Estimator e, double s,
                                 std::optional<double> r) {
    for (const auto& row : rows) {
        if (row.method != m || row.estimator != e || row.sinogram_noise != s) continue;
        if (uses_reference(m) && row.ref_noise != r) continue;
        return &row;
    }
    return nullptr;
}

inline std::vector<std::pair<double, double>> cells(const std::vector<ResultRow>& rows) {
    std::vector<std::pair<double, double>> out;
    for (const auto& row : rows) {
        if (!row.ref_noise) continue;
        const std::pair<double, double> c{row.sinogram_noise, *row.ref_noise};
        bool seen = false;
        for (const auto& x : out) seen = seen || x == c;
        if (!seen) out.push_back(c);
    }
    return out;
}

}  // namespace detail

/// MAP PSNR order NLTG > NLTV > TG > TV > FBP per cell, with margin between
/// the three reference-driven methods.
inline std::vector<Assertion> check_map_ordering(const std::vector<ResultRow>& rows, double margin = 0.2) {
    std::vector<Assertion> out;
    const std::vector<std::pair<Method, Estimator>> order{{Method::NLTG, Estimator::MAP},
                                                          {Method::NLTV, Estimator::MAP},
                                                          {Method::TG, Estimator::MAP},
                                                          {Method::TV, Estimator::MAP},
                                                          {Method::FBP, Estimator::Direct}};
    for (const auto& [s, r] : detail::cells(rows)) {
        Assertion a;
        a.name = "MAP PSNR ordering, sinogram " + format_level(s) + ", reference " + format_level(r);
        std::vector<const ResultRow*> got;
        for (const auto& [m, e] : order) got.push_back(detail::find_row(rows, m, e, s, r));
        bool complete = true;
        for (auto* p : got) complete = complete && p;
        if (!complete) continue;
        std::ostringstream d;
        d.precision(4);
        a.passed = true;
        for (std::size_t k = 0; k < got.size(); ++k) {
            d << (k ? " > " : "") << got[k]->label() << ' ' << std::fixed << got[k]->psnr;
            if (k + 1 < got.size()) {
                const double gap = got[k]->psnr - got[k + 1]->psnr;
                if (k < 2 ? !(gap >= margin) : !(gap > 0.0)) a.passed = false;
            }
        }
        a.detail = d.str();
        out.push_back(a);
    }
    return out;
}

/// Per cell: MAP SSIM >= CM SSIM for NLTG, and NLTG-CM PSNR > TG-CM PSNR.
inline std::vector<Assertion> check_cm_trends(const std::vector<ResultRow>& rows) {
    std::vector<Assertion> out;
    for (const auto& [s, r] : detail::cells(rows)) {
        const auto* map = detail::find_row(rows, Method::NLTG, Estimator::MAP, s, r);
        const auto* cm = detail::find_row(rows, Method::NLTG, Estimator::CM, s, r);
        const auto* tg = detail::find_row(rows, Method::TG, Estimator::CM, s, r);
        const std::string cell = "sinogram " + format_level(s) + ", reference " + format_level(r);
        std::ostringstream d;
        d.precision(4);
        d << std::fixed;
        if (map && cm) {
            d << "NLTG MAP SSIM " << map->ssim << " vs CM " << cm->ssim;
            out.push_back({"NLTG MAP SSIM >= CM SSIM, " + cell, map->ssim >= cm->ssim, d.str()});
            d.str("");
        }
        if (cm && tg) {
            d << "NLTG-CM PSNR " << cm->psnr << " vs TG-CM " << tg->psnr;
            out.push_back({"NLTG-CM PSNR > TG-CM PSNR, " + cell, cm->psnr > tg->psnr, d.str()});
        }
    }
    return out;
}

}  // namespace nltg
