// Command-line front end: one subcommand per pipeline stage plus the
// experiment matrix runner.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nltg/errors.hpp>
#include <nltg/experiment.hpp>
#include <nltg/gauss_prior.hpp>
#include <nltg/image.hpp>
#include <nltg/image_io.hpp>
#include <nltg/map_solver.hpp>
#include <nltg/metrics.hpp>
#include <nltg/nonlocal.hpp>
#include <nltg/pcn.hpp>
#include <nltg/phantom.hpp>
#include <nltg/radon.hpp>

namespace {

using namespace nltg;

std::vector<double> parse_list(const std::string& s, const char* what) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string("malformed ") + what + " entry '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Turns "key=value" lines of a config file into "--key=value" tokens.
std::vector<std::string> config_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    std::vector<std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string v) {
            const auto b = v.find_first_not_of(" \t\r");
            const auto e = v.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
        };
        out.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
    }
    return out;
}

// argv with config file contents spliced in right after the subcommand name,
// so explicit flags (parsed later) take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> file_tokens;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            const auto t = config_tokens(args[++i]);
            file_tokens.insert(file_tokens.end(), t.begin(), t.end());
        } else if (args[i].rfind("--config=", 0) == 0) {
            const auto t = config_tokens(args[i].substr(9));
            file_tokens.insert(file_tokens.end(), t.begin(), t.end());
        } else {
            rest.push_back(args[i]);
        }
    }
    if (rest.empty()) return rest;
    std::vector<std::string> out{rest.front()};
    out.insert(out.end(), file_tokens.begin(), file_tokens.end());
    out.insert(out.end(), rest.begin() + 1, rest.end());
    return out;
}

struct ReferenceOptions {
    std::string reference;
    std::string original;
    std::string graph;
    std::optional<double> h;
    std::size_t patch_radius = 2;
    double patch_a = 1.5;
    std::size_t search_radius = 5;
    std::size_t k_best = 10;
    std::size_t k_local = 4;
    std::string covariance = "kernel";
    std::optional<double> shift;
    double gaussian_weight = 1e-5;

    void add(CLI::App* app) {
        app->add_option("--reference", reference, "Reference image")->required();
        app->add_option("--original", original, "Noise-free original; h defaults to the RMS of reference - original");
        app->add_option("--graph", graph, "Precomputed weight graph (else built from the reference)");
        app->add_option("--h", h, "Filtering parameter for weights and covariance");
        app->add_option("--patch-radius", patch_radius);
        app->add_option("--patch-a", patch_a);
        app->add_option("--search-radius", search_radius);
        app->add_option("--k-best", k_best);
        app->add_option("--k-local", k_local);
        app->add_option("--covariance", covariance, "kernel or sparse");
        app->add_option("--shift", shift, "Covariance diagonal shift");
        app->add_option("--gaussian-weight", gaussian_weight, "Weight of the Gaussian term");
    }

    double resolve_h(const Image& ref) const {
        if (h) return *h;
        if (original.empty()) throw UsageError("--h is required unless --original is given");
        return reference_noise_rms(ref, read_image(original));
    }

    WeightGraph build_graph(const Image& ref, double hv) const {
        if (!graph.empty()) return read_graph(graph, ref.width(), ref.height());
        return build_weights(ref, PatchKernel{patch_radius, patch_a, hv}, search_radius, k_best, k_local);
    }

    PriorCovariance build_cov(const Image& ref, double hv, const WeightGraph& g) const {
        if (parse_covariance_model(covariance) == CovarianceModel::Sparse)
            return build_covariance(ref, hv, g, shift ? *shift : default_covariance_shift(g));
        return build_kernel_covariance(ref, hv, shift ? *shift : 0.1);
    }
};

int run(int argc, char** argv) {
    CLI::App app{"Nonlocal total-variation / Gaussian hybrid prior CT reconstruction"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.set_help_flag("--help", "Print this help message and exit");
    app.set_help_all_flag("--help-all");
    app.footer("Any subcommand accepts --config FILE with key=value lines; flags override the file.");

    // phantom
    auto* ph = app.add_subcommand("phantom", "Generate a phantom image");
    std::string ph_kind = "xcat-like", ph_out, ph_pgm, ph_tumor, ph_wave;
    std::size_t ph_size = 128;
    ph->add_option("--kind", ph_kind, "shepp-logan or xcat-like");
    ph->add_option("--size", ph_size);
    ph->add_option("--tumor", ph_tumor, "x,y,radius,intensity in [-1,1] coordinates");
    ph->add_option("--wave", ph_wave, "amplitude,frequency");
    ph->add_option("--out", ph_out)->required();
    ph->add_option("--pgm", ph_pgm, "Also export a PGM preview");

    // project
    auto* pr = app.add_subcommand("project", "Forward-project an image and add Gaussian noise");
    std::string pr_in, pr_out;
    std::size_t pr_angles = 50;
    double pr_noise = 0.0, pr_extent = std::numeric_limits<double>::infinity();
    std::uint64_t pr_seed = 0;
    pr->add_option("--in", pr_in)->required();
    pr->add_option("--angles", pr_angles);
    pr->add_option("--noise", pr_noise, "Noise standard deviation");
    pr->add_option("--seed", pr_seed);
    pr->add_option("--extent", pr_extent, "Detector extent r (default: full)");
    pr->add_option("--out", pr_out)->required();

    // fbp
    auto* fb = app.add_subcommand("fbp", "Filtered back-projection");
    std::string fb_in, fb_out, fb_filter = "ram-lak", fb_pgm;
    std::size_t fb_size = 128;
    bool fb_clip = false;
    fb->add_option("--in", fb_in)->required();
    fb->add_option("--size", fb_size, "Image side of the scan");
    fb->add_option("--filter", fb_filter, "ram-lak or hann");
    fb->add_flag("--clip", fb_clip, "Clip to [0, 255]");
    fb->add_option("--out", fb_out)->required();
    fb->add_option("--pgm", fb_pgm);

    // weights
    auto* we = app.add_subcommand("weights", "Build the nonlocal weight graph of an image");
    std::string we_in, we_out;
    double we_h = 0.0;
    std::size_t we_pr = 2, we_sr = 5, we_kb = 10, we_kl = 4;
    double we_a = 1.5;
    we->add_option("--in", we_in)->required();
    we->add_option("--h", we_h)->required();
    we->add_option("--patch-radius", we_pr);
    we->add_option("--patch-a", we_a);
    we->add_option("--search-radius", we_sr);
    we->add_option("--k-best", we_kb);
    we->add_option("--k-local", we_kl);
    we->add_option("--out", we_out)->required();

    // map
    auto* mp = app.add_subcommand("map", "MAP reconstruction by split Bregman");
    std::string mp_sino, mp_prior = "nltg", mp_lambda = "auto", mp_grid = "0.001,0.002,0.003,0.005", mp_truth, mp_out,
                mp_trace, mp_metrics, mp_pgm;
    std::size_t mp_size = 128, mp_outer = 40, mp_cgmax = 10;
    double mp_sigma = 5.0, mp_cgtol = 1e-6;
    std::optional<double> mp_mu;
    ReferenceOptions mp_ref;
    mp->add_option("--sinogram", mp_sino)->required();
    mp->add_option("--size", mp_size);
    mp->add_option("--prior", mp_prior, "nltg, nltv, tg or tv");
    mp->add_option("--lambda", mp_lambda, "Value or 'auto' (grid search against --truth)");
    mp->add_option("--lambda-grid", mp_grid, "Comma-separated grid for --lambda auto");
    mp->add_option("--sigma", mp_sigma, "Sinogram noise standard deviation");
    mp->add_option("--mu", mp_mu, "Splitting parameter (default lambda)");
    mp->add_option("--outer-iters", mp_outer);
    mp->add_option("--cg-max-iters", mp_cgmax);
    mp->add_option("--cg-tol", mp_cgtol);
    mp->add_option("--truth", mp_truth, "Ground truth for lambda selection and metrics");
    mp->add_option("--out", mp_out)->required();
    mp->add_option("--trace", mp_trace, "Objective trace CSV");
    mp->add_option("--metrics", mp_metrics, "Metrics CSV (needs --truth)");
    mp->add_option("--pgm", mp_pgm);
    mp_ref.add(mp);

    // cm
    auto* cm = app.add_subcommand("cm", "Conditional mean by pCN sampling");
    std::string cm_sino, cm_prior = "nltg", cm_out, cm_ci, cm_diag, cm_init;
    std::size_t cm_size = 128, cm_samples = 100000, cm_thin = 1;
    std::optional<std::size_t> cm_burnin;
    double cm_sigma = 5.0, cm_lambda = 0.003, cm_beta = 2e-3, cm_target = 0.25;
    std::uint64_t cm_seed = 1;
    bool cm_no_adapt = false;
    ReferenceOptions cm_ref;
    cm->add_option("--sinogram", cm_sino)->required();
    cm->add_option("--size", cm_size);
    cm->add_option("--prior", cm_prior, "nltg or tg");
    cm->add_option("--lambda", cm_lambda);
    cm->add_option("--sigma", cm_sigma);
    cm->add_option("--samples", cm_samples);
    cm->add_option("--burnin", cm_burnin, "Default samples / 19");
    cm->add_option("--beta", cm_beta);
    cm->add_option("--target-acceptance", cm_target);
    cm->add_flag("--no-adapt", cm_no_adapt, "Keep beta fixed during burn-in");
    cm->add_option("--thin", cm_thin);
    cm->add_option("--seed", cm_seed);
    cm->add_option("--init", cm_init, "Initial state (default: the reference)");
    cm->add_option("--out", cm_out)->required();
    cm->add_option("--ci", cm_ci, "95% credible interval width image");
    cm->add_option("--diagnostics", cm_diag, "Chain diagnostics CSV");
    cm_ref.add(cm);

    // metrics
    auto* me = app.add_subcommand("metrics", "PSNR and SSIM of an estimate");
    std::string me_est, me_truth, me_method = "estimate", me_sn, me_rn, me_out;
    me->add_option("--estimate", me_est)->required();
    me->add_option("--truth", me_truth)->required();
    me->add_option("--method", me_method);
    me->add_option("--sinogram-noise", me_sn);
    me->add_option("--ref-noise", me_rn);
    me->add_option("--out", me_out, "Append to CSV (header written if new)");

    // reproduce
    auto* rp = app.add_subcommand("reproduce", "Run the experiment matrix");
    ExperimentConfig ex;
    int rp_table = 0;
    std::string rp_kind = "xcat-like", rp_sn = "5,20", rp_rn = "5,20", rp_methods = "fbp,tv,tg,nltv,nltg",
                rp_grid = "0.001,0.002,0.003,0.005", rp_cov = "kernel";
    std::optional<double> rp_h, rp_shift;
    std::optional<std::size_t> rp_burnin;
    bool rp_no_tumor = false, rp_no_wave = false;
    rp->add_option("--table", rp_table, "1: MAP PSNR, 2: MAP SSIM, 3: CM, 0: all rows");
    rp->add_option("--phantom", rp_kind);
    rp->add_option("--size", ex.size);
    rp->add_flag("--no-tumor", rp_no_tumor);
    rp->add_flag("--no-wave", rp_no_wave);
    rp->add_option("--angles", ex.n_angles);
    rp->add_option("--extent", ex.detector_extent);
    rp->add_option("--reference-angles", ex.reference_angles);
    rp->add_option("--sinogram-noise", rp_sn);
    rp->add_option("--reference-noise", rp_rn);
    rp->add_option("--methods", rp_methods);
    rp->add_flag("--map,!--no-map", ex.run_map, "MAP estimates (default on)");
    rp->add_flag("--cm,!--no-cm", ex.run_cm, "CM estimates for tg and nltg (default off; table 3 turns it on)");
    rp->add_option("--lambda-grid", rp_grid);
    rp->add_option("--h", rp_h);
    rp->add_option("--covariance", rp_cov);
    rp->add_option("--shift", rp_shift);
    rp->add_option("--gaussian-weight", ex.gaussian_weight);
    rp->add_option("--outer-iters", ex.outer_iters);
    rp->add_option("--cg-max-iters", ex.cg_max_iters);
    rp->add_option("--cg-tol", ex.cg_tol);
    rp->add_option("--samples", ex.cm_samples);
    rp->add_option("--burnin", rp_burnin);
    rp->add_option("--beta", ex.cm_beta);
    rp->add_option("--thin", ex.cm_thin);
    rp->add_option("--output-dir", ex.output_dir);
    rp->add_option("--seed", ex.master_seed);

    const auto args = expand_config(argc, argv);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    if (ph->parsed()) {
        Phantom p{parse_phantom_kind(ph_kind), ph_size, std::nullopt, std::nullopt};
        if (!ph_tumor.empty()) {
            const auto t = parse_list(ph_tumor, "tumor");
            detail::require(t.size() == 4, "--tumor expects x,y,radius,intensity");
            p.tumor = Tumor{t[0], t[1], t[2], t[3]};
        }
        if (!ph_wave.empty()) {
            const auto w = parse_list(ph_wave, "wave");
            detail::require(w.size() == 2, "--wave expects amplitude,frequency");
            p.background_wave = BackgroundWave{w[0], w[1]};
        }
        const Image img = generate_phantom(p);
        write_image(ph_out, img);
        if (!ph_pgm.empty()) write_pgm(ph_pgm, img);
    } else if (pr->parsed()) {
        const Image img = read_image(pr_in);
        detail::require(img.width() == img.height(), "projection needs a square image");
        auto g = ScanGeometry::for_image(img.width(), pr_angles);
        g.detector_extent = pr_extent;
        Sinogram y = forward(img, g);
        y.data = add_noise(y.data, {pr_noise, pr_seed});
        write_sinogram(pr_out, apply_mask(std::move(y)));
    } else if (fb->parsed()) {
        const Sinogram y = read_sinogram(fb_in, fb_size);
        Image img = fbp(y, parse_fbp_filter(fb_filter));
        if (fb_clip) img = clip_intensity(img);
        write_image(fb_out, img);
        if (!fb_pgm.empty()) write_pgm(fb_pgm, img);
    } else if (we->parsed()) {
        const Image img = read_image(we_in);
        write_graph(we_out, build_weights(img, PatchKernel{we_pr, we_a, we_h}, we_sr, we_kb, we_kl));
    } else if (mp->parsed()) {
        const Sinogram y = read_sinogram(mp_sino, mp_size);
        const Image ref = read_image(mp_ref.reference);
        detail::require(ref.width() == mp_size && ref.height() == mp_size, "reference size does not match --size");
        const PriorKind prior = parse_prior(mp_prior);
        std::optional<Image> truth;
        if (!mp_truth.empty()) truth = read_image(mp_truth);
        std::optional<WeightGraph> graph;
        std::optional<PriorCovariance> cov;
        if (uses_nonlocal(prior) || uses_gaussian(prior)) {
            const double hv = mp_ref.resolve_h(ref);
            graph = mp_ref.build_graph(ref, hv);
            if (uses_gaussian(prior)) cov = mp_ref.build_cov(ref, hv, *graph);
        } else {
            graph = local_graph(mp_size, mp_size);
        }
        std::vector<double> lambdas;
        if (mp_lambda == "auto") {
            if (!truth) throw UsageError("--lambda auto needs --truth");
            lambdas = parse_list(mp_grid, "lambda grid");
            detail::require(!lambdas.empty(), "lambda grid is empty");
        } else {
            lambdas = parse_list(mp_lambda, "lambda");
            detail::require(lambdas.size() == 1, "--lambda expects one value or 'auto'");
        }
        std::optional<MapResult> best;
        double best_psnr = -std::numeric_limits<double>::infinity();
        for (double lambda : lambdas) {
            MapConfig mc;
            mc.prior = prior;
            mc.lambda = lambda;
            mc.mu = mp_mu ? *mp_mu : lambda;
            mc.sigma = mp_sigma;
            mc.outer_iters = mp_outer;
            mc.cg_max_iters = mp_cgmax;
            mc.cg_tol = mp_cgtol;
            mc.gaussian_weight = mp_ref.gaussian_weight;
            auto res = solve_map(y, ref, mc, *graph, cov ? &*cov : nullptr);
            const double score = truth ? psnr(clip_intensity(res.u), *truth) : 0.0;
            if (!best || score > best_psnr) {
                best = std::move(res);
                best_psnr = score;
            }
        }
        const Image u = clip_intensity(best->u);
        write_image(mp_out, u);
        if (!mp_pgm.empty()) write_pgm(mp_pgm, u);
        if (!mp_trace.empty()) {
            std::ofstream os(mp_trace);
            if (!os) throw UsageError("cannot open '" + mp_trace + "' for writing");
            write_trace_csv(os, best->trace);
        }
        if (truth) {
            const auto q = assess(u, *truth, to_string(prior), format_level(mp_sigma), "");
            if (!mp_metrics.empty()) {
                std::ofstream os(mp_metrics);
                if (!os) throw UsageError("cannot open '" + mp_metrics + "' for writing");
                write_quality_header(os);
                write_quality_row(os, q);
            } else {
                write_quality_header(std::cout);
                write_quality_row(std::cout, q);
            }
        } else if (!mp_metrics.empty()) {
            throw UsageError("--metrics needs --truth");
        }
    } else if (cm->parsed()) {
        const Sinogram y = read_sinogram(cm_sino, cm_size);
        const Image ref = read_image(cm_ref.reference);
        detail::require(ref.width() == cm_size && ref.height() == cm_size, "reference size does not match --size");
        const double hv = cm_ref.resolve_h(ref);
        const WeightGraph graph = cm_ref.build_graph(ref, hv);
        const PriorCovariance cov = cm_ref.build_cov(ref, hv, graph);
        PcnConfig pc;
        pc.prior = parse_prior(cm_prior);
        pc.lambda = cm_lambda;
        pc.sigma = cm_sigma;
        pc.gaussian_weight = cm_ref.gaussian_weight;
        pc.beta = cm_beta;
        pc.target_acceptance = cm_target;
        pc.adapt_burnin = !cm_no_adapt;
        pc.n_samples = cm_samples;
        pc.n_burnin = cm_burnin ? *cm_burnin : cm_samples / 19;
        pc.thin = cm_thin;
        pc.seed = cm_seed;
        const Image init = cm_init.empty() ? ref : read_image(cm_init);
        const auto chain = run_chain(y, pc, graph, cov, init);
        write_image(cm_out, cm_image(chain.stats));
        if (!cm_ci.empty()) write_image(cm_ci, ci_map(chain.stats));
        if (!cm_diag.empty()) {
            std::ofstream os(cm_diag);
            if (!os) throw UsageError("cannot open '" + cm_diag + "' for writing");
            write_diagnostics_csv(os, chain.diagnostics);
        }
        std::cout << "acceptance " << chain.stats.acceptance_rate() << " beta " << chain.final_beta << '\n';
    } else if (me->parsed()) {
        const auto q = assess(read_image(me_est), read_image(me_truth), me_method, me_sn, me_rn);
        if (me_out.empty()) {
            write_quality_header(std::cout);
            write_quality_row(std::cout, q);
        } else {
            const bool fresh = !std::filesystem::exists(me_out);
            std::ofstream os(me_out, std::ios::app);
            if (!os) throw UsageError("cannot open '" + me_out + "' for writing");
            if (fresh) write_quality_header(os);
            write_quality_row(os, q);
        }
    } else if (rp->parsed()) {
        ex.phantom = parse_phantom_kind(rp_kind);
        if (rp_no_tumor) ex.tumor.reset();
        if (rp_no_wave) ex.wave.reset();
        ex.sinogram_noise = parse_list(rp_sn, "sinogram noise");
        ex.reference_noise = parse_list(rp_rn, "reference noise");
        ex.methods.clear();
        for (const auto& m : split_words(rp_methods)) ex.methods.push_back(parse_method(m));
        ex.lambda_grid = parse_list(rp_grid, "lambda grid");
        ex.h = rp_h;
        ex.covariance = parse_covariance_model(rp_cov);
        ex.covariance_shift = rp_shift;
        ex.cm_burnin = rp_burnin;
        if (rp_table == 3) ex.run_cm = true;
        const auto result = run_experiment(ex, true, &std::cerr);
        const auto rows = table_rows(result.rows, rp_table);
        const auto csv = result.directory / (rp_table ? "table" + std::to_string(rp_table) + ".csv" : "results.csv");
        {
            std::ofstream os(csv);
            if (!os) throw UsageError("cannot write '" + csv.string() + "'");
            write_results_csv(os, rows);
        }
        {
            std::ofstream os(result.directory / "selection.csv");
            write_selection_csv(os, result.rows);
        }
        write_results_csv(std::cout, rows);
        auto assertions = check_map_ordering(result.rows);
        const auto trends = check_cm_trends(result.rows);
        assertions.insert(assertions.end(), trends.begin(), trends.end());
        for (const auto& a : assertions)
            std::cout << (a.passed ? "PASS " : "FAIL ") << a.name << ": " << a.detail << '\n';
        std::cout << "outputs: " << result.directory.string() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const nltg::UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nltg::FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const nltg::NumericalError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
