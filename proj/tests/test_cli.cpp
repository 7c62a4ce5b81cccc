#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nltg/image_io.hpp>
#include <nltg/radon.hpp>

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("nltg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    CliResult run(const std::string& args) const {
        const std::string out = path("stdout.txt"), err = path("stderr.txt");
        const std::string cmd = std::string(NLTG_CLI_PATH) + " " + args + " >" + out + " 2>" + err;
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    // phantom -> sinogram -> noisy reference, all at 32x32.
    void pipeline_inputs() const {
        ASSERT_EQ(run("phantom --kind xcat-like --size 32 --tumor 0.3,0.1,0.1,150 --out " + path("gt.img")).code, 0);
        ASSERT_EQ(run("phantom --kind xcat-like --size 32 --out " + path("ori.img")).code, 0);
        ASSERT_EQ(run("project --in " + path("gt.img") + " --angles 12 --noise 5 --seed 3 --out " + path("y.sin")).code, 0);
        ASSERT_EQ(run("project --in " + path("ori.img") + " --angles 90 --noise 5 --seed 4 --out " + path("yr.sin")).code, 0);
        ASSERT_EQ(run("fbp --in " + path("yr.sin") + " --size 32 --filter hann --clip --out " + path("ref.img")).code, 0);
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    const auto none = run("");
    EXPECT_EQ(none.code, 2);
    EXPECT_EQ(run("phantom --bogus 1 --out " + path("x.img")).code, 2);
    EXPECT_EQ(run("phantom").code, 2);  // missing --out
    const auto kind = run("phantom --kind nope --out " + path("x.img"));
    EXPECT_EQ(kind.code, 2);
    EXPECT_EQ(kind.err.rfind("error: ", 0), 0u);
    EXPECT_EQ(kind.err.find('\n'), kind.err.size() - 1);  // single line
    EXPECT_EQ(run("fbp --in " + path("missing.sin") + " --out " + path("x.img")).code, 2);
    EXPECT_EQ(run("phantom --size 32 --out " + path("x.img") + " --config " + path("nofile.cfg")).code, 2);
}

TEST_F(Cli, MalformedFileExitsThree) {
    std::ofstream(path("junk.img")) << "not an image";
    EXPECT_EQ(run("project --in " + path("junk.img") + " --out " + path("y.sin")).code, 3);
    std::ofstream(path("junk.sin")) << "NLTG-SIN1\n3 x\n";
    EXPECT_EQ(run("fbp --in " + path("junk.sin") + " --out " + path("x.img")).code, 3);
}

TEST_F(Cli, NumericalFailureExitsFour) {
    pipeline_inputs();
    // The sparse restricted kernel is far from positive definite at a tiny shift.
    const auto r = run("map --sinogram " + path("y.sin") + " --size 32 --reference " + path("ref.img") +
                       " --h 30 --covariance sparse --shift 1e-6 --lambda 0.003 --out " + path("u.img"));
    EXPECT_EQ(r.code, 4) << r.err;
    EXPECT_NE(r.err.find("increase the shift"), std::string::npos);
}

TEST_F(Cli, PipelineRunsAndIsDeterministic) {
    pipeline_inputs();
    ASSERT_EQ(run("weights --in " + path("ref.img") + " --h 15 --out " + path("w.wgt")).code, 0);
    const std::string map = "map --sinogram " + path("y.sin") + " --size 32 --reference " + path("ref.img") +
                            " --original " + path("ori.img") + " --prior nltg --lambda auto --lambda-grid 0.002,0.005" +
                            " --outer-iters 5 --cg-max-iters 5 --truth " + path("gt.img") + " --trace " +
                            path("trace.csv") + " --metrics " + path("m.csv");
    ASSERT_EQ(run(map + " --out " + path("u1.img")).code, 0);
    ASSERT_EQ(run(map + " --out " + path("u2.img")).code, 0);
    EXPECT_EQ(slurp(path("u1.img")), slurp(path("u2.img")));
    EXPECT_EQ(slurp(path("trace.csv")).substr(0, 35), "iteration,phi,lambda_j,prior,total\n");
    EXPECT_EQ(slurp(path("m.csv")).rfind("method,sinogram_noise,ref_noise,psnr,ssim\nNLTG,5,,", 0), 0u);

    const auto with_graph = run("map --sinogram " + path("y.sin") + " --size 32 --reference " + path("ref.img") +
                                " --graph " + path("w.wgt") + " --h 15 --prior nltv --lambda 0.003 --outer-iters 3 --out " +
                                path("u3.img"));
    EXPECT_EQ(with_graph.code, 0) << with_graph.err;

    const std::string cm = "cm --sinogram " + path("y.sin") + " --size 32 --reference " + path("ref.img") +
                           " --h 15 --samples 400 --seed 9 --diagnostics " + path("d.csv") + " --ci " + path("ci.img");
    const auto c1 = run(cm + " --out " + path("c1.img"));
    ASSERT_EQ(c1.code, 0) << c1.err;
    EXPECT_EQ(c1.out.rfind("acceptance ", 0), 0u);
    ASSERT_EQ(run(cm + " --out " + path("c2.img")).code, 0);
    EXPECT_EQ(slurp(path("c1.img")), slurp(path("c2.img")));
    EXPECT_EQ(nltg::read_image(path("ci.img")).width(), 32u);

    const auto m = run("metrics --estimate " + path("u1.img") + " --truth " + path("gt.img") +
                       " --method NLTG --sinogram-noise 5 --ref-noise 5");
    ASSERT_EQ(m.code, 0);
    EXPECT_EQ(m.out.rfind("method,sinogram_noise,ref_noise,psnr,ssim\nNLTG,5,5,", 0), 0u);
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
    std::ofstream(path("p.cfg")) << "# phantom settings\nkind = shepp-logan\nsize=48\n";
    ASSERT_EQ(run("phantom --config " + path("p.cfg") + " --out " + path("a.img")).code, 0);
    EXPECT_EQ(nltg::read_image(path("a.img")).width(), 48u);
    ASSERT_EQ(run("phantom --config " + path("p.cfg") + " --size 24 --out " + path("b.img")).code, 0);
    EXPECT_EQ(nltg::read_image(path("b.img")).width(), 24u);
    std::ofstream(path("bad.cfg")) << "size 48\n";
    EXPECT_EQ(run("phantom --config " + path("bad.cfg") + " --out " + path("c.img")).code, 2);
}

TEST_F(Cli, ReproduceSmallMatrix) {
    const std::string args = "reproduce --size 24 --angles 12 --reference-angles 60 --sinogram-noise 5 "
                             "--reference-noise 5 --methods fbp,tv,nltg --lambda-grid 0.003 --outer-iters 3 "
                             "--cg-max-iters 3 --output-dir " + path("out");
    const auto a = run(args);
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out.rfind("method,sinogram_noise,ref_noise,psnr,ssim\nFBP,5,,", 0), 0u);
    EXPECT_NE(a.out.find("\nNLTG,5,5,"), std::string::npos);
    const auto pos = a.out.find("outputs: ");
    ASSERT_NE(pos, std::string::npos);
    const fs::path outdir = a.out.substr(pos + 9, a.out.find('\n', pos) - pos - 9);
    EXPECT_TRUE(fs::exists(outdir / "results.csv"));
    EXPECT_TRUE(fs::exists(outdir / "selection.csv"));
    EXPECT_TRUE(fs::exists(outdir / "config.txt"));
    const std::string first = slurp(outdir / "results.csv");
    const auto b = run(args);
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(slurp(outdir / "results.csv"), first);
}
