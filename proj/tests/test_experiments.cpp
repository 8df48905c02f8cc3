#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bnk/errors.hpp"
#include "bnk/experiments.hpp"

using namespace bnk;

namespace {

const std::filesystem::path kData = std::filesystem::path(BNK_TEST_DATA_DIR) / "mcycle.csv";

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("bnk_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// p(y | f1) with a second latent the density ignores.
class Padded final : public Likelihood {
public:
    std::string name() const override { return "padded"; }
    int latent_dim() const override { return 2; }
    int obs_dim() const override { return 1; }
    bool continuous() const override { return true; }
    LogDensity log_density(const Vec& y, const Vec& f) const override {
        const LogDensity a = inner_->log_density(y, f.head(1));
        LogDensity out{a.value, Vec::Zero(2), Mat::Zero(2, 2)};
        out.grad(0) = a.grad(0);
        out.hess(0, 0) = a.hess(0, 0);
        return out;
    }
    ConditionalMoments moments(const Vec& f, bool) const override { return inner_->moments(f.head(1)); }

private:
    LikelihoodPtr inner_ = make_gaussian(0.4);
};

ExperimentConfig small_hsced(const std::string& rule, int iters) {
    ExperimentConfig c = ExperimentConfig::defaults(ExperimentKind::hsced);
    MethodConfig m = MethodConfig::from_name(rule);
    m.rho = c.method.rho;
    m.xi = c.method.xi;
    m.alpha = c.method.alpha;
    c.method = m;
    c.iters = iters;
    c.data = kData;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(Data, MotorcycleIsStandardised) {
    const Dataset d = load_motorcycle(kData);
    ASSERT_EQ(d.X.rows(), 133);
    for (const Mat* A : {&d.X, &d.Y}) {
        EXPECT_NEAR(A->mean(), 0.0, 1e-10);
        EXPECT_NEAR(std::sqrt(A->squaredNorm() / 133.0), 1.0, 1e-10);
    }
}

TEST(Data, MalformedCsvReportsRow) {
    const auto dir = temp_dir("csv");
    {
        std::ofstream(dir / "one_col.csv") << "times,accel\n1.0,2.0\n2.0\n";
        std::ofstream(dir / "text.csv") << "times,accel\n1.0,2.0\n2.0,abc\n";
    }
    try {
        load_motorcycle(dir / "one_col.csv");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_motorcycle(dir / "text.csv"), ParseError);
    EXPECT_THROW(load_motorcycle(dir / "missing.csv"), ParseError);
}

TEST(Data, ProductSampleIsDeterministic) {
    const Dataset a = synth_product(11), b = synth_product(11), c = synth_product(12);
    ASSERT_EQ(a.X.rows(), 1000);
    EXPECT_DOUBLE_EQ(a.X(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(a.X(999, 0), 200.0);
    EXPECT_TRUE(a.Y == b.Y);
    EXPECT_TRUE(*a.F == *b.F);
    EXPECT_FALSE(a.Y == c.Y);
}

TEST(Data, ProductEnvelopeVarianceOverSeeds) {
    double sum = 0.0, sq = 0.0;
    long count = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Vec f2 = synth_product(100 + s).F->col(1);
        sum += f2.sum();
        sq += f2.squaredNorm();
        count += f2.size();
    }
    const double mean = sum / count;
    EXPECT_NEAR(sq / count - mean * mean, 2.0, 0.5);
}

TEST(Data, GprnMaskAndNoise) {
    const Mat S = gprn_noise_covariance();
    Mat expect(3, 3);
    expect << 0.02, -0.015, -0.005, -0.015, 0.04, 0.01, -0.005, 0.01, 0.06;
    EXPECT_TRUE(S == expect);

    const GprnData g = synth_gprn(5);
    ASSERT_EQ(g.data.Y.rows(), 400);
    EXPECT_DOUBLE_EQ(g.data.X(0, 0), -17.0);
    EXPECT_DOUBLE_EQ(g.data.X(399, 0), 147.0);
    ASSERT_EQ(g.held_out.size(), 133u);
    EXPECT_EQ(g.held_out.front(), 134);
    EXPECT_EQ(g.held_out.back(), 266);
    for (int n = 0; n < 400; ++n) {
        const bool hidden = n >= 134 && n <= 266;
        EXPECT_FALSE(std::isnan(g.data.Y(n, 0)));
        for (int j = 1; j < 3; ++j) {
            EXPECT_EQ(std::isnan(g.data.Y(n, j)), hidden) << n;
            EXPECT_EQ(std::isnan(g.Y_test(n, j)), !hidden) << n;
        }
    }
    const GprnData h = synth_gprn(5);
    EXPECT_TRUE(g.Y_clean == h.Y_clean);
}

TEST(Data, FoldsPartitionDeterministically) {
    const auto a = cv_folds(133, 4, 9), b = cv_folds(133, 4, 9);
    EXPECT_EQ(a, b);
    std::vector<int> all;
    for (const auto& f : a) {
        EXPECT_GE(f.size(), 33u);
        EXPECT_LE(f.size(), 34u);
        EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
        all.insert(all.end(), f.begin(), f.end());
    }
    std::sort(all.begin(), all.end());
    for (int n = 0; n < 133; ++n) EXPECT_EQ(all[n], n);
    EXPECT_NE(cv_folds(133, 4, 10), a);
    EXPECT_THROW(cv_folds(3, 4, 0), ConfigError);
}

TEST(Metrics, NlpdMatchesConjugatePredictive) {
    const LikelihoodPtr lik = make_gaussian(0.4);
    std::vector<GaussianState> q = {{Vec::Constant(1, 0.3), Mat::Constant(1, 1, 0.5)},
                                    {Vec::Constant(1, -1.0), Mat::Constant(1, 1, 0.1)}};
    Mat Y(2, 1);
    Y << 0.9, -0.2;
    double expect = 0.0;
    for (int n = 0; n < 2; ++n)
        expect -= log_normal_pdf(Y.row(n).transpose(), q[n].mean, q[n].cov + Mat::Constant(1, 1, 0.4)) / 2.0;
    EXPECT_NEAR(nlpd(q, *lik, Y, gauss_hermite(1, 20)), expect, 1e-8);

    // Unobserved rows are skipped.
    Mat Ym = Y;
    Ym(1, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_NEAR(nlpd(q, *lik, Ym, gauss_hermite(1, 20)),
                -log_normal_pdf(Y.row(0).transpose(), q[0].mean, q[0].cov + Mat::Constant(1, 1, 0.4)), 1e-8);
}

TEST(Metrics, NlpdIgnoresUnusedLatents) {
    const LikelihoodPtr lik = make_gaussian(0.4);
    const Padded padded;
    std::vector<GaussianState> q1 = {{Vec::Constant(1, 0.3), Mat::Constant(1, 1, 0.5)}};
    Mat C(2, 2);
    C << 0.5, 0.2, 0.2, 1.3;
    std::vector<GaussianState> q2 = {{Vec(Eigen::Vector2d(0.3, -2.0)), C}};
    const Mat Y = Mat::Constant(1, 1, 0.9);
    EXPECT_NEAR(nlpd(q1, *lik, Y, gauss_hermite(1, 20)), nlpd(q2, padded, Y, gauss_hermite(2, 20)), 1e-10);
}

TEST(Metrics, Rmse) {
    const Vec a = Vec::LinSpaced(5, 0.0, 1.0);
    EXPECT_EQ(rmse(a, a), 0.0);
    EXPECT_NEAR(rmse(a, a.array() + 2.0), 2.0, 1e-15);
    EXPECT_THROW(rmse(a, Vec::Zero(3)), ConfigError);
}

TEST(Experiment, HscedWritesFilesDeterministically) {
    ExperimentConfig c = small_hsced("vgn", 4);
    c.out = temp_dir("run_a");
    const ExperimentResult r = run_experiment(c);
    ASSERT_EQ(r.folds.size(), 4u);
    EXPECT_EQ(r.total_violations, 0);
    EXPECT_GT(r.min_site_eig, 0.0);
    for (const auto& f : r.folds) {
        EXPECT_EQ(f.status, FitStatus::max_iters);
        ASSERT_EQ(f.rows.size(), 4u);
        for (const auto& row : f.rows) EXPECT_TRUE(std::isfinite(row.test_nlpd));
    }
    for (const char* f : {"fold_0.csv", "fold_1.csv", "fold_2.csv", "fold_3.csv", "mean.csv", "tidy.csv", "timing.csv"})
        EXPECT_TRUE(std::filesystem::exists(c.out / f)) << f;
    EXPECT_EQ(slurp(c.out / "mean.csv").substr(0, 40), "iteration,energy,train_nlpd,test_nlpd,vi");

    ExperimentConfig c2 = c;
    c2.out = temp_dir("run_b");
    run_experiment(c2);
    for (const char* f : {"fold_0.csv", "fold_3.csv", "mean.csv", "tidy.csv"})
        EXPECT_EQ(slurp(c.out / f), slurp(c2.out / f)) << f;
}

TEST(Experiment, UnguardedFailureEndsAtLastStableStep) {
    ExperimentConfig c = small_hsced("newton", 30);
    c.method.rho = 1.0;
    c.out = temp_dir("newton");
    const ExperimentResult r = run_experiment(c);
    ASSERT_TRUE(r.psd_failure());
    for (const auto& f : r.folds) {
        if (f.status != FitStatus::psd_failure) continue;
        ASSERT_FALSE(f.rows.empty());
        EXPECT_TRUE(f.rows.back().last_stable);
        EXPECT_GT(f.rows.back().violations, 0);
    }
    const std::string csv = slurp(c.out / "fold_0.csv") + slurp(c.out / "fold_1.csv") + slurp(c.out / "fold_2.csv") +
                            slurp(c.out / "fold_3.csv");
    EXPECT_NE(csv.find("last_stable_step"), std::string::npos);
}

TEST(Experiment, ConfigErrorsBeforeCompute) {
    ExperimentConfig c = small_hsced("vgn", 2);
    c.folds = 1;
    EXPECT_THROW(run_experiment(c), ConfigError);
    c = small_hsced("vgn", 2);
    c.iters = 0;
    EXPECT_THROW(run_experiment(c), ConfigError);
    c = small_hsced("vgn", 2);
    c.backend = BackendKind::markov;  // repeated time stamps in the data
    EXPECT_THROW(run_experiment(c), ConfigError);
    c = small_hsced("vgn", 2);
    c.data = "/nonexistent/file.csv";
    EXPECT_THROW(run_experiment(c), ConfigError);
    EXPECT_THROW(parse_experiment("banana"), ConfigError);
}

TEST(Experiment, SparseAndCustomRun) {
    ExperimentConfig c = small_hsced("vgn", 2);
    c.backend = BackendKind::sparse;
    c.inducing = 20;
    const ExperimentResult r = run_experiment(c);
    EXPECT_TRUE(std::isfinite(r.final_test_nlpd));

    const auto dir = temp_dir("custom");
    {
        std::ofstream o(dir / "xy.csv");
        o << "x,y\n";
        for (int n = 0; n < 40; ++n) o << 0.1 * n << ',' << std::sin(0.1 * n) << '\n';
    }
    ExperimentConfig cu = ExperimentConfig::defaults(ExperimentKind::custom);
    cu.method = MethodConfig::from_name("newton");
    cu.method.rho = 1.0;
    cu.data = dir / "xy.csv";
    cu.likelihood = "gaussian";
    cu.noise = 0.01;
    cu.iters = 2;
    const ExperimentResult rc = run_experiment(cu);
    for (const auto& f : rc.folds) EXPECT_EQ(f.rows.size(), 2u);
    EXPECT_LT(rc.final_test_nlpd, 0.0);
}
