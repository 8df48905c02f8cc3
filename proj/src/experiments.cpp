#include "bnk/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "bnk/errors.hpp"

#ifndef BNK_DATA_DIR
#define BNK_DATA_DIR "data"
#endif

namespace bnk {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double parse_number(const std::string& field, int line) {
    const std::string t = trim(field);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ParseError("row " + std::to_string(line) + ": '" + t + "' is not a number");
    return v;
}

// Reads (x, y) pairs; a first line that does not parse is taken as a header.
Dataset read_xy(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::vector<double> xs, ys;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
        if (lineno == 1) {
            try {
                parse_number(fields.at(0), lineno);
            } catch (const std::exception&) {
                continue;
            }
        }
        if (fields.size() != 2)
            throw ParseError("row " + std::to_string(lineno) + ": expected 2 columns, found " +
                             std::to_string(fields.size()));
        xs.push_back(parse_number(fields[0], lineno));
        ys.push_back(parse_number(fields[1], lineno));
    }
    if (xs.empty()) throw ParseError(path.string() + " has no data rows");
    Dataset d;
    d.X = Eigen::Map<Vec>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    d.Y = Eigen::Map<Vec>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    return d;
}

void standardise(Mat& A) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
        const double mu = A.col(j).mean();
        A.col(j).array() -= mu;
        const double sd = std::sqrt(A.col(j).squaredNorm() / static_cast<double>(A.rows()));
        if (sd > 0.0) A.col(j) /= sd;
    }
}

Mat linspace(double a, double b, int n) {
    return Vec::LinSpaced(n, a, b);
}

Vec standard_normals(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> z;
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = z(rng);
    return v;
}

// One draw from GP(0, k) at X.
Vec sample_gp(const Kernel& k, const Mat& X, std::mt19937_64& rng) {
    Mat K = gram(k, X, X);
    K.diagonal().array() += 1e-8 * k.variance();
    const Mat L = cholesky_psd(SymMatrix(K), 1e-10).L;
    return L * standard_normals(rng, static_cast<int>(X.rows()));
}

Mat take_rows(const Mat& A, const std::vector<int>& idx) {
    Mat out(static_cast<Eigen::Index>(idx.size()), A.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = A.row(idx[i]);
    return out;
}

LikelihoodPtr likelihood_by_name(const std::string& name, double noise) {
    if (name == "gaussian") return make_gaussian(noise);
    if (name == "heteroscedastic" || name == "hsced") return make_heteroscedastic();
    if (name == "bernoulli") return make_bernoulli_logit();
    if (name == "poisson") return make_poisson_exp();
    throw ConfigError("unknown likelihood '" + name + "' (gaussian, heteroscedastic, bernoulli, poisson)");
}

Kernel unit_matern32_stack(int D) {
    if (D == 1) return Kernel::matern32(1.0, 1.0);
    return Kernel::stack(std::vector<Kernel>(D, Kernel::matern32(1.0, 1.0)));
}

Kernel product_kernel() {
    return Kernel::stack({Kernel::product({Kernel::cosine(0.4 * M_PI), Kernel::matern32(1.0, 500.0)}),
                          Kernel::matern52(2.0, 3.0)});
}

Kernel gprn_kernel() {
    std::vector<Kernel> parts(2, Kernel::matern52(1.0, 10.0));
    parts.insert(parts.end(), 6, Kernel::matern52(1.0, 70.0));
    return Kernel::stack(std::move(parts));
}

double min_site_eigenvalue(const SiteParams& sites) {
    double lo = std::numeric_limits<double>::infinity();
    for (int n = 0; n < sites.size(); ++n) lo = std::min(lo, min_eigenvalue(sites[n].precision()));
    return lo;
}

// Everything one fold needs; built up front so data and config errors surface
// before any fitting starts.
struct FoldProblem {
    BackendPtr backend;
    Mat Y_train;
    Mat X_test;                      // empty: test rows are the training rows (gprn)
    Mat Y_test;
    std::optional<Mat> F_test;       // ground-truth latents at the test inputs
    std::optional<Mat> Yclean_test;  // noise-free outputs at the test rows (gprn)
};

struct Setup {
    Kernel kernel = Kernel::matern32(1.0, 1.0);
    LikelihoodPtr lik;
    std::vector<FoldProblem> folds;
    std::vector<std::string> rmse_names;
};

Mat inducing_inputs(const Mat& X, int M) {
    const double lo = X.col(0).minCoeff(), hi = X.col(0).maxCoeff();
    if (M <= 1) return Mat::Constant(1, 1, 0.5 * (lo + hi));
    return linspace(lo, hi, M);
}

BackendPtr build_backend(const ExperimentConfig& cfg, const Kernel& k, const Mat& X) {
    std::optional<Mat> Z;
    if (cfg.backend == BackendKind::sparse) {
        const int M = cfg.inducing > 0 ? cfg.inducing : std::max(1, static_cast<int>(X.rows()) / 4);
        Z = inducing_inputs(X, M);
    }
    return make_backend(cfg.backend, k, X, Z);
}

void add_cv_folds(Setup& s, const ExperimentConfig& cfg, const Dataset& d) {
    const int N = static_cast<int>(d.X.rows());
    for (const auto& test : cv_folds(N, cfg.folds, cfg.seed)) {
        std::vector<int> train;
        std::size_t t = 0;
        for (int n = 0; n < N; ++n) {
            if (t < test.size() && test[t] == n) ++t;
            else train.push_back(n);
        }
        FoldProblem fp;
        fp.backend = build_backend(cfg, s.kernel, take_rows(d.X, train));
        fp.Y_train = take_rows(d.Y, train);
        fp.X_test = take_rows(d.X, test);
        fp.Y_test = take_rows(d.Y, test);
        if (d.F) fp.F_test = take_rows(*d.F, test);
        s.folds.push_back(std::move(fp));
    }
}

Setup make_setup(const ExperimentConfig& cfg) {
    Setup s;
    switch (cfg.experiment) {
    case ExperimentKind::hsced: {
        s.kernel = unit_matern32_stack(2);
        s.lik = make_heteroscedastic();
        add_cv_folds(s, cfg, load_motorcycle(cfg.data.empty() ? std::filesystem::path(BNK_DATA_DIR) / "mcycle.csv"
                                                               : cfg.data));
        break;
    }
    case ExperimentKind::product: {
        s.kernel = product_kernel();
        s.lik = make_product(0.1);
        s.rmse_names = {"rmse_f1", "rmse_f2"};
        add_cv_folds(s, cfg, synth_product(cfg.seed));
        break;
    }
    case ExperimentKind::gprn: {
        s.kernel = gprn_kernel();
        s.lik = make_gprn(gprn_noise_covariance());
        s.rmse_names = {"rmse_y"};
        for (int k = 0; k < cfg.folds; ++k) {
            GprnData g = synth_gprn(cfg.seed + static_cast<std::uint64_t>(k));
            FoldProblem fp;
            fp.backend = build_backend(cfg, s.kernel, g.data.X);
            fp.Y_train = g.data.Y;
            fp.Y_test = g.Y_test;
            fp.Yclean_test = g.Y_clean;
            s.folds.push_back(std::move(fp));
        }
        break;
    }
    case ExperimentKind::custom: {
        if (cfg.data.empty()) throw ConfigError("custom experiment needs a data file");
        s.lik = likelihood_by_name(cfg.likelihood, cfg.noise);
        s.kernel = unit_matern32_stack(s.lik->latent_dim());
        add_cv_folds(s, cfg, read_xy(cfg.data));
        break;
    }
    }
    return s;
}

MetricRow measure(const Backend& b, const FoldProblem& fp, const Likelihood& lik, const Quadrature& quad) {
    MetricRow r;
    r.train_nlpd = nlpd(b.marginals(), lik, fp.Y_train, quad);
    const std::vector<GaussianState> q = fp.X_test.size() ? b.predict(fp.X_test) : b.marginals();
    r.test_nlpd = nlpd(q, lik, fp.Y_test, quad);
    if (fp.F_test) {
        const int D = lik.latent_dim();
        for (int d = 0; d < D; ++d) {
            Vec est(static_cast<Eigen::Index>(q.size()));
            for (std::size_t n = 0; n < q.size(); ++n) est(static_cast<Eigen::Index>(n)) = q[n].mean(d);
            r.rmse.push_back(rmse(est, fp.F_test->col(d)));
        }
    }
    if (fp.Yclean_test) {
        std::vector<double> est, truth;
        for (Eigen::Index n = 0; n < fp.Y_test.rows(); ++n) {
            const Vec yn = fp.Y_test.row(n).transpose();
            if (observed(yn).empty()) continue;
            const Vec mu = gaussian_expectation(q[n].mean, q[n].cov, [&](const Vec& f) { return Vec(lik.moments(f).nu); }, quad);
            for (int j : observed(yn)) {
                est.push_back(mu(j));
                truth.push_back((*fp.Yclean_test)(n, j));
            }
        }
        r.rmse.push_back(rmse(Eigen::Map<Vec>(est.data(), static_cast<Eigen::Index>(est.size())),
                              Eigen::Map<Vec>(truth.data(), static_cast<Eigen::Index>(truth.size()))));
    }
    r.min_site_eig = min_site_eigenvalue(b.sites());
    return r;
}

FoldResult run_fold(const ExperimentConfig& cfg, FoldProblem& fp, const Likelihood& lik) {
    const Quadrature quad = cfg.method.quadrature ? *cfg.method.quadrature : default_quadrature(lik.latent_dim());
    FitOptions opts;
    opts.max_iters = cfg.iters;
    opts.seed = cfg.seed;
    opts.stop_on_convergence = false;
    // Folds already run concurrently; keep each fit single-threaded so the
    // result does not depend on how the two levels share threads.
    opts.parallel = false;

    FoldResult out;
    const auto t0 = std::chrono::steady_clock::now();
    const auto elapsed = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };
    const FitResult fr = fit(*fp.backend, lik, fp.Y_train, cfg.method, opts, {},
                             [&](const IterationRecord& rec, const Backend& b) {
                                 MetricRow row = measure(b, fp, lik, quad);
                                 row.iteration = rec.iteration;
                                 row.energy = rec.energy;
                                 row.violations = rec.violations;
                                 row.wall_ms = elapsed();
                                 out.rows.push_back(std::move(row));
                             });
    out.status = fr.status;
    out.message = fr.message;
    if (fr.status == FitStatus::psd_failure || fr.status == FitStatus::numerical_failure) {
        MetricRow row = measure(*fp.backend, fp, lik, quad);
        row.iteration = fr.trace.back().iteration;
        row.energy = out.rows.empty() ? kNaN : out.rows.back().energy;
        row.violations = fr.trace.back().violations;
        row.wall_ms = elapsed();
        row.last_stable = true;
        out.rows.push_back(std::move(row));
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_rows(const std::filesystem::path& file, const std::vector<MetricRow>& rows,
                const std::vector<std::string>& rmse_names) {
    std::ofstream o(file, std::ios::binary);
    if (!o) throw ConfigError("cannot write " + file.string());
    o << "iteration,energy,train_nlpd,test_nlpd";
    for (const auto& n : rmse_names) o << ',' << n;
    o << ",violations,min_site_eig,status\n";
    for (const auto& r : rows) {
        o << r.iteration << ',' << fmt(r.energy) << ',' << fmt(r.train_nlpd) << ',' << fmt(r.test_nlpd);
        for (double e : r.rmse) o << ',' << fmt(e);
        o << ',' << r.violations << ',' << fmt(r.min_site_eig) << ',' << (r.last_stable ? "last_stable_step" : "ok")
          << '\n';
    }
}

std::vector<MetricRow> mean_rows(const std::vector<FoldResult>& folds) {
    std::size_t len = 0;
    for (const auto& f : folds) len = std::max(len, f.rows.size());
    std::vector<MetricRow> mean;
    for (std::size_t i = 0; i < len; ++i) {
        MetricRow m;
        m.iteration = static_cast<int>(i) + 1;
        m.min_site_eig = std::numeric_limits<double>::infinity();
        int count = 0;
        for (const auto& f : folds) {
            if (f.rows.empty()) continue;
            const MetricRow& r = f.rows[std::min(i, f.rows.size() - 1)];
            if (i < f.rows.size()) m.iteration = r.iteration;
            m.last_stable = m.last_stable || (r.last_stable && i + 1 >= f.rows.size());
            m.energy += r.energy;
            m.train_nlpd += r.train_nlpd;
            m.test_nlpd += r.test_nlpd;
            if (m.rmse.empty()) m.rmse.assign(r.rmse.size(), 0.0);
            for (std::size_t j = 0; j < r.rmse.size(); ++j) m.rmse[j] += r.rmse[j];
            m.violations += i < f.rows.size() ? r.violations : 0;
            m.min_site_eig = std::min(m.min_site_eig, r.min_site_eig);
            m.wall_ms += r.wall_ms;
            ++count;
        }
        if (count == 0) continue;
        m.energy /= count;
        m.train_nlpd /= count;
        m.test_nlpd /= count;
        for (double& e : m.rmse) e /= count;
        m.wall_ms /= count;
        mean.push_back(std::move(m));
    }
    return mean;
}

void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& res) {
    std::filesystem::create_directories(cfg.out);
    for (std::size_t k = 0; k < res.folds.size(); ++k)
        write_rows(cfg.out / ("fold_" + std::to_string(k) + ".csv"), res.folds[k].rows, res.rmse_names);
    write_rows(cfg.out / "mean.csv", res.mean, res.rmse_names);

    std::ofstream tidy(cfg.out / "tidy.csv", std::ios::binary);
    tidy << "iteration,metric,method,value\n";
    const std::string method = cfg.method.name();
    for (const auto& r : res.mean) {
        const auto put = [&](const std::string& metric, double v) {
            tidy << r.iteration << ',' << metric << ',' << method << ',' << fmt(v) << '\n';
        };
        put("energy", r.energy);
        put("train_nlpd", r.train_nlpd);
        put("test_nlpd", r.test_nlpd);
        for (std::size_t j = 0; j < r.rmse.size(); ++j) put(res.rmse_names[j], r.rmse[j]);
    }

    std::ofstream timing(cfg.out / "timing.csv", std::ios::binary);
    timing << "fold,iteration,wall_ms\n";
    for (std::size_t k = 0; k < res.folds.size(); ++k)
        for (const auto& r : res.folds[k].rows) timing << k << ',' << r.iteration << ',' << fmt(r.wall_ms) << '\n';
}

}  // namespace

// ---------------------------------------------------------------------- data

Dataset load_motorcycle(const std::filesystem::path& path) {
    Dataset d = read_xy(path);
    standardise(d.X);
    standardise(d.Y);
    return d;
}

Dataset synth_product(std::uint64_t seed) {
    const int N = 1000;
    std::mt19937_64 rng(seed);
    const Kernel k = product_kernel();
    Dataset d;
    d.X = linspace(0.0, 200.0, N);
    Mat F(N, 2);
    F.col(0) = sample_gp(k.children()[0], d.X, rng);
    F.col(1) = sample_gp(k.children()[1], d.X, rng);
    const Vec noise = std::sqrt(0.1) * standard_normals(rng, N);
    d.Y = Mat(N, 1);
    for (int n = 0; n < N; ++n) d.Y(n, 0) = F(n, 0) * softplus(F(n, 1)) + noise(n);
    d.F = F;
    return d;
}

GprnData synth_gprn(std::uint64_t seed) {
    const int N = 400, D = 8;
    std::mt19937_64 rng(seed);
    const Kernel k = gprn_kernel();
    const Mat X = linspace(-17.0, 147.0, N);
    Mat F(N, D);
    for (int d = 0; d < D; ++d) F.col(d) = sample_gp(k.children()[d], X, rng);
    const Eigen::LLT<Mat> chol(gprn_noise_covariance());
    const Mat L = chol.matrixL();

    GprnData g;
    g.Y_clean = Mat(N, 3);
    Mat Y(N, 3);
    for (int n = 0; n < N; ++n) {
        for (int j = 0; j < 3; ++j) g.Y_clean(n, j) = F(n, 2 + j) * F(n, 0) + F(n, 5 + j) * F(n, 1);
        Y.row(n) = g.Y_clean.row(n) + (L * standard_normals(rng, 3)).transpose();
    }
    g.Y_test = Mat::Constant(N, 3, kNaN);
    for (int n = 134; n <= 266; ++n) {
        g.held_out.push_back(n);
        for (int j = 1; j < 3; ++j) {
            g.Y_test(n, j) = Y(n, j);
            Y(n, j) = kNaN;
        }
    }
    g.data.X = X;
    g.data.Y = Y;
    g.data.F = F;
    return g;
}

std::vector<std::vector<int>> cv_folds(int N, int folds, std::uint64_t seed) {
    if (folds < 2 || folds > N) throw ConfigError("folds must be between 2 and the number of points");
    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<int>> out(folds);
    for (int k = 0; k < folds; ++k) {
        const int lo = k * N / folds, hi = (k + 1) * N / folds;
        out[k].assign(perm.begin() + lo, perm.begin() + hi);
        std::sort(out[k].begin(), out[k].end());
    }
    return out;
}

// ------------------------------------------------------------------- metrics

double nlpd(const std::vector<GaussianState>& q, const Likelihood& lik, const Mat& Y, const Quadrature& quad) {
    if (static_cast<Eigen::Index>(q.size()) != Y.rows()) throw ConfigError("nlpd: marginals and targets differ in length");
    double total = 0.0;
    int count = 0;
    for (Eigen::Index n = 0; n < Y.rows(); ++n) {
        const Vec y = Y.row(n).transpose();
        if (observed(y).empty()) continue;
        total -= lik.log_predictive(y, q[n].mean, q[n].cov, quad);
        ++count;
    }
    return count ? total / count : 0.0;
}

double rmse(const Vec& estimate, const Vec& truth) {
    if (estimate.size() != truth.size()) throw ConfigError("rmse: length mismatch");
    if (estimate.size() == 0) return 0.0;
    return std::sqrt((estimate - truth).squaredNorm() / static_cast<double>(estimate.size()));
}

// --------------------------------------------------------------- experiments

ExperimentKind parse_experiment(const std::string& name) {
    if (name == "hsced") return ExperimentKind::hsced;
    if (name == "product") return ExperimentKind::product;
    if (name == "gprn") return ExperimentKind::gprn;
    if (name == "custom") return ExperimentKind::custom;
    throw ConfigError("unknown experiment '" + name + "' (hsced, product, gprn, custom)");
}

std::string experiment_name(ExperimentKind kind) {
    switch (kind) {
    case ExperimentKind::hsced: return "hsced";
    case ExperimentKind::product: return "product";
    case ExperimentKind::gprn: return "gprn";
    case ExperimentKind::custom: return "custom";
    }
    return "?";
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind) {
    ExperimentConfig c;
    c.experiment = kind;
    c.method.alpha = 0.5;
    switch (kind) {
    case ExperimentKind::hsced:
        c.method.rho = 0.3;
        c.method.xi = 0.5;
        c.iters = 300;
        break;
    case ExperimentKind::product:
        c.method.rho = 0.1;
        c.method.xi = 0.5;
        c.backend = BackendKind::markov;
        break;
    case ExperimentKind::gprn:
        c.method.rho = 0.3;
        c.method.xi = 0.3;
        c.iters = 200;
        c.backend = BackendKind::markov;
        break;
    case ExperimentKind::custom:
        c.method.rho = 0.5;
        break;
    }
    return c;
}

void ExperimentConfig::validate() const {
    method.validate();
    if (iters < 1) throw ConfigError("iters must be at least 1");
    if (folds < 1) throw ConfigError("folds must be at least 1");
    if (experiment != ExperimentKind::gprn && folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (inducing < 0) throw ConfigError("inducing must be non-negative");
    if (!data.empty() && !std::filesystem::exists(data)) throw ConfigError("data file not found: " + data.string());
}

bool ExperimentResult::psd_failure() const {
    return std::any_of(folds.begin(), folds.end(), [](const FoldResult& f) { return f.status == FitStatus::psd_failure; });
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    Setup s = make_setup(cfg);
    if (s.lik->latent_dim() != s.kernel.output_dim()) throw ConfigError("kernel and likelihood dimensions differ");

    ExperimentResult res;
    res.rmse_names = s.rmse_names;
    res.folds.resize(s.folds.size());
    const int nf = static_cast<int>(s.folds.size());
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < nf; ++k) {
        try {
            res.folds[k] = run_fold(cfg, s.folds[k], *s.lik);
        } catch (...) {
#pragma omp critical(bnk_fold_error)
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    res.mean = mean_rows(res.folds);
    res.min_site_eig = std::numeric_limits<double>::infinity();
    for (const auto& f : res.folds) {
        if (!f.rows.empty()) res.final_test_nlpd += f.rows.back().test_nlpd / nf;
        for (const auto& r : f.rows) {
            res.total_violations += r.violations;
            res.min_site_eig = std::min(res.min_site_eig, r.min_site_eig);
        }
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!cfg.out.empty()) write_outputs(cfg, res);
    return res;
}

}  // namespace bnk
