#include "bnk/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "bnk/inference.hpp"
#include "bnk/likelihoods.hpp"

namespace bnk {

namespace {

Mat sorted_inputs(int N, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 10.0);
    Vec x = Vec::NullaryExpr(N, [&] { return u(rng); });
    std::sort(x.begin(), x.end());
    return x;
}

SiteParams random_sites(int N, int D, std::mt19937_64& rng) {
    SiteParams s = SiteParams::init(N, D);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.3, 3.0);
    for (int n = 0; n < N; ++n) {
        const Mat A = Mat::NullaryExpr(D, D, [&] { return z(rng); });
        const Mat P = A * A.transpose() / D + u(rng) * Mat::Identity(D, D);
        s[n].nat2 = -0.5 * P;
        s[n].nat1 = P * Vec::NullaryExpr(D, [&] { return z(rng); });
    }
    return s;
}

double marginal_gap(const std::vector<GaussianState>& a, const std::vector<GaussianState>& b) {
    double e = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        e = std::max(e, (a[n].mean - b[n].mean).cwiseAbs().maxCoeff());
        e = std::max(e, (a[n].cov - b[n].cov).cwiseAbs().maxCoeff());
    }
    return e;
}

double direct_log_z(const Mat& K, const SiteParams& s) {
    const int N = s.size(), D = s.dim();
    Mat Cs = Mat::Zero(N * D, N * D);
    Vec ms(N * D);
    for (int n = 0; n < N; ++n) {
        const Mat C = s[n].precision().inverse();
        Cs.block(n * D, n * D, D, D) = C;
        ms.segment(n * D, D) = C * s[n].nat1;
    }
    return log_normal_pdf(ms, Vec::Zero(N * D), K + Cs);
}

double rel(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

CheckResult check(const std::string& name, double err, double tol) {
    std::ostringstream d;
    d << "max error " << err << " (tol " << tol << ")";
    return {name, err <= tol, d.str()};
}

double gaussian_moment(int k) {
    if (k % 2) return 0.0;
    double m = 1.0;
    for (int j = k - 1; j > 1; j -= 2) m *= j;
    return m;
}

// Max relative error of the rule on every monomial of total degree <= deg.
double monomial_error(const Quadrature& q, int deg) {
    const int d = q.dim;
    std::vector<int> e(d, 0);
    double worst = 0.0;
    std::function<void(int, int)> rec = [&](int i, int left) {
        if (i == d) {
            double exact = 1.0, approx = 0.0;
            for (int j = 0; j < d; ++j) exact *= gaussian_moment(e[j]);
            for (Eigen::Index k = 0; k < q.nodes.cols(); ++k) {
                double v = q.weights(k);
                for (int j = 0; j < d; ++j) v *= std::pow(q.nodes(j, k), e[j]);
                approx += v;
            }
            worst = std::max(worst, std::abs(approx - exact) / std::max(1.0, std::abs(exact)));
            return;
        }
        for (int p = 0; p <= left; ++p) {
            e[i] = p;
            rec(i + 1, left - p);
        }
        e[i] = 0;
    };
    rec(0, deg);
    return worst;
}

}  // namespace

std::vector<CheckResult> run_invariant_checks(unsigned seed) {
    std::vector<CheckResult> out;
    std::mt19937_64 rng(seed);
    const Kernel k = Kernel::stack({Kernel::matern32(1.0, 1.0), Kernel::matern52(0.7, 2.0)});
    const int N = 50, D = 2;
    const Mat X = sorted_inputs(N, rng);
    const SiteParams s = random_sites(N, D, rng);

    DenseBackend dense(k, X);
    MarkovBackend markov(k, X);
    SparseBackend sparse(k, X, X);
    dense.refresh(s);
    markov.refresh(s);
    sparse.refresh(s);

    out.push_back(check("dense = markov marginals", marginal_gap(dense.marginals(), markov.marginals()), 1e-6));
    out.push_back(check("dense = markov log Z", rel(markov.log_z_tilde(), dense.log_z_tilde()), 1e-6));
    out.push_back(check("dense = sparse (Z = X) marginals", marginal_gap(dense.marginals(), sparse.marginals()), 1e-6));

    const double direct = direct_log_z(gram(k, X, X), s);
    out.push_back(check("dense log Z = direct density", rel(dense.log_z(), direct), 1e-6));
    out.push_back(check("markov log Z = direct density", rel(markov.log_z(), direct), 1e-6));

    out.push_back(check("dense predict at training inputs", marginal_gap(dense.predict(X), dense.marginals()), 1e-9));
    out.push_back(check("markov predict at training inputs", marginal_gap(markov.predict(X), markov.marginals()), 1e-9));

    const LikelihoodPtr hetero = make_heteroscedastic();
    const Mat Y = Mat::NullaryExpr(N, 1, [&] { return std::normal_distribution<double>()(rng); });
    const Quadrature quad = default_quadrature(D);
    const double e_dense = energy(EnergyKind::vfe, {dense, *hetero, Y, quad}, 1.0);
    const double e_markov = energy(EnergyKind::vfe, {markov, *hetero, Y, quad}, 1.0);
    const double e_sparse = energy(EnergyKind::vfe, {sparse, *hetero, Y, quad}, 1.0);
    out.push_back(check("dense = markov VFE", rel(e_markov, e_dense), 1e-6));
    out.push_back(check("dense = sparse (Z = X) VFE", rel(e_sparse, e_dense), 1e-6));

    double gh = 0.0;
    const Quadrature g20 = gauss_hermite(1, 20);
    for (int p = 0; p <= 39; ++p) {
        double approx = 0.0, scale = 0.0;
        for (Eigen::Index i = 0; i < g20.nodes.cols(); ++i) {
            const double t = g20.weights(i) * std::pow(g20.nodes(0, i), p);
            approx += t;
            scale += std::abs(t);
        }
        gh = std::max(gh, std::abs(approx - gaussian_moment(p)) / std::max(gaussian_moment(p), scale));
    }
    out.push_back(check("Gauss-Hermite 20 moments through degree 39", gh, 1e-6));
    double ut = 0.0;
    for (int d = 1; d <= 8; ++d) ut = std::max(ut, monomial_error(unscented_5(d), 5));
    out.push_back(check("unscented-5 monomials through degree 5, dims 1-8", ut, 1e-9));

    double tg = 0.0;
    const std::vector<LikelihoodPtr> liks = {make_gaussian(0.3), hetero, make_product(0.1), make_gprn(gprn_noise_covariance()),
                                             make_bernoulli_logit(), make_poisson_exp()};
    std::normal_distribution<double> z;
    for (const auto& lik : liks) {
        for (int r = 0; r < 20; ++r) {
            const Vec m = Vec::NullaryExpr(lik->latent_dim(), [&] { return z(rng); });
            Vec y = lik->moments(m).nu;
            if (lik->name() == "bernoulli") y(0) = y(0) > 0.5 ? 1.0 : 0.0;
            if (lik->name() == "poisson") y(0) = std::round(y(0));
            const SiteGradient a = taylor_site(m, y, *lik);
            const SiteGradient b = gn_site(m, y, *lik, GnMode::generalised_gn);
            tg = std::max({tg, (a.J - b.J).cwiseAbs().maxCoeff() / (1.0 + b.J.cwiseAbs().maxCoeff()),
                           (a.H - b.H).cwiseAbs().maxCoeff() / (1.0 + b.H.cwiseAbs().maxCoeff())});
        }
    }
    out.push_back(check("taylor = generalised Gauss-Newton", tg, 1e-12));
    return out;
}

}  // namespace bnk
