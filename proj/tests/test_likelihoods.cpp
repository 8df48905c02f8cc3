#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bnk/likelihoods.hpp"
#include "oracles.hpp"

using namespace bnk;
using oracle::all_likelihoods;

TEST(Likelihood, GaussianStandardNormal) {
    auto lik = make_gaussian(1.0);
    auto d = lik->log_density(Vec::Zero(1), Vec::Zero(1));
    EXPECT_NEAR(d.value, -0.5 * std::log(2 * M_PI), 1e-15);
    EXPECT_EQ(d.grad(0), 0.0);
    EXPECT_EQ(d.hess(0, 0), -1.0);
}

TEST(Likelihood, HeteroscedasticDirectFormula) {
    auto lik = make_heteroscedastic();
    const double sd = std::log(2.0);
    EXPECT_NEAR(lik->log_prob(Vec::Zero(1), Vec::Zero(2)), -0.5 * std::log(2 * M_PI) - std::log(sd), 1e-14);
}

TEST(Likelihood, BernoulliLogistic) {
    auto d = make_bernoulli_logit()->log_density(Vec::Ones(1), Vec::Zero(1));
    EXPECT_NEAR(d.value, std::log(0.5), 1e-15);
    EXPECT_NEAR(d.grad(0), 0.5, 1e-15);
    EXPECT_NEAR(d.hess(0, 0), -0.25, 1e-15);
    EXPECT_THROW(make_bernoulli_logit()->log_density(Vec::Constant(1, 2.0), Vec::Zero(1)), DomainError);
    EXPECT_THROW(make_poisson_exp()->log_density(Vec::Constant(1, 1.5), Vec::Zero(1)), DomainError);
}

TEST(Likelihood, DerivativesMatchFiniteDifferences) {
    std::mt19937_64 rng(17);
    for (const auto& c : all_likelihoods()) {
        for (int t = 0; t < 10; ++t) {
            Vec f = oracle::random_f(*c.lik, rng);
            Vec y = oracle::random_y(*c.lik, f, rng);
            auto d = c.lik->log_density(y, f);
            auto lp = [&](const Vec& z) { return c.lik->log_prob(y, z); };
            EXPECT_LT(oracle::rel_err(d.grad, oracle::fd_gradient(lp, f)), 1e-5) << c.name;
            EXPECT_LT(oracle::rel_err(d.hess, oracle::fd_hessian(lp, f)), 1e-5) << c.name;
        }
    }
}

TEST(Likelihood, MomentDerivativesMatchFiniteDifferences) {
    std::mt19937_64 rng(19);
    for (const auto& c : all_likelihoods()) {
        for (int t = 0; t < 10; ++t) {
            Vec f = oracle::random_f(*c.lik, rng);
            auto cm = c.lik->moments(f, true);
            auto nu = [&](const Vec& z) -> Vec { return c.lik->moments(z).nu; };
            EXPECT_LT(oracle::rel_err(cm.dnu, oracle::fd_jacobian(nu, f)), 1e-5) << c.name;
            for (int j = 0; j < c.lik->obs_dim(); ++j) {
                auto dnu_j = [&](const Vec& z) -> Vec { return c.lik->moments(z).dnu.row(j).transpose(); };
                EXPECT_LT(oracle::rel_err(cm.d2nu[j], oracle::fd_jacobian(dnu_j, f)), 1e-5) << c.name;
            }
            for (int k = 0; k < c.lik->latent_dim(); ++k) {
                const double h = 1e-5 * (1 + std::abs(f(k)));
                Vec fp = f, fn = f;
                fp(k) += h;
                fn(k) -= h;
                Mat fd = (c.lik->moments(fp).Sigma - c.lik->moments(fn).Sigma) / (2 * h);
                EXPECT_LT(oracle::rel_err(cm.dSigma[k], fd), 1e-5) << c.name;
            }
            EXPECT_GE(min_eigenvalue(cm.Sigma), 0.0);
        }
    }
}

TEST(Likelihood, ExampleMoments) {
    Vec f(2);
    f << 2.0, 0.0;
    auto cm = make_product(0.1)->moments(f);
    EXPECT_NEAR(cm.nu(0), 2.0 * std::log(2.0), 1e-15);
    EXPECT_NEAR(cm.Sigma(0, 0), 0.1, 1e-15);

    Vec g(8);
    g << 1, 2, 1, 0, 0, 0, 1, 0;  // W = [[1,0],[0,1],[0,0]]
    auto gm = make_gprn(gprn_noise_covariance())->moments(g);
    EXPECT_NEAR(gm.nu(0), 1.0, 1e-15);
    EXPECT_NEAR(gm.nu(1), 2.0, 1e-15);
    EXPECT_NEAR(gm.nu(2), 0.0, 1e-15);
    EXPECT_EQ(gm.Sigma, gprn_noise_covariance());

    auto pm = make_poisson_exp()->moments(Vec::Zero(1));
    EXPECT_EQ(pm.nu(0), 1.0);
    EXPECT_EQ(pm.Sigma(0, 0), 1.0);
}

TEST(Residual, ReproducesLogDensity) {
    std::mt19937_64 rng(23);
    for (const auto& c : all_likelihoods()) {
        if (!c.lik->continuous()) continue;
        for (int t = 0; t < 20; ++t) {
            Vec f = oracle::random_f(*c.lik, rng);
            Vec y = oracle::random_y(*c.lik, f, rng);
            auto rd = residual_decomposition(*c.lik, y, f);
            EXPECT_NEAR(rd.logZ - 0.5 * rd.V.squaredNorm(), c.lik->log_prob(y, f), 1e-10) << c.name;
            auto V = [&](const Vec& z) -> Vec { return residual_decomposition(*c.lik, y, z).V; };
            EXPECT_LT(oracle::rel_err(rd.G, oracle::fd_jacobian(V, f)), 1e-5) << c.name;
            auto lz = [&](const Vec& z) { return residual_decomposition(*c.lik, y, z).logZ; };
            EXPECT_LT(oracle::rel_err(*rd.logZ_grad, oracle::fd_gradient(lz, f)), 1e-5) << c.name;
        }
    }
}

TEST(Residual, Examples) {
    auto g = residual_decomposition(*make_gaussian(4.0), Vec::Constant(1, 1.0), Vec::Zero(1));
    EXPECT_NEAR(g.G(0, 0), -0.5, 1e-15);
    EXPECT_EQ((*g.logZ_grad)(0), 0.0);

    auto h = residual_decomposition(*make_heteroscedastic(), Vec::Constant(1, 1.0), Vec::Zero(2));
    EXPECT_NEAR(h.V(0), 1.0 / std::log(2.0), 1e-14);
    EXPECT_GT(std::abs(h.G(0, 1)), 0.1);

    auto b = residual_decomposition(*make_bernoulli_logit(), Vec::Ones(1), Vec::Zero(1), true);
    EXPECT_NEAR(b.G(0, 0), 0.5, 1e-15);
    EXPECT_FALSE(b.logZ_grad.has_value());
}

TEST(Residual, GeneralisedGaussianIsExactHessian) {
    auto lik = make_gaussian(0.3);
    Vec y = Vec::Constant(1, 0.4), f = Vec::Constant(1, -1.0);
    auto rd = residual_decomposition(*lik, y, f, true);
    EXPECT_NEAR((-rd.G.transpose() * rd.G)(0, 0), lik->log_density(y, f).hess(0, 0), 1e-14);
}

TEST(Likelihood, DensityNormalises) {
    std::mt19937_64 rng(29);
    const auto gh = gauss_hermite(1, 40);
    for (const auto& c : all_likelihoods()) {
        for (int t = 0; t < 5; ++t) {
            Vec f = oracle::random_f(*c.lik, rng);
            double total = 0.0;
            if (c.name == "bernoulli") {
                total = std::exp(c.lik->log_prob(Vec::Zero(1), f)) + std::exp(c.lik->log_prob(Vec::Ones(1), f));
            } else if (c.name == "poisson") {
                for (int y = 0; y < 200; ++y) total += std::exp(c.lik->log_prob(Vec::Constant(1, y), f));
            } else {
                // Integrate p(y|f) over y by tensor GH around (nu, Sigma) with importance ratio.
                auto cm = c.lik->moments(f);
                const int Dy = c.lik->obs_dim();
                const auto q = gauss_hermite(Dy, 20);
                const Mat L = sqrt_factor(2.0 * cm.Sigma);
                for (Eigen::Index k = 0; k < q.nodes.cols(); ++k) {
                    const Vec y = cm.nu + L * q.nodes.col(k);
                    const double lq = log_normal_pdf(y, cm.nu, 2.0 * cm.Sigma);
                    total += q.weights(k) * std::exp(c.lik->log_prob(y, f) - lq);
                }
            }
            EXPECT_NEAR(total, 1.0, 1e-4) << c.name;
        }
    }
    (void)gh;
}

TEST(Likelihood, MissingEntriesAreDropped) {
    auto lik = make_gprn(gprn_noise_covariance());
    std::mt19937_64 rng(31);
    Vec f = oracle::random_f(*lik, rng);
    Vec y = oracle::random_y(*lik, f, rng);
    Vec ym = y;
    ym(1) = ym(2) = std::nan("");
    // Marginal of a Gaussian: the first stream alone.
    const auto cm = lik->moments(f);
    const double expected = log_normal_pdf(y.head(1), cm.nu.head(1), cm.Sigma.topLeftCorner(1, 1));
    EXPECT_NEAR(lik->log_prob(ym, f), expected, 1e-12);
    auto lp = [&](const Vec& z) { return lik->log_prob(ym, z); };
    EXPECT_LT(oracle::rel_err(lik->log_density(ym, f).grad, oracle::fd_gradient(lp, f)), 1e-6);
}

TEST(Likelihood, GprnPredictiveMatchesTensorRule) {
    // Small covariance, where a 5-point product rule is accurate to a few 1e-6.
    std::mt19937_64 rng(7);
    auto lik = make_gprn(gprn_noise_covariance());
    const Quadrature fine = gauss_hermite(8, 5);
    for (int t = 0; t < 3; ++t) {
        const Vec m = oracle::random_f(*lik, rng, 1.0);
        const Mat C = oracle::random_cov(8, rng, 1e-4, 1e-3);
        Vec y = lik->moments(m).nu + 0.1 * oracle::random_f(*lik, rng, 1.0).head(3);
        if (t == 2) y(1) = y(2) = std::nan("");
        const double want = lik->Likelihood::log_predictive(y, m, C, fine);
        EXPECT_NEAR(lik->log_predictive(y, m, C, unscented_5(8)), want, 2e-5);
    }
}

TEST(Likelihood, GprnPredictiveMatchesMonteCarlo) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01;
    auto lik = make_gprn(gprn_noise_covariance());
    const Vec m = oracle::random_f(*lik, rng, 1.0);
    const Mat C = oracle::random_cov(8, rng, 0.01, 0.1);
    Vec y = lik->moments(m).nu;
    y(2) = std::nan("");
    const Mat L = sqrt_factor(C);
    const int S = 400000;
    Vec p(S);
    for (int s = 0; s < S; ++s) {
        const Vec e = Vec::NullaryExpr(8, [&] { return n01(rng); });
        p(s) = std::exp(lik->log_prob(y, m + L * e));
    }
    const double mean = p.mean();
    const double se = std::sqrt((p.array() - mean).square().sum() / (S - 1.0) / S);
    EXPECT_NEAR(std::exp(lik->log_predictive(y, m, C, unscented_5(8))), mean, 4.0 * se);
}
