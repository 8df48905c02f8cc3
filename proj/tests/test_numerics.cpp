#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bnk/numerics.hpp"

using namespace bnk;

namespace {

// E[x^k] for x ~ N(0,1): (k-1)!! for even k, 0 for odd.
double normal_moment(int k) {
    if (k % 2 == 1) return 0.0;
    double r = 1.0;
    for (int j = k - 1; j > 1; j -= 2) r *= j;
    return r;
}

double quad_monomial(const Quadrature& q, const std::vector<int>& powers) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < q.nodes.cols(); ++k) {
        double v = q.weights(k);
        for (int d = 0; d < q.dim; ++d) v *= std::pow(q.nodes(d, k), powers[d]);
        s += v;
    }
    return s;
}

}  // namespace

TEST(Cholesky, IdentityUsesNoJitter) {
    auto r = cholesky_psd(SymMatrix::identity(2), 1e-12);
    EXPECT_TRUE(r.L.isApprox(Mat::Identity(2, 2)));
    EXPECT_EQ(r.jitter, 0.0);
}

TEST(Cholesky, HandFactor) {
    Mat M(2, 2);
    M << 4, 2, 2, 5;
    auto r = cholesky_psd(SymMatrix(M));
    Mat expected(2, 2);
    expected << 2, 0, 1, 2;
    EXPECT_LT((r.L - expected).norm(), 1e-14);
    EXPECT_LT((r.L * r.L.transpose() - M).norm(), 1e-14);
}

TEST(Cholesky, IndefiniteThrows) {
    Mat M(2, 2);
    M << 1, 2, 2, 1;
    EXPECT_THROW(cholesky_psd(SymMatrix(M)), NotPSD);
}

TEST(Cholesky, SingularGetsJitter) {
    Mat M = Mat::Ones(3, 3);
    auto r = cholesky_psd(SymMatrix(M), 1e-10);
    EXPECT_GT(r.jitter, 0.0);
    EXPECT_LE(r.jitter, 1e-4);
}

TEST(Projection, PaperExample) {
    Mat P(2, 2);
    P << -1, 0.5, 0.5, 2;
    Mat out = heuristic_psd_projection(SymMatrix(P), 0.01).mat();
    Mat expected = Vec((Vec(2) << 0.01, 2).finished()).asDiagonal();
    EXPECT_EQ(out, expected);
}

TEST(Projection, DiagonalUnchangedAndZeroDiagonal) {
    Mat P = Vec((Vec(2) << 3, 4).finished()).asDiagonal();
    EXPECT_EQ(heuristic_psd_projection(SymMatrix(P)).mat(), P);
    Mat Z(2, 2);
    Z << 0, 1, 1, 0;
    EXPECT_EQ(heuristic_psd_projection(SymMatrix(Z)).mat(), 0.01 * Mat::Identity(2, 2));
}

TEST(Projection, AlwaysDiagonalPositive) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 200; ++t) {
        Mat A = Mat::NullaryExpr(3, 3, [&] { return n01(rng); });
        Mat P = heuristic_psd_projection(SymMatrix(A)).mat();
        EXPECT_TRUE((P - Mat(P.diagonal().asDiagonal())).isZero());
        EXPECT_GT(P.diagonal().minCoeff(), 0.0);
    }
}

TEST(GaussHermite, WeightsAndCount) {
    auto q = gauss_hermite(2, 20);
    EXPECT_EQ(q.size(), 400u);
    EXPECT_NEAR(q.weights.sum(), 1.0, 1e-12);
    EXPECT_NEAR(quad_monomial(gauss_hermite(1, 2), {2}), 1.0, 1e-14);
}

TEST(GaussHermite, ExactThroughDegree2nMinus1) {
    for (int n : {1, 2, 5, 10, 20}) {
        auto q = gauss_hermite(1, n);
        for (int k = 0; k <= 2 * n - 1; ++k) {
            const double exact = normal_moment(k);
            const double got = quad_monomial(q, {k});
            // Odd moments cancel to 0, so measure error against sum_i w_i |x_i|^k.
            double scale = 0.0;
            for (Eigen::Index i = 0; i < q.nodes.cols(); ++i) scale += q.weights(i) * std::pow(std::abs(q.nodes(0, i)), k);
            EXPECT_NEAR(got, exact, 1e-10 * std::max(1.0, scale)) << "n=" << n << " k=" << k;
        }
        const double exact = normal_moment(2 * n);
        EXPECT_GT(std::abs(quad_monomial(q, {2 * n}) - exact), 1e-6 * exact) << "n=" << n;
    }
}

TEST(GaussHermite, DoubleFactorial37) {
    auto q = gauss_hermite(1, 20);
    double df = 1.0;
    for (int j = 37; j > 1; j -= 2) df *= j;
    EXPECT_NEAR(quad_monomial(q, {38}) / df, 1.0, 1e-6);
}

TEST(GaussHermite, NodeCap) {
    EXPECT_THROW(gauss_hermite(5, 20), DimensionOverflow);
}

TEST(Unscented, NodeCountMatchesEnumeration) {
    for (int d = 1; d <= 8; ++d) {
        // Brute-force count of the generator orbits {0}, {+-e_i}, {+-e_i +- e_j}.
        int count = 1;
        for (int i = 0; i < d; ++i) count += 2;
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) count += 4;
        auto q = unscented_5(d);
        EXPECT_EQ(static_cast<int>(q.size()), count);
        EXPECT_EQ(static_cast<int>(q.size()), 2 * d * d + 1);
        EXPECT_NEAR(q.weights.sum(), 1.0, 1e-12);
    }
    EXPECT_EQ(unscented_5(8).size(), 129u);
}

TEST(Unscented, ExactDegreeFive) {
    for (int d = 1; d <= 8; ++d) {
        auto q = unscented_5(d);
        std::vector<int> p(d, 0);
        // Enumerate all monomials of total degree <= 5.
        std::function<void(int, int)> rec = [&](int pos, int left) {
            if (pos == d) {
                double exact = 1.0;
                for (int e : p) exact *= normal_moment(e);
                EXPECT_NEAR(quad_monomial(q, p), exact, 1e-10) << "dim " << d;
                return;
            }
            for (int e = 0; e <= left; ++e) {
                p[pos] = e;
                rec(pos + 1, left - e);
            }
            p[pos] = 0;
        };
        rec(0, 5);
    }
    EXPECT_NEAR(quad_monomial(unscented_5(1), {4}), 3.0, 1e-12);
    EXPECT_NEAR(quad_monomial(unscented_5(2), {2, 2}), 1.0, 1e-12);
}

TEST(Expectation, AffineExactForAllRules) {
    Vec m(3);
    m << 0.3, -1.0, 2.0;
    Mat A = Mat::Random(3, 3);
    Mat C = A * A.transpose() + 0.1 * Mat::Identity(3, 3);
    Mat M = Mat::Random(2, 3);
    Vec b = Vec::Random(2);
    for (const auto& q : {gauss_hermite(3, 4), unscented_5(3)}) {
        Vec got = gaussian_expectation(m, C, [&](const Vec& f) -> Vec { return M * f + b; }, q);
        EXPECT_LT((got - (M * m + b)).norm(), 1e-12);
        Mat cov = gaussian_expectation(m, C, [&](const Vec& f) -> Mat { return (f - m) * (f - m).transpose(); }, q);
        EXPECT_LT((cov - C).norm(), 1e-12);
    }
}

TEST(Expectation, SecondMoment) {
    Vec m = Vec::Constant(1, 1.0);
    Mat C = Mat::Constant(1, 1, 2.0);
    double v = gaussian_expectation(m, C, [](const Vec& f) { return f(0) * f(0); }, gauss_hermite(1, 10));
    EXPECT_NEAR(v, 3.0, 1e-12);
}

TEST(Expectation, MonteCarloOracle) {
    // log N(0.5 | f, 0.1) under f ~ N(0, 0.25)
    auto g = [](const Vec& f) { return -0.5 * std::log(2 * M_PI * 0.1) - 0.5 * std::pow(0.5 - f(0), 2) / 0.1; };
    double gh = gaussian_expectation(Vec::Zero(1), Mat::Constant(1, 1, 0.25), g, gauss_hermite(1, 20));
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n01;
    const int S = 5000;
    double mc = 0.0, mc2 = 0.0;
    for (int s = 0; s < S; ++s) {
        const double v = g(Vec::Constant(1, 0.5 * n01(rng)));
        mc += v;
        mc2 += v * v;
    }
    mc /= S;
    const double se = std::sqrt((mc2 / S - mc * mc) / S);
    EXPECT_NEAR(gh, mc, 4.0 * se);
    // Closed form: -1/2 log(2 pi 0.1) - (0.25 + 0.25) / (2 * 0.1)
    EXPECT_NEAR(gh, -0.5 * std::log(2 * M_PI * 0.1) - 2.5, 1e-12);
}

TEST(Expectation, BonnetPriceMatchesFiniteDifference) {
    Vec m(2);
    m << 0.2, -0.4;
    Mat C(2, 2);
    C << 0.3, 0.1, 0.1, 0.2;
    auto q = gauss_hermite(2, 20);
    auto g = [](const Vec& f) {
        ScalarDerivs d;
        d.value = std::sin(f(0)) * std::exp(0.3 * f(1));
        d.grad = Vec(2);
        d.grad << std::cos(f(0)) * std::exp(0.3 * f(1)), 0.3 * d.value;
        d.hess = Mat(2, 2);
        d.hess << -d.value, 0.3 * d.grad(0), 0.3 * d.grad(0), 0.09 * d.value;
        return d;
    };
    ScalarDerivs e = gaussian_expectation_derivs(m, C, g, q);
    auto val = [&](const Vec& mm) { return gaussian_expectation(mm, C, [&](const Vec& f) { return g(f).value; }, q); };
    const double h = 1e-5;
    for (int i = 0; i < 2; ++i) {
        Vec mp = m, mn = m;
        mp(i) += h;
        mn(i) -= h;
        EXPECT_NEAR((val(mp) - val(mn)) / (2 * h), e.grad(i), 1e-5 * std::max(1.0, std::abs(e.grad(i))));
        for (int j = 0; j < 2; ++j) {
            auto gj = [&](const Vec& mm) {
                return gaussian_expectation(mm, C, [&](const Vec& f) { return g(f).grad(j); }, q);
            };
            EXPECT_NEAR((gj(mp) - gj(mn)) / (2 * h), e.hess(i, j), 1e-5);
        }
    }
}

TEST(Lyapunov, Scalar) {
    auto P = solve_lyapunov(Mat::Constant(1, 1, -1.0), SymMatrix(Mat::Constant(1, 1, 2.0)));
    EXPECT_NEAR(P(0, 0), 1.0, 1e-14);
}

TEST(Lyapunov, Matern32ResidualOracle) {
    const double lam = std::sqrt(3.0);
    Mat F(2, 2);
    F << 0, 1, -lam * lam, -2 * lam;
    Mat Q = Mat::Zero(2, 2);
    Q(1, 1) = 4 * lam * lam * lam;
    Mat P = solve_lyapunov(F, SymMatrix(Q)).mat();
    Mat expected = Vec((Vec(2) << 1, 3).finished()).asDiagonal();
    EXPECT_LT((P - expected).norm(), 1e-12);
    EXPECT_LT((F * expected + expected * F.transpose() + Q).norm(), 1e-12);
}

TEST(Lyapunov, RandomStableResidual) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 20; ++t) {
        const int n = 1 + t % 7;
        Mat A = Mat::NullaryExpr(n, n, [&] { return n01(rng); });
        Eigen::EigenSolver<Mat> es(A);
        const double shift = es.eigenvalues().real().maxCoeff() + 0.5;
        Mat F = A - shift * Mat::Identity(n, n);
        Mat B = Mat::NullaryExpr(n, n, [&] { return n01(rng); });
        Mat Q = B * B.transpose();
        Mat P = solve_lyapunov(F, SymMatrix(Q)).mat();
        EXPECT_LE((F * P + P * F.transpose() + Q).norm(), 1e-10 * Q.norm());
    }
}

TEST(Lyapunov, UnstableThrows) {
    EXPECT_THROW(solve_lyapunov(Mat::Constant(1, 1, 1.0), SymMatrix(Mat::Constant(1, 1, 1.0))), NonHurwitz);
}

TEST(InvSqrt, DerivativeMatchesFiniteDifference) {
    Mat A(3, 3);
    A << 2, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0;
    Mat dA(3, 3);
    dA << 0.1, 0.4, 0, 0.4, -0.3, 0.2, 0, 0.2, 0.5;
    Eigen::SelfAdjointEigenSolver<Mat> eig(A);
    Mat d = inv_sqrt_derivative(eig, dA);
    const double h = 1e-6;
    Mat fd = (sym_power(A + h * dA, -0.5) - sym_power(A - h * dA, -0.5)) / (2 * h);
    EXPECT_LT((d - fd).norm(), 1e-8);
    // Repeated eigenvalues.
    Eigen::SelfAdjointEigenSolver<Mat> eigI(Mat::Identity(2, 2) * 4.0);
    Mat dI = inv_sqrt_derivative(eigI, Mat::Identity(2, 2));
    EXPECT_NEAR(dI(0, 0), -0.5 * std::pow(4.0, -1.5), 1e-14);
}

TEST(Softplus, StableBranches) {
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
    EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
    EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
}
