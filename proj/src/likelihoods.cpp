#include "bnk/likelihoods.hpp"

#include <cmath>
#include <sstream>

namespace bnk {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log N(y | nu(f), Sigma) for constant Sigma, any smooth nu, missing entries dropped.
LogDensity constant_noise_density(const Likelihood& lik, const Mat& Sigma, const Vec& y, const Vec& f) {
    const int D = lik.latent_dim();
    LogDensity out{0.0, Vec::Zero(D), Mat::Zero(D, D)};
    const auto idx = observed(y);
    if (idx.empty()) return out;
    const ConditionalMoments cm = restrict_moments(lik.moments(f, true), idx);
    Mat S(idx.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j) S(i, j) = Sigma(idx[i], idx[j]);
    Eigen::LLT<Mat> llt(S);
    const Vec r = restrict_vec(y, idx) - cm.nu;
    const Vec Sr = llt.solve(r);
    const Mat L = llt.matrixL();
    out.value = -0.5 * (idx.size() * kLog2Pi + 2.0 * L.diagonal().array().log().sum() + r.dot(Sr));
    out.grad = cm.dnu.transpose() * Sr;
    out.hess = -cm.dnu.transpose() * llt.solve(cm.dnu);
    for (std::size_t j = 0; j < idx.size(); ++j) out.hess += Sr(j) * cm.d2nu[j];
    out.hess = symmetrise(out.hess);
    return out;
}

ConditionalMoments scalar_moments(double nu, double Sigma, double dnu, double d2nu, double dSigma) {
    ConditionalMoments cm;
    cm.nu = Vec::Constant(1, nu);
    cm.Sigma = Mat::Constant(1, 1, Sigma);
    cm.dnu = Mat::Constant(1, 1, dnu);
    cm.d2nu = {Mat::Constant(1, 1, d2nu)};
    cm.dSigma = {Mat::Constant(1, 1, dSigma)};
    return cm;
}

LogDensity scalar_density(double v, double g, double h) {
    return {v, Vec::Constant(1, g), Mat::Constant(1, 1, h)};
}

class Gaussian final : public Likelihood {
public:
    explicit Gaussian(double var) : var_(var) {
        if (!(var > 0.0)) throw ConfigError("gaussian likelihood variance must be positive");
    }
    std::string name() const override { return "gaussian"; }
    int latent_dim() const override { return 1; }
    int obs_dim() const override { return 1; }
    bool continuous() const override { return true; }
    LogDensity log_density(const Vec& y, const Vec& f) const override {
        if (std::isnan(y(0))) return scalar_density(0.0, 0.0, 0.0);
        const double r = y(0) - f(0);
        return scalar_density(-0.5 * (kLog2Pi + std::log(var_) + r * r / var_), r / var_, -1.0 / var_);
    }
    ConditionalMoments moments(const Vec& f, bool) const override {
        return scalar_moments(f(0), var_, 1.0, 0.0, 0.0);
    }

private:
    double var_;
};

// y ~ N(f1, softplus(f2)^2)
class Heteroscedastic final : public Likelihood {
public:
    std::string name() const override { return "heteroscedastic"; }
    int latent_dim() const override { return 2; }
    int obs_dim() const override { return 1; }
    bool continuous() const override { return true; }

    LogDensity log_density(const Vec& y, const Vec& f) const override {
        LogDensity out{0.0, Vec::Zero(2), Mat::Zero(2, 2)};
        if (std::isnan(y(0))) return out;
        const double s = softplus(f(1)), s1 = sigmoid(f(1)), s2 = s1 * (1.0 - s1);
        const double r = y(0) - f(0), r2 = r * r;
        out.value = -0.5 * kLog2Pi - std::log(s) - 0.5 * r2 / (s * s);
        out.grad(0) = r / (s * s);
        out.grad(1) = -s1 / s + r2 * s1 / (s * s * s);
        out.hess(0, 0) = -1.0 / (s * s);
        out.hess(0, 1) = out.hess(1, 0) = -2.0 * r * s1 / (s * s * s);
        out.hess(1, 1) = -s2 / s + s1 * s1 / (s * s) + r2 * (s2 / (s * s * s) - 3.0 * s1 * s1 / (s * s * s * s));
        return out;
    }

    ConditionalMoments moments(const Vec& f, bool) const override {
        const double s = softplus(f(1)), s1 = sigmoid(f(1));
        ConditionalMoments cm;
        cm.nu = Vec::Constant(1, f(0));
        cm.Sigma = Mat::Constant(1, 1, s * s);
        cm.dnu = Mat(1, 2);
        cm.dnu << 1.0, 0.0;
        cm.d2nu = {Mat::Zero(2, 2)};
        cm.dSigma = {Mat::Zero(1, 1), Mat::Constant(1, 1, 2.0 * s * s1)};
        return cm;
    }
};

// y ~ N(f1 softplus(f2), var)
class Product final : public Likelihood {
public:
    explicit Product(double var) : var_(var) {
        if (!(var > 0.0)) throw ConfigError("product likelihood variance must be positive");
    }
    std::string name() const override { return "product"; }
    int latent_dim() const override { return 2; }
    int obs_dim() const override { return 1; }
    bool continuous() const override { return true; }
    LogDensity log_density(const Vec& y, const Vec& f) const override {
        return constant_noise_density(*this, Mat::Constant(1, 1, var_), y, f);
    }
    ConditionalMoments moments(const Vec& f, bool) const override {
        const double s = softplus(f(1)), s1 = sigmoid(f(1)), s2 = s1 * (1.0 - s1);
        ConditionalMoments cm;
        cm.nu = Vec::Constant(1, f(0) * s);
        cm.Sigma = Mat::Constant(1, 1, var_);
        cm.dnu = Mat(1, 2);
        cm.dnu << s, f(0) * s1;
        Mat h(2, 2);
        h << 0.0, s1, s1, f(0) * s2;
        cm.d2nu = {h};
        cm.dSigma = {Mat::Zero(1, 1), Mat::Zero(1, 1)};
        return cm;
    }

private:
    double var_;
};

// y ~ N(W f_latent, Sigma), f = [f1, f2, W11, W21, W31, W12, W22, W32].
class Gprn final : public Likelihood {
public:
    explicit Gprn(const Mat& Sigma) : Sigma_(Sigma) {
        if (Sigma.rows() != 3 || Sigma.cols() != 3 || !is_psd(Sigma, 0.0))
            throw ConfigError("gprn noise covariance must be 3x3 positive definite");
    }
    std::string name() const override { return "gprn"; }
    int latent_dim() const override { return 8; }
    int obs_dim() const override { return 3; }
    bool continuous() const override { return true; }
    LogDensity log_density(const Vec& y, const Vec& f) const override {
        return constant_noise_density(*this, Sigma_, y, f);
    }

    // y is linear in W given (f1, f2): integrate W exactly, (f1, f2) by Gauss-Hermite.
    double log_predictive(const Vec& y, const Vec& m, const Mat& C, const Quadrature&) const override {
        static const Quadrature gh = gauss_hermite(2, 16);
        const auto idx = observed(y);
        if (idx.empty()) return 0.0;
        const auto r = static_cast<Eigen::Index>(idx.size());
        const Mat Caa = C.topLeftCorner(2, 2);
        const Mat Cba = C.bottomLeftCorner(6, 2);
        const Mat gain = Caa.ldlt().solve(Cba.transpose()).transpose();
        const Mat S = symmetrise(C.bottomRightCorner(6, 6) - gain * Cba.transpose());
        const Vec yo = restrict_vec(y, idx);
        Mat noise(r, r);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < r; ++j) noise(i, j) = Sigma_(idx[i], idx[j]);
        const Mat F = transformed_nodes(m.head(2), Caa, gh);
        Vec lp(F.cols());
        for (Eigen::Index k = 0; k < F.cols(); ++k) {
            const Vec a = F.col(k);
            const Vec w = m.tail(6) + gain * (a - m.head(2));
            Mat A = Mat::Zero(r, 6);
            for (Eigen::Index i = 0; i < r; ++i) {
                A(i, idx[i]) = a(0);
                A(i, 3 + idx[i]) = a(1);
            }
            lp(k) = log_normal_pdf(yo, A * w, symmetrise(A * S * A.transpose() + noise));
        }
        return log_weighted_sum_exp(lp, gh.weights);
    }

    ConditionalMoments moments(const Vec& f, bool) const override {
        ConditionalMoments cm;
        cm.nu.resize(3);
        cm.dnu = Mat::Zero(3, 8);
        cm.d2nu.assign(3, Mat::Zero(8, 8));
        for (int j = 0; j < 3; ++j) {
            const int w1 = 2 + j, w2 = 5 + j;
            cm.nu(j) = f(w1) * f(0) + f(w2) * f(1);
            cm.dnu(j, 0) = f(w1);
            cm.dnu(j, 1) = f(w2);
            cm.dnu(j, w1) = f(0);
            cm.dnu(j, w2) = f(1);
            cm.d2nu[j](0, w1) = cm.d2nu[j](w1, 0) = 1.0;
            cm.d2nu[j](1, w2) = cm.d2nu[j](w2, 1) = 1.0;
        }
        cm.Sigma = Sigma_;
        cm.dSigma.assign(8, Mat::Zero(3, 3));
        return cm;
    }

private:
    Mat Sigma_;
};

class BernoulliLogit final : public Likelihood {
public:
    std::string name() const override { return "bernoulli"; }
    int latent_dim() const override { return 1; }
    int obs_dim() const override { return 1; }
    bool continuous() const override { return false; }
    void validate(const Vec& y) const override {
        Likelihood::validate(y);
        if (!std::isnan(y(0)) && y(0) != 0.0 && y(0) != 1.0) throw DomainError("bernoulli observation must be 0 or 1");
    }
    LogDensity log_density(const Vec& y, const Vec& f) const override {
        if (std::isnan(y(0))) return scalar_density(0.0, 0.0, 0.0);
        validate(y);
        const double p = sigmoid(f(0));
        return scalar_density(y(0) * f(0) - softplus(f(0)), y(0) - p, -p * (1.0 - p));
    }
    ConditionalMoments moments(const Vec& f, bool) const override {
        const double p = sigmoid(f(0)), v = p * (1.0 - p), dv = v * (1.0 - 2.0 * p);
        return scalar_moments(p, v, v, dv, dv);
    }
};

class PoissonExp final : public Likelihood {
public:
    std::string name() const override { return "poisson"; }
    int latent_dim() const override { return 1; }
    int obs_dim() const override { return 1; }
    bool continuous() const override { return false; }
    void validate(const Vec& y) const override {
        Likelihood::validate(y);
        if (!std::isnan(y(0)) && (y(0) < 0.0 || y(0) != std::floor(y(0))))
            throw DomainError("poisson observation must be a non-negative integer");
    }
    LogDensity log_density(const Vec& y, const Vec& f) const override {
        if (std::isnan(y(0))) return scalar_density(0.0, 0.0, 0.0);
        validate(y);
        const double mu = std::exp(f(0));
        return scalar_density(y(0) * f(0) - mu - std::lgamma(y(0) + 1.0), y(0) - mu, -mu);
    }
    ConditionalMoments moments(const Vec& f, bool) const override {
        const double mu = std::exp(f(0));
        return scalar_moments(mu, mu, mu, mu, mu);
    }
};

}  // namespace

void Likelihood::validate(const Vec& y) const {
    if (y.size() != obs_dim()) {
        std::ostringstream os;
        os << name() << ": observation has " << y.size() << " entries, expected " << obs_dim();
        throw DomainError(os.str());
    }
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (std::isinf(y(i))) throw DomainError(name() + ": infinite observation");
}

double Likelihood::log_predictive(const Vec& y, const Vec& m, const Mat& C, const Quadrature& quad) const {
    const Mat F = transformed_nodes(m, C, quad);
    Vec lp(F.cols());
    for (Eigen::Index k = 0; k < F.cols(); ++k) lp(k) = log_prob(y, F.col(k));
    return log_weighted_sum_exp(lp, quad.weights);
}

std::vector<int> observed(const Vec& y) {
    std::vector<int> idx;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (!std::isnan(y(i))) idx.push_back(static_cast<int>(i));
    return idx;
}

Vec restrict_vec(const Vec& v, const std::vector<int>& idx) {
    Vec out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out(i) = v(idx[i]);
    return out;
}

ConditionalMoments restrict_moments(ConditionalMoments cm, const std::vector<int>& idx) {
    if (static_cast<Eigen::Index>(idx.size()) == cm.nu.size()) return cm;
    const auto n = static_cast<Eigen::Index>(idx.size());
    ConditionalMoments out;
    out.nu = restrict_vec(cm.nu, idx);
    out.Sigma.resize(n, n);
    out.dnu.resize(n, cm.dnu.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        out.dnu.row(i) = cm.dnu.row(idx[i]);
        for (Eigen::Index j = 0; j < n; ++j) out.Sigma(i, j) = cm.Sigma(idx[i], idx[j]);
    }
    if (!cm.d2nu.empty())
        for (int i : idx) out.d2nu.push_back(cm.d2nu[i]);
    for (const Mat& dS : cm.dSigma) {
        Mat r(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) r(i, j) = dS(idx[i], idx[j]);
        out.dSigma.push_back(r);
    }
    return out;
}

ResidualDecomposition residual_decomposition(const Likelihood& lik, const Vec& y, const Vec& f, bool generalised) {
    const int D = lik.latent_dim();
    const auto idx = observed(y);
    ResidualDecomposition out;
    if (idx.empty()) {
        out.V = Vec::Zero(0);
        out.G = Mat::Zero(0, D);
        if (!generalised) out.logZ_grad = Vec::Zero(D);
        return out;
    }
    const ConditionalMoments cm = restrict_moments(lik.moments(f), idx);
    const Vec r = restrict_vec(y, idx) - cm.nu;
    const auto n = static_cast<Eigen::Index>(idx.size());
    if (n == 1) {
        // scalar noise: no eigendecomposition needed
        const double s = cm.Sigma(0, 0), is = 1.0 / std::sqrt(s);
        out.V = is * r;
        out.G = (generalised ? is : -is) * cm.dnu;
        if (generalised) return out;
        out.logZ = -0.5 * (kLog2Pi + std::log(s));
        Vec gz = Vec::Zero(D);
        for (int k = 0; k < D; ++k) {
            const double ds = cm.dSigma[k](0, 0);
            if (ds == 0.0) continue;
            out.G(0, k) += -0.5 * is / s * ds * r(0);
            gz(k) = -0.5 * ds / s;
        }
        out.logZ_grad = gz;
        return out;
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(cm.Sigma);
    const Vec& lam = eig.eigenvalues();
    const Mat& U = eig.eigenvectors();
    const Mat Sinv_half = U * lam.cwiseSqrt().cwiseInverse().asDiagonal() * U.transpose();
    out.V = Sinv_half * r;
    out.G = -Sinv_half * cm.dnu;
    if (generalised) {
        out.G = -out.G;
        return out;
    }
    const Mat Sinv = U * lam.cwiseInverse().asDiagonal() * U.transpose();
    out.logZ = -0.5 * (n * kLog2Pi + lam.array().log().sum());
    Vec gz(D);
    for (int k = 0; k < D; ++k) {
        const Mat& dS = cm.dSigma[k];
        if (dS.isZero(0.0)) {
            gz(k) = 0.0;
            continue;
        }
        out.G.col(k) += inv_sqrt_derivative(eig, dS) * r;
        gz(k) = -0.5 * (Sinv * dS).trace();
    }
    out.logZ_grad = gz;
    return out;
}

LikelihoodPtr make_gaussian(double variance) { return std::make_shared<Gaussian>(variance); }
LikelihoodPtr make_heteroscedastic() { return std::make_shared<Heteroscedastic>(); }
LikelihoodPtr make_product(double variance) { return std::make_shared<Product>(variance); }
LikelihoodPtr make_gprn(const Mat& Sigma) { return std::make_shared<Gprn>(Sigma); }
LikelihoodPtr make_bernoulli_logit() { return std::make_shared<BernoulliLogit>(); }
LikelihoodPtr make_poisson_exp() { return std::make_shared<PoissonExp>(); }

Mat gprn_noise_covariance() {
    Mat S(3, 3);
    S << 0.02, -0.015, -0.005, -0.015, 0.04, 0.01, -0.005, 0.01, 0.06;
    return S;
}

}  // namespace bnk
