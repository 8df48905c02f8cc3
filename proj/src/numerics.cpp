#include "bnk/numerics.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

namespace bnk {

SymMatrix::SymMatrix(const Mat& m) : m_(symmetrise(m)) {
    if (m.rows() != m.cols()) throw std::invalid_argument("SymMatrix: matrix is not square");
}

SymMatrix SymMatrix::identity(int n) { return SymMatrix(Mat::Identity(n, n)); }
SymMatrix SymMatrix::zero(int n) { return SymMatrix(Mat::Zero(n, n)); }

CholeskyResult cholesky_psd(const SymMatrix& M, double jitter_rel) {
    const int n = M.dim();
    const double mean_diag = n > 0 ? M.mat().diagonal().mean() : 0.0;
    const double cap = 1e-4 * std::abs(mean_diag);

    auto attempt = [&](double j, CholeskyResult& out) {
        Eigen::LLT<Mat> llt(M.mat() + j * Mat::Identity(n, n));
        if (llt.info() != Eigen::Success) return false;
        out.L = llt.matrixL();
        out.jitter = j;
        return out.L.allFinite();
    };

    CholeskyResult res;
    if (attempt(0.0, res)) return res;
    double j = jitter_rel * std::abs(mean_diag);
    for (int retry = 0; retry < 5 && j > 0.0; ++retry) {
        if (attempt(std::min(j, cap), res)) return res;
        if (j >= cap) break;
        j *= 10.0;
    }
    std::ostringstream os;
    os << "cholesky_psd: matrix of dim " << n << " is not positive definite at max jitter";
    throw NotPSD(os.str());
}

Mat sqrt_factor(const Mat& M) {
    Eigen::LLT<Mat> llt(M);
    if (llt.info() == Eigen::Success) {
        Mat L = llt.matrixL();
        if (L.allFinite()) return L;
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrise(M));
    const Vec& lam = eig.eigenvalues();
    const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
    if (lam.minCoeff() < -1e-8 * scale) throw NotPSD("sqrt_factor: covariance has a negative eigenvalue");
    return eig.eigenvectors() * lam.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

double min_eigenvalue(const Mat& M) {
    if (M.size() == 0) return 0.0;
    if (M.rows() == 1) return M(0, 0);
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrise(M), Eigen::EigenvaluesOnly);
    return eig.eigenvalues()(0);
}

bool is_psd(const Mat& M, double tol) { return min_eigenvalue(M) >= -tol; }

SymMatrix heuristic_psd_projection(const SymMatrix& P, double eps) {
    Vec d = P.mat().diagonal();
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (!(d(i) > 0.0)) d(i) = eps;
    return SymMatrix(Mat(d.asDiagonal()));
}

Mat sym_power(const Mat& M, double p) {
    if (M.rows() == 1) return Mat::Constant(1, 1, std::pow(M(0, 0), p));
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrise(M));
    Vec lam = eig.eigenvalues().array().pow(p);
    return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

Mat inv_sqrt_derivative(const Eigen::SelfAdjointEigenSolver<Mat>& eig, const Mat& dM) {
    const Mat& U = eig.eigenvectors();
    const Vec& lam = eig.eigenvalues();
    const Eigen::Index n = lam.size();
    Mat A = U.transpose() * dM * U;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double li = lam(i), lj = lam(j);
            double gamma;
            if (std::abs(li - lj) <= 1e-12 * std::max(std::abs(li), std::abs(lj)))
                gamma = -0.5 * std::pow(0.5 * (li + lj), -1.5);
            else
                gamma = (1.0 / std::sqrt(li) - 1.0 / std::sqrt(lj)) / (li - lj);
            A(i, j) *= gamma;
        }
    }
    return U * A * U.transpose();
}

double log_normal_pdf(const Vec& x, const Vec& mu, const Mat& S) {
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success) throw NotPSD("log_normal_pdf: covariance not positive definite");
    const Vec r = x - mu;
    const Mat L = llt.matrixL();
    const Vec z = L.triangularView<Eigen::Lower>().solve(r);
    const double logdet = 2.0 * L.diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
}

double softplus(double x) {
    if (x > 30.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------- quadrature

namespace {

// Probabilists' Hermite He_n(x) and He_{n-1}(x) by recurrence.
void hermite_pair(int n, double x, double& hn, double& hn1) {
    double p0 = 1.0, p1 = x;
    if (n == 0) { hn = 1.0; hn1 = 0.0; return; }
    for (int k = 1; k < n; ++k) {
        const double p2 = x * p1 - k * p0;
        p0 = p1;
        p1 = p2;
    }
    hn = p1;
    hn1 = p0;
}

void gauss_hermite_1d(int order, Vec& x, Vec& w) {
    x.resize(order);
    w.resize(order);
    if (order == 1) { x(0) = 0.0; w(0) = 1.0; return; }
    Mat J = Mat::Zero(order, order);
    for (int k = 1; k < order; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Mat> eig(J);
    const double lognfact = std::lgamma(order + 1.0);
    for (int i = 0; i < order; ++i) {
        double xi = eig.eigenvalues()(i);
        for (int it = 0; it < 3; ++it) {
            double hn, hn1;
            hermite_pair(order, xi, hn, hn1);
            const double dx = hn / (order * hn1);  // He_n' = n He_{n-1}
            xi -= dx;
            if (std::abs(dx) < 1e-15 * (1.0 + std::abs(xi))) break;
        }
        double hn, hn1;
        hermite_pair(order, xi, hn, hn1);
        x(i) = xi;
        w(i) = std::exp(lognfact - 2.0 * std::log(static_cast<double>(order)) - 2.0 * std::log(std::abs(hn1)));
    }
    // Symmetrise to remove round-off asymmetry.
    for (int i = 0; i < order / 2; ++i) {
        const int j = order - 1 - i;
        const double xs = 0.5 * (x(j) - x(i));
        const double ws = 0.5 * (w(i) + w(j));
        x(i) = -xs; x(j) = xs;
        w(i) = ws; w(j) = ws;
    }
    if (order % 2 == 1) x(order / 2) = 0.0;
    w /= w.sum();
}

}  // namespace

Quadrature gauss_hermite(int dim, int order, std::size_t node_cap) {
    if (dim < 1 || order < 1) throw std::invalid_argument("gauss_hermite: dim and order must be positive");
    double count = std::pow(static_cast<double>(order), dim);
    if (count > static_cast<double>(node_cap)) {
        std::ostringstream os;
        os << "gauss_hermite: " << order << "^" << dim << " nodes exceeds the cap of " << node_cap;
        throw DimensionOverflow(os.str());
    }
    Vec x1, w1;
    gauss_hermite_1d(order, x1, w1);

    const auto K = static_cast<Eigen::Index>(count);
    Quadrature q;
    q.kind = QuadratureKind::gauss_hermite;
    q.dim = dim;
    q.order = order;
    q.nodes.resize(dim, K);
    q.weights.resize(K);
    std::vector<int> idx(dim, 0);
    for (Eigen::Index k = 0; k < K; ++k) {
        double w = 1.0;
        for (int d = 0; d < dim; ++d) {
            q.nodes(d, k) = x1(idx[d]);
            w *= w1(idx[d]);
        }
        q.weights(k) = w;
        for (int d = dim - 1; d >= 0; --d) {
            if (++idx[d] < order) break;
            idx[d] = 0;
        }
    }
    q.weights /= q.weights.sum();
    return q;
}

Quadrature unscented_5(int dim) {
    if (dim < 1) throw std::invalid_argument("unscented_5: dim must be positive");
    const double n = dim;
    const double lam = std::sqrt(3.0);
    const double w0 = 1.0 + (n * n - 7.0 * n) / 18.0;
    const double w1 = (4.0 - n) / 18.0;
    const double w2 = 1.0 / 36.0;

    const Eigen::Index K = 2 * dim * dim + 1;
    Quadrature q;
    q.kind = QuadratureKind::unscented5;
    q.dim = dim;
    q.order = 5;
    q.nodes = Mat::Zero(dim, K);
    q.weights.resize(K);
    Eigen::Index k = 0;
    q.weights(k++) = w0;
    for (int i = 0; i < dim; ++i) {
        for (double sgn : {1.0, -1.0}) {
            q.nodes(i, k) = sgn * lam;
            q.weights(k++) = w1;
        }
    }
    for (int i = 0; i < dim; ++i) {
        for (int j = i + 1; j < dim; ++j) {
            for (double si : {1.0, -1.0}) {
                for (double sj : {1.0, -1.0}) {
                    q.nodes(i, k) = si * lam;
                    q.nodes(j, k) = sj * lam;
                    q.weights(k++) = w2;
                }
            }
        }
    }
    return q;
}

Quadrature default_quadrature(int dim) { return dim <= 3 ? gauss_hermite(dim, 20) : unscented_5(dim); }

Mat transformed_nodes(const Vec& m, const Mat& C, const Quadrature& quad) {
    if (quad.dim != m.size()) throw std::invalid_argument("transformed_nodes: quadrature dimension mismatch");
    const Mat L = sqrt_factor(C);
    Mat F = L * quad.nodes;
    F.colwise() += m;
    return F;
}

ScalarDerivs gaussian_expectation_derivs(const Vec& m, const Mat& C,
                                         const std::function<ScalarDerivs(const Vec&)>& g,
                                         const Quadrature& quad) {
    const Mat F = transformed_nodes(m, C, quad);
    const auto D = m.size();
    ScalarDerivs out{0.0, Vec::Zero(D), Mat::Zero(D, D)};
    for (Eigen::Index i = 0; i < F.cols(); ++i) {
        const ScalarDerivs v = g(F.col(i));
        const double w = quad.weights(i);
        out.value += w * v.value;
        out.grad += w * v.grad;
        out.hess += w * v.hess;
    }
    out.hess = symmetrise(out.hess);
    return out;
}

// ------------------------------------------------------------- linear systems

SymMatrix solve_lyapunov(const Mat& F, const SymMatrix& Q) {
    using CMat = Eigen::MatrixXcd;
    using CVec = Eigen::VectorXcd;
    const Eigen::Index n = F.rows();
    Eigen::ComplexSchur<Mat> schur(F);
    const CMat& T = schur.matrixT();
    const CMat& U = schur.matrixU();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (T(i, i).real() >= 0.0) throw NonHurwitz("solve_lyapunov: feedback matrix has an eigenvalue with non-negative real part");
    }
    const CMat C = U.adjoint() * Q.mat().cast<std::complex<double>>() * U;
    CMat X = CMat::Zero(n, n);
    for (Eigen::Index j = n - 1; j >= 0; --j) {
        CVec rhs = -C.col(j);
        for (Eigen::Index k = j + 1; k < n; ++k) rhs -= std::conj(T(j, k)) * X.col(k);
        CMat A = T;
        A.diagonal().array() += std::conj(T(j, j));
        X.col(j) = A.triangularView<Eigen::Upper>().solve(rhs);
    }
    const Mat P = (U * X * U.adjoint()).real();
    return SymMatrix(P);
}

Mat expm(const Mat& A) { return A.exp(); }

double log_weighted_sum_exp(const Vec& log_values, const Vec& weights) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < log_values.size(); ++i)
        if (weights(i) != 0.0) mx = std::max(mx, log_values(i));
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (Eigen::Index i = 0; i < log_values.size(); ++i) s += weights(i) * std::exp(log_values(i) - mx);
    if (!(s > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return mx + std::log(s);
}

}  // namespace bnk
