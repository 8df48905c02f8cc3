#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <vector>

#include "bnk/errors.hpp"

namespace bnk {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Dense symmetric matrix, symmetrised on construction.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(const Mat& m);
    static SymMatrix identity(int n);
    static SymMatrix zero(int n);

    int dim() const { return static_cast<int>(m_.rows()); }
    const Mat& mat() const { return m_; }
    double operator()(int i, int j) const { return m_(i, j); }

private:
    Mat m_;
};

inline Mat symmetrise(const Mat& m) { return 0.5 * (m + m.transpose()); }

struct CholeskyResult {
    Mat L;
    double jitter = 0.0;
};

/// L L' = M + j I with j = 0 first, then jitter_rel * mean(diag M) growing x10
/// per retry (5 retries), capped at 1e-4 * mean(diag M).
CholeskyResult cholesky_psd(const SymMatrix& M, double jitter_rel = 1e-12);

/// Square-root factor suitable for quadrature. Falls back to the clamped
/// eigen-root when M is PSD but singular (including M = 0).
Mat sqrt_factor(const Mat& M);

double min_eigenvalue(const Mat& M);
bool is_psd(const Mat& M, double tol = 1e-10);

SymMatrix heuristic_psd_projection(const SymMatrix& P, double eps = 0.01);

/// Symmetric power M^p via eigendecomposition (M PD).
Mat sym_power(const Mat& M, double p);

/// Derivative of the symmetric inverse square root: d(M^{-1/2})[dM].
Mat inv_sqrt_derivative(const Eigen::SelfAdjointEigenSolver<Mat>& eig, const Mat& dM);

/// log N(x | mu, S).
double log_normal_pdf(const Vec& x, const Vec& mu, const Mat& S);

double softplus(double x);
double sigmoid(double x);

// ---------------------------------------------------------------- quadrature

enum class QuadratureKind { gauss_hermite, unscented5 };

struct Quadrature {
    QuadratureKind kind = QuadratureKind::gauss_hermite;
    int dim = 0;
    int order = 0;   // per-dim order for Gauss-Hermite, 5 for unscented
    Mat nodes;       // dim x K
    Vec weights;     // K

    std::size_t size() const { return static_cast<std::size_t>(weights.size()); }
};

Quadrature gauss_hermite(int dim, int order, std::size_t node_cap = 1000000);
Quadrature unscented_5(int dim);
Quadrature default_quadrature(int dim);

/// Nodes f_i = m + L x_i of a quadrature rule for N(m, C).
Mat transformed_nodes(const Vec& m, const Mat& C, const Quadrature& quad);

/// E_q[g(f)] with q = N(m, C). R must support R + w * R and R * double.
template <class G>
auto gaussian_expectation(const Vec& m, const Mat& C, G&& g, const Quadrature& quad) {
    const Mat F = transformed_nodes(m, C, quad);
    using R = std::decay_t<decltype(g(Vec(F.col(0))))>;
    R acc = quad.weights(0) * g(Vec(F.col(0)));
    for (Eigen::Index i = 1; i < F.cols(); ++i) acc = acc + quad.weights(i) * g(Vec(F.col(i)));
    return acc;
}

/// Value with analytic gradient and Hessian.
struct ScalarDerivs {
    double value = 0.0;
    Vec grad;
    Mat hess;
};

/// E_q[g], E_q[grad g], E_q[hess g]: by Bonnet/Price these are the value,
/// gradient and Hessian of E_q[g] with respect to m.
ScalarDerivs gaussian_expectation_derivs(const Vec& m, const Mat& C,
                                         const std::function<ScalarDerivs(const Vec&)>& g,
                                         const Quadrature& quad);

// ------------------------------------------------------------- linear systems

/// Solves F P + P F' + Q = 0 for Hurwitz F (Bartels-Stewart on the complex Schur form).
SymMatrix solve_lyapunov(const Mat& F, const SymMatrix& Q);

Mat expm(const Mat& A);

/// log-sum-exp of a + log w (w may be negative; returns log of the signed sum, NaN if it is <= 0).
double log_weighted_sum_exp(const Vec& log_values, const Vec& weights);

}  // namespace bnk
