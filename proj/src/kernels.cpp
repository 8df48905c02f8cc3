#include "bnk/kernels.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bnk {

namespace {

void check_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("kernel ") + what + " must be positive and finite");
}


Mat kron(const Mat& A, const Mat& B) {
    Mat out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return out;
}

Mat block_diag(const std::vector<Mat>& blocks) {
    Eigen::Index r = 0, c = 0;
    for (const auto& b : blocks) { r += b.rows(); c += b.cols(); }
    Mat out = Mat::Zero(r, c);
    r = c = 0;
    for (const auto& b : blocks) {
        out.block(r, c, b.rows(), b.cols()) = b;
        r += b.rows();
        c += b.cols();
    }
    return out;
}

StateSpaceModel matern_sde(int nu2, double var, double ell) {
    StateSpaceModel ss;
    if (nu2 == 1) {
        ss.F = Mat::Constant(1, 1, -1.0 / ell);
        ss.L = Mat::Ones(1, 1);
        ss.Qc = Mat::Constant(1, 1, 2.0 * var / ell);
    } else if (nu2 == 3) {
        const double lam = std::sqrt(3.0) / ell;
        ss.F.resize(2, 2);
        ss.F << 0.0, 1.0, -lam * lam, -2.0 * lam;
        ss.L = Mat::Zero(2, 1);
        ss.L(1, 0) = 1.0;
        ss.Qc = Mat::Constant(1, 1, 4.0 * lam * lam * lam * var);
    } else {
        const double lam = std::sqrt(5.0) / ell;
        ss.F.resize(3, 3);
        ss.F << 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -lam * lam * lam, -3.0 * lam * lam, -3.0 * lam;
        ss.L = Mat::Zero(3, 1);
        ss.L(2, 0) = 1.0;
        ss.Qc = Mat::Constant(1, 1, 16.0 / 3.0 * var * std::pow(lam, 5));
    }
    const auto S = ss.F.rows();
    ss.H = Mat::Zero(1, S);
    ss.H(0, 0) = 1.0;
    ss.P0 = solve_lyapunov(ss.F, SymMatrix(ss.noise_covariance())).mat();
    return ss;
}

}  // namespace

Kernel Kernel::matern12(double variance, double lengthscale) {
    check_positive(variance, "variance");
    check_positive(lengthscale, "lengthscale");
    Kernel k;
    k.family_ = KernelFamily::matern12;
    k.variance_ = variance;
    k.lengthscale_ = lengthscale;
    return k;
}

Kernel Kernel::matern32(double variance, double lengthscale) {
    Kernel k = matern12(variance, lengthscale);
    k.family_ = KernelFamily::matern32;
    return k;
}

Kernel Kernel::matern52(double variance, double lengthscale) {
    Kernel k = matern12(variance, lengthscale);
    k.family_ = KernelFamily::matern52;
    return k;
}

Kernel Kernel::cosine(double frequency, double variance) {
    check_positive(variance, "variance");
    Kernel k;
    k.family_ = KernelFamily::cosine;
    k.variance_ = variance;
    k.frequency_ = frequency;
    return k;
}

Kernel Kernel::product(std::vector<Kernel> children) {
    if (children.empty()) throw ConfigError("product kernel needs at least one factor");
    for (const auto& c : children)
        if (c.family() == KernelFamily::stack) throw ConfigError("product kernel factors must be scalar");
    Kernel k;
    k.family_ = KernelFamily::product;
    k.children_ = std::move(children);
    return k;
}

Kernel Kernel::stack(std::vector<Kernel> children) {
    if (children.empty()) throw ConfigError("stack kernel needs at least one component");
    for (const auto& c : children)
        if (c.family() == KernelFamily::stack) throw ConfigError("nested stacks are not supported");
    Kernel k;
    k.family_ = KernelFamily::stack;
    k.children_ = std::move(children);
    return k;
}

int Kernel::output_dim() const {
    return family_ == KernelFamily::stack ? static_cast<int>(children_.size()) : 1;
}

double Kernel::eval(const Vec& x, const Vec& x2) const {
    switch (family_) {
    case KernelFamily::matern12: {
        const double r = (x - x2).norm() / lengthscale_;
        return variance_ * std::exp(-r);
    }
    case KernelFamily::matern32: {
        const double r = std::sqrt(3.0) * (x - x2).norm() / lengthscale_;
        return variance_ * (1.0 + r) * std::exp(-r);
    }
    case KernelFamily::matern52: {
        const double r = std::sqrt(5.0) * (x - x2).norm() / lengthscale_;
        return variance_ * (1.0 + r + r * r / 3.0) * std::exp(-r);
    }
    case KernelFamily::cosine:
        return variance_ * std::cos(frequency_ * (x - x2).sum());
    case KernelFamily::product: {
        double v = 1.0;
        for (const auto& c : children_) v *= c.eval(x, x2);
        return v;
    }
    case KernelFamily::stack:
        break;
    }
    throw Unsupported("Kernel::eval: stacked kernels are not scalar");
}

std::string Kernel::describe() const {
    std::ostringstream os;
    switch (family_) {
    case KernelFamily::matern12: os << "matern12(" << variance_ << "," << lengthscale_ << ")"; break;
    case KernelFamily::matern32: os << "matern32(" << variance_ << "," << lengthscale_ << ")"; break;
    case KernelFamily::matern52: os << "matern52(" << variance_ << "," << lengthscale_ << ")"; break;
    case KernelFamily::cosine: os << "cosine(" << frequency_ << "," << variance_ << ")"; break;
    case KernelFamily::product:
    case KernelFamily::stack: {
        os << (family_ == KernelFamily::product ? "product[" : "stack[");
        for (std::size_t i = 0; i < children_.size(); ++i) os << (i ? "," : "") << children_[i].describe();
        os << "]";
        break;
    }
    }
    return os.str();
}

Mat gram(const Kernel& k, const Mat& X, const Mat& X2) {
    const Eigen::Index N = X.rows(), M = X2.rows();
    if (k.family() != KernelFamily::stack) {
        Mat K(N, M);
        for (Eigen::Index i = 0; i < N; ++i)
            for (Eigen::Index j = 0; j < M; ++j) K(i, j) = k.eval(X.row(i).transpose(), X2.row(j).transpose());
        return K;
    }
    const int D = k.output_dim();
    Mat K = Mat::Zero(N * D, M * D);
    for (int d = 0; d < D; ++d) {
        const Kernel& c = k.children()[d];
        for (Eigen::Index i = 0; i < N; ++i)
            for (Eigen::Index j = 0; j < M; ++j) K(i * D + d, j * D + d) = c.eval(X.row(i).transpose(), X2.row(j).transpose());
    }
    return K;
}

StateSpaceModel to_state_space(const Kernel& k) {
    switch (k.family()) {
    case KernelFamily::matern12: return matern_sde(1, k.variance(), k.lengthscale());
    case KernelFamily::matern32: return matern_sde(3, k.variance(), k.lengthscale());
    case KernelFamily::matern52: return matern_sde(5, k.variance(), k.lengthscale());
    case KernelFamily::cosine: {
        StateSpaceModel ss;
        const double w = k.frequency();
        ss.F.resize(2, 2);
        ss.F << 0.0, -w, w, 0.0;
        ss.L = Mat::Identity(2, 2);
        ss.Qc = Mat::Zero(2, 2);
        ss.H = Mat::Zero(1, 2);
        ss.H(0, 0) = 1.0;
        ss.P0 = k.variance() * Mat::Identity(2, 2);
        return ss;
    }
    case KernelFamily::product: {
        StateSpaceModel acc = to_state_space(k.children()[0]);
        for (std::size_t i = 1; i < k.children().size(); ++i) {
            const StateSpaceModel b = to_state_space(k.children()[i]);
            const auto Sa = acc.F.rows(), Sb = b.F.rows();
            StateSpaceModel out;
            out.F = kron(acc.F, Mat::Identity(Sb, Sb)) + kron(Mat::Identity(Sa, Sa), b.F);
            const Mat W = kron(acc.noise_covariance(), b.P0) + kron(acc.P0, b.noise_covariance());
            out.L = Mat::Identity(Sa * Sb, Sa * Sb);
            out.Qc = symmetrise(W);
            out.H = kron(acc.H, b.H);
            out.P0 = symmetrise(kron(acc.P0, b.P0));
            acc = std::move(out);
        }
        return acc;
    }
    case KernelFamily::stack: {
        std::vector<Mat> F, L, Qc, H, P0;
        for (const auto& c : k.children()) {
            StateSpaceModel s = to_state_space(c);
            F.push_back(s.F);
            L.push_back(s.L);
            Qc.push_back(s.Qc);
            H.push_back(s.H);
            P0.push_back(s.P0);
        }
        return {block_diag(F), block_diag(L), block_diag(Qc), block_diag(H), block_diag(P0)};
    }
    }
    throw Unsupported("to_state_space: kernel family has no SDE form");
}

Transition discretize(const StateSpaceModel& ss, double dt) {
    if (!(dt > 0.0)) throw DomainError("discretize: step must be positive");
    Transition t;
    t.A = expm(ss.F * dt);
    t.Q = symmetrise(ss.P0 - t.A * ss.P0 * t.A.transpose());
    return t;
}

}  // namespace bnk
