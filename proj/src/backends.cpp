#include "bnk/backends.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bnk/errors.hpp"

namespace bnk {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Symmetric root of a site precision; tiny negative eigenvalues are clamped.
Mat psd_root(const Mat& P) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrise(P));
    Vec ev = eig.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-8 * scale) throw NotPSD("site precision is not positive semi-definite");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

Mat block(const Mat& M, int n, int D) { return M.block(n * D, n * D, D, D); }

}  // namespace

BackendKind parse_backend(const std::string& name) {
    if (name == "dense") return BackendKind::dense;
    if (name == "sparse") return BackendKind::sparse;
    if (name == "markov") return BackendKind::markov;
    throw ConfigError("unknown backend '" + name + "'");
}

std::string backend_name(BackendKind kind) {
    switch (kind) {
    case BackendKind::dense: return "dense";
    case BackendKind::sparse: return "sparse";
    case BackendKind::markov: return "markov";
    }
    return "?";
}

double Backend::log_z() const {
    double total = log_z_tilde_;
    for (int n = 0; n < sites_.size(); ++n) {
        const Site& s = sites_[n];
        Eigen::LLT<Mat> llt(s.precision());
        if (llt.info() != Eigen::Success) throw NotPSD("log_z needs positive definite site precisions");
        const Mat& L = llt.matrixL();
        const double logdet = 2.0 * L.diagonal().array().log().sum();
        total += 0.5 * logdet - 0.5 * s.dim() * kLog2Pi - 0.5 * s.nat1.dot(llt.solve(s.nat1));
    }
    return total;
}

CavityTerm Backend::cavity(int n, double alpha) const {
    if (!(alpha > 0.0)) throw ConfigError("cavity power must be positive");
    const Site& s = sites_[n];
    CavityTerm c;
    c.cavity = bnk::cavity(marginals_[n], s, alpha);
    c.log_site_term = log_gaussian_integral(c.cavity.mean, c.cavity.cov, alpha * s.nat1, alpha * s.precision()) / alpha;
    return c;
}

double Backend::laplace_prior_terms() const {
    throw Unsupported("the second-order Laplace energy needs the dense backend");
}

// ----------------------------------------------------------------------- dense

DenseBackend::DenseBackend(Kernel kernel, Mat X)
    : kernel_(std::move(kernel)), X_(std::move(X)), D_(kernel_.output_dim()) {
    K_ = gram(kernel_, X_, X_);
}

void DenseBackend::refresh(const SiteParams& sites) {
    const int N = size(), ND = N * D_;
    if (sites.size() != N || sites.dim() != D_) throw ConfigError("dense backend: site dimensions do not match");
    S_ = Mat::Zero(ND, ND);
    for (int n = 0; n < N; ++n) S_.block(n * D_, n * D_, D_, D_) = psd_root(sites[n].precision());
    const Mat SK = S_ * K_;
    Eigen::LLT<Mat> llt(Mat::Identity(ND, ND) + SK * S_);
    if (llt.info() != Eigen::Success) throw NotPSD("dense backend: I + S K S is not positive definite");
    LB_ = llt.matrixL();
    half_logdet_B_ = LB_.diagonal().array().log().sum();

    const Vec nat1 = sites.stacked_nat1();
    lam_ = nat1 - S_ * llt.solve(SK * nat1);
    m_ = K_ * lam_;
    log_z_tilde_ = -half_logdet_B_ + 0.5 * nat1.dot(m_);

    const Mat V = LB_.triangularView<Eigen::Lower>().solve(SK);
    marginals_.resize(N);
    for (int n = 0; n < N; ++n) {
        const auto Vn = V.middleCols(n * D_, D_);
        marginals_[n] = {m_.segment(n * D_, D_), symmetrise(block(K_, n, D_) - Vn.transpose() * Vn)};
    }
    sites_ = sites;
}

Mat DenseBackend::covariance() const {
    const Mat V = LB_.triangularView<Eigen::Lower>().solve(S_ * K_);
    return symmetrise(K_ - V.transpose() * V);
}

std::vector<GaussianState> DenseBackend::predict(const Mat& X_test) const {
    const Mat Kfs = gram(kernel_, X_, X_test);
    const Vec mean = Kfs.transpose() * lam_;
    const Mat U = LB_.triangularView<Eigen::Lower>().solve(S_ * Kfs);
    std::vector<GaussianState> out(X_test.rows());
    for (Eigen::Index j = 0; j < X_test.rows(); ++j) {
        const Mat Kss = gram(kernel_, X_test.row(j), X_test.row(j));
        const auto Uj = U.middleCols(j * D_, D_);
        out[j] = {mean.segment(j * D_, D_), symmetrise(Kss - Uj.transpose() * Uj)};
    }
    return out;
}

double DenseBackend::laplace_prior_terms() const { return 0.5 * m_.dot(lam_) + half_logdet_B_; }

// ---------------------------------------------------------------------- markov

MarkovBackend::MarkovBackend(const Kernel& kernel, Mat X) : ss_(to_state_space(kernel)), X_(std::move(X)) {
    if (X_.cols() != 1) throw ConfigError("markov backend needs one-dimensional inputs");
    for (Eigen::Index n = 1; n < X_.rows(); ++n)
        if (!(X_(n, 0) > X_(n - 1, 0))) throw ConfigError("markov backend needs strictly increasing inputs");
}

Transition MarkovBackend::transition(double dt) const {
    const int S = ss_.state_dim();
    if (dt == 0.0) return {Mat::Identity(S, S), Mat::Zero(S, S)};
    return discretize(ss_, dt);
}

MarkovBackend::Smoothed MarkovBackend::smooth(const std::vector<double>& t,
                                              const std::vector<const Site*>& sites) const {
    const auto N = t.size();
    const int S = ss_.state_dim();
    const Mat& H = ss_.H;
    std::vector<Transition> tr(N);
    std::vector<Vec> mp(N), mf(N);
    std::vector<Mat> Pp(N), Pf(N);
    double log_z = 0.0;

    Vec m = Vec::Zero(S);
    Mat P = ss_.P0;
    for (std::size_t k = 0; k < N; ++k) {
        if (k > 0) {
            tr[k] = transition(t[k] - t[k - 1]);
            m = tr[k].A * m;
            P = symmetrise(tr[k].A * P * tr[k].A.transpose() + tr[k].Q);
        }
        mp[k] = m;
        Pp[k] = P;
        if (const Site* s = sites[k]) {
            const Mat Ps = s->precision();
            const Mat V = symmetrise(H * P * H.transpose());
            const Vec hm = H * m;
            log_z += log_gaussian_integral(hm, V, s->nat1, Ps);
            const Mat R = psd_root(Ps);
            const Mat G = R * H * P;
            const int D = ss_.output_dim();
            Eigen::LLT<Mat> llt(Mat::Identity(D, D) + R * V * R);
            if (llt.info() != Eigen::Success) throw NotPSD("markov backend: innovation is not positive definite");
            P = symmetrise(P - G.transpose() * llt.solve(G));
            m = m + P * H.transpose() * (s->nat1 - Ps * hm);
        }
        mf[k] = m;
        Pf[k] = P;
    }

    Smoothed out;
    out.log_z_tilde = log_z;
    out.marginals.resize(N);
    Vec ms = mf[N - 1];
    Mat Ps = Pf[N - 1];
    out.marginals[N - 1] = {H * ms, symmetrise(H * Ps * H.transpose())};
    for (std::size_t k = N - 1; k-- > 0;) {
        const Mat& A = tr[k + 1].A;
        const CholeskyResult ch = cholesky_psd(SymMatrix(Pp[k + 1]));
        // G = Pf A' R^-1
        const Mat Gt = ch.L.transpose().triangularView<Eigen::Upper>().solve(
            ch.L.triangularView<Eigen::Lower>().solve(A * Pf[k]));
        const Mat G = Gt.transpose();
        ms = mf[k] + G * (ms - mp[k + 1]);
        Ps = symmetrise(Pf[k] + G * (Ps - Pp[k + 1]) * G.transpose());
        out.marginals[k] = {H * ms, symmetrise(H * Ps * H.transpose())};
    }
    return out;
}

void MarkovBackend::refresh(const SiteParams& sites) {
    const int N = size();
    if (sites.size() != N || sites.dim() != latent_dim()) throw ConfigError("markov backend: site dimensions do not match");
    std::vector<double> t(N);
    std::vector<const Site*> ptr(N);
    for (int n = 0; n < N; ++n) {
        t[n] = X_(n, 0);
        ptr[n] = &sites[n];
    }
    Smoothed s = smooth(t, ptr);
    marginals_ = std::move(s.marginals);
    log_z_tilde_ = s.log_z_tilde;
    sites_ = sites;
}

std::vector<GaussianState> MarkovBackend::predict(const Mat& X_test) const {
    if (X_test.cols() != 1) throw ConfigError("markov backend needs one-dimensional inputs");
    const int N = size();
    const auto Ns = static_cast<int>(X_test.rows());
    // Training points come first on ties; test points carry no site.
    std::vector<int> order(N + Ns);
    std::iota(order.begin(), order.end(), 0);
    auto time = [&](int i) { return i < N ? X_(i, 0) : X_test(i - N, 0); };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return time(a) < time(b); });
    std::vector<double> t(order.size());
    std::vector<const Site*> ptr(order.size(), nullptr);
    for (std::size_t k = 0; k < order.size(); ++k) {
        t[k] = time(order[k]);
        if (order[k] < N) ptr[k] = &sites_[order[k]];
    }
    const Smoothed s = smooth(t, ptr);
    std::vector<GaussianState> out(Ns);
    for (std::size_t k = 0; k < order.size(); ++k)
        if (order[k] >= N) out[order[k] - N] = s.marginals[k];
    return out;
}

// ---------------------------------------------------------------------- sparse

SparseBackend::SparseBackend(Kernel kernel, Mat X, Mat Z, double shared_alpha)
    : kernel_(std::move(kernel)), X_(std::move(X)), Z_(std::move(Z)), D_(kernel_.output_dim()),
      shared_alpha_(shared_alpha) {
    if (Z_.rows() > X_.rows()) throw ConfigError("sparse backend: more inducing points than data");
    if (shared_alpha_ < 0.0) throw ConfigError("sparse backend: shared cavity power must be positive");
    Luu_ = cholesky_psd(SymMatrix(gram(kernel_, Z_, Z_))).L;
    A_ = Luu_.triangularView<Eigen::Lower>().solve(gram(kernel_, Z_, X_));
    Kdiag_.resize(X_.rows() * D_, D_);
    for (Eigen::Index n = 0; n < X_.rows(); ++n) Kdiag_.middleRows(n * D_, D_) = gram(kernel_, X_.row(n), X_.row(n));
}

void SparseBackend::refresh(const SiteParams& sites) {
    const int N = size();
    const auto MD = A_.rows();
    if (sites.size() != N || sites.dim() != D_) throw ConfigError("sparse backend: site dimensions do not match");
    Psi_ = Mat::Zero(MD, MD);
    lam_v_ = Vec::Zero(MD);
    for (int n = 0; n < N; ++n) {
        const auto An = A_.middleCols(n * D_, D_);
        Psi_.noalias() += An * sites[n].precision() * An.transpose();
        lam_v_.noalias() += An * sites[n].nat1;
    }
    Psi_ = symmetrise(Psi_);
    llt_B_.compute(Mat::Identity(MD, MD) + Psi_);
    if (llt_B_.info() != Eigen::Success) throw NotPSD("sparse backend: I + Psi is not positive definite");
    C_v_ = llt_B_.solve(Mat::Identity(MD, MD));
    m_v_ = llt_B_.solve(lam_v_);
    const Mat& L = llt_B_.matrixL();
    log_z_tilde_ = -L.diagonal().array().log().sum() + 0.5 * lam_v_.dot(m_v_);

    marginals_.resize(N);
    for (int n = 0; n < N; ++n) {
        const auto An = A_.middleCols(n * D_, D_);
        const Mat Kn = Kdiag_.middleRows(n * D_, D_);
        marginals_[n] = {An.transpose() * m_v_,
                         symmetrise(Kn - An.transpose() * An + An.transpose() * C_v_ * An)};
    }
    sites_ = sites;

    if (shared_alpha_ > 0.0) {
        const double a = shared_alpha_ / N;
        Eigen::LLT<Mat> cav(Mat::Identity(MD, MD) + (1.0 - a) * Psi_);
        if (cav.info() != Eigen::Success) throw NonPSDCavity("sparse backend: shared cavity is not positive definite");
        shared_cav_.cov = cav.solve(Mat::Identity(MD, MD));
        shared_cav_.mean = cav.solve((1.0 - a) * lam_v_);
        shared_term_ = log_gaussian_integral(shared_cav_.mean, shared_cav_.cov, a * lam_v_, a * Psi_) / shared_alpha_;
    }
}

CavityTerm SparseBackend::cavity(int n, double alpha) const {
    if (!(alpha > 0.0)) throw ConfigError("cavity power must be positive");
    const auto An = A_.middleCols(n * D_, D_);
    const Mat cond = Kdiag_.middleRows(n * D_, D_) - An.transpose() * An;
    CavityTerm c;
    if (shared_alpha_ > 0.0) {
        if (alpha != shared_alpha_) throw ConfigError("sparse backend: cavity power differs from the shared one");
        c.cavity = {An.transpose() * shared_cav_.mean, symmetrise(An.transpose() * shared_cav_.cov * An + cond)};
        c.log_site_term = shared_term_;
        return c;
    }
    const Site& s = sites_[n];
    const GaussianState proj{An.transpose() * m_v_, symmetrise(An.transpose() * C_v_ * An)};
    const GaussianState cv = bnk::cavity(proj, s, alpha);
    c.cavity = {cv.mean, symmetrise(cv.cov + cond)};
    c.log_site_term = log_gaussian_integral(c.cavity.mean, c.cavity.cov, alpha * s.nat1, alpha * s.precision()) / alpha;
    return c;
}

std::vector<GaussianState> SparseBackend::predict(const Mat& X_test) const {
    const Mat As = Luu_.triangularView<Eigen::Lower>().solve(gram(kernel_, Z_, X_test));
    std::vector<GaussianState> out(X_test.rows());
    for (Eigen::Index j = 0; j < X_test.rows(); ++j) {
        const auto Aj = As.middleCols(j * D_, D_);
        const Mat Kss = gram(kernel_, X_test.row(j), X_test.row(j));
        out[j] = {Aj.transpose() * m_v_, symmetrise(Kss - Aj.transpose() * Aj + Aj.transpose() * C_v_ * Aj)};
    }
    return out;
}

GaussianState SparseBackend::inducing_posterior() const {
    return {Luu_ * m_v_, symmetrise(Luu_ * C_v_ * Luu_.transpose())};
}

BackendPtr make_backend(BackendKind kind, const Kernel& kernel, const Mat& X, std::optional<Mat> Z,
                        double shared_alpha) {
    switch (kind) {
    case BackendKind::dense: return std::make_unique<DenseBackend>(kernel, X);
    case BackendKind::markov: return std::make_unique<MarkovBackend>(kernel, X);
    case BackendKind::sparse:
        if (!Z) throw ConfigError("sparse backend needs inducing inputs");
        return std::make_unique<SparseBackend>(kernel, X, *Z, shared_alpha);
    }
    throw ConfigError("unknown backend");
}

}  // namespace bnk
