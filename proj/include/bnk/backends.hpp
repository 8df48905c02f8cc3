#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "bnk/kernels.hpp"
#include "bnk/sites.hpp"

namespace bnk {

enum class BackendKind { dense, sparse, markov };

BackendKind parse_backend(const std::string& name);
std::string backend_name(BackendKind kind);

/// PEP cavity in f-space for one site, plus (1/alpha) log E_cav[t(f)^alpha].
struct CavityTerm {
    GaussianState cavity;
    double log_site_term = 0.0;
};

/// Global conjugate step. refresh() turns the current sites into posterior
/// marginals q(f_n) and the normaliser-free log partition
///   log Z~ = log int p(f) prod_n exp(nat1_n' f_n + f_n' nat2_n f_n) df.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendKind kind() const = 0;
    virtual int size() const = 0;
    virtual int latent_dim() const = 0;

    /// Throws NotPSD if the posterior cannot be formed.
    virtual void refresh(const SiteParams& sites) = 0;

    const std::vector<GaussianState>& marginals() const { return marginals_; }
    double log_z_tilde() const { return log_z_tilde_; }

    /// log Z with normalised sites N(m~_n | f_n, C~_n); requires PD site precisions.
    double log_z() const;

    /// Latent predictive marginals at new inputs, from the last refresh.
    virtual std::vector<GaussianState> predict(const Mat& X_test) const = 0;

    virtual CavityTerm cavity(int n, double alpha) const;

    /// 1/2 m' K^-1 m + 1/2 log|I + K P~|, dense only.
    virtual double laplace_prior_terms() const;

    const SiteParams& sites() const { return sites_; }

protected:
    SiteParams sites_;
    std::vector<GaussianState> marginals_;
    double log_z_tilde_ = 0.0;
};

using BackendPtr = std::unique_ptr<Backend>;

class DenseBackend final : public Backend {
public:
    DenseBackend(Kernel kernel, Mat X);

    BackendKind kind() const override { return BackendKind::dense; }
    int size() const override { return static_cast<int>(X_.rows()); }
    int latent_dim() const override { return D_; }
    void refresh(const SiteParams& sites) override;
    std::vector<GaussianState> predict(const Mat& X_test) const override;
    double laplace_prior_terms() const override;

    /// Full posterior over the stacked latent vector (site-major).
    const Vec& mean() const { return m_; }
    Mat covariance() const;

private:
    Kernel kernel_;
    Mat X_;
    int D_;
    Mat K_;
    Mat S_;        // block-diagonal symmetric root of the site precisions
    Mat LB_;       // chol(I + S K S)
    Vec lam_;      // K^-1 m
    Vec m_;
    double half_logdet_B_ = 0.0;
};

/// Kalman filter + RTS smoother over the state-space form of the kernel.
/// Inputs must be one-dimensional and strictly increasing.
class MarkovBackend final : public Backend {
public:
    MarkovBackend(const Kernel& kernel, Mat X);

    BackendKind kind() const override { return BackendKind::markov; }
    int size() const override { return static_cast<int>(X_.rows()); }
    int latent_dim() const override { return ss_.output_dim(); }
    void refresh(const SiteParams& sites) override;
    std::vector<GaussianState> predict(const Mat& X_test) const override;

    int state_dim() const { return ss_.state_dim(); }

private:
    struct Smoothed {
        std::vector<GaussianState> marginals;
        double log_z_tilde;
    };
    Smoothed smooth(const std::vector<double>& t, const std::vector<const Site*>& sites) const;
    Transition transition(double dt) const;

    StateSpaceModel ss_;
    Mat X_;
};

/// Inducing-point posterior q(u) with sites kept per data point.
class SparseBackend final : public Backend {
public:
    /// shared_alpha > 0: every data point uses the cavity q(u) / t(u)^(alpha/N),
    /// where t(u) is the product of all projected sites.
    SparseBackend(Kernel kernel, Mat X, Mat Z, double shared_alpha = 0.0);

    BackendKind kind() const override { return BackendKind::sparse; }
    int size() const override { return static_cast<int>(X_.rows()); }
    int latent_dim() const override { return D_; }
    void refresh(const SiteParams& sites) override;
    std::vector<GaussianState> predict(const Mat& X_test) const override;
    CavityTerm cavity(int n, double alpha) const override;

    int inducing_size() const { return static_cast<int>(Z_.rows()); }
    /// Inducing posterior in the original (unwhitened) parameterisation.
    GaussianState inducing_posterior() const;

private:
    Kernel kernel_;
    Mat X_, Z_;
    int D_;
    double shared_alpha_;
    Mat Luu_;      // chol(K_uu)
    Mat A_;        // Luu^-1 K_uf, whitened cross-covariance (MD x ND)
    Mat Kdiag_;    // stacked D x D prior blocks K_nn (ND x D)
    Mat Psi_;      // sum_n A_n P~_n A_n'
    Vec lam_v_;    // sum_n A_n nat1_n
    Vec m_v_;
    Mat C_v_;
    Eigen::LLT<Mat> llt_B_;
    GaussianState shared_cav_;
    double shared_term_ = 0.0;
};

BackendPtr make_backend(BackendKind kind, const Kernel& kernel, const Mat& X,
                        std::optional<Mat> Z = std::nullopt, double shared_alpha = 0.0);

}  // namespace bnk
