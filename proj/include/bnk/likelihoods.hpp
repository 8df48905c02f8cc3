#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bnk/numerics.hpp"

namespace bnk {

struct LogDensity {
    double value = 0.0;
    Vec grad;  // D
    Mat hess;  // D x D
};

/// E[y|f], Cov[y|f] and their derivatives with respect to f.
struct ConditionalMoments {
    Vec nu;                    // Dy
    Mat Sigma;                 // Dy x Dy
    Mat dnu;                   // Dy x D
    std::vector<Mat> d2nu;     // Dy blocks of D x D (filled when requested)
    std::vector<Mat> dSigma;   // D blocks of Dy x Dy
};

struct ResidualDecomposition {
    Vec V;                        // Sigma^{-1/2}(y - nu)
    Mat G;                        // dV/df, Dy x D
    double logZ = 0.0;            // -1/2 log|2 pi Sigma| (continuous form only)
    std::optional<Vec> logZ_grad; // absent for the generalised form
};

/// Observation model p(y|f). y entries equal to NaN are unobserved.
class Likelihood {
public:
    virtual ~Likelihood() = default;

    virtual std::string name() const = 0;
    virtual int latent_dim() const = 0;
    virtual int obs_dim() const = 0;
    /// True when log p(y|f) = log N(y | nu(f), Sigma(f)).
    virtual bool continuous() const = 0;

    virtual void validate(const Vec& y) const;
    virtual LogDensity log_density(const Vec& y, const Vec& f) const = 0;
    virtual ConditionalMoments moments(const Vec& f, bool second_order = false) const = 0;

    double log_prob(const Vec& y, const Vec& f) const { return log_density(y, f).value; }

    /// log int p(y|f) N(f|m, C) df. The default applies quad; models with
    /// conditionally linear structure integrate part of f exactly.
    virtual double log_predictive(const Vec& y, const Vec& m, const Mat& C, const Quadrature& quad) const;
};

using LikelihoodPtr = std::shared_ptr<const Likelihood>;

/// Indices of observed (non-NaN) entries of y.
std::vector<int> observed(const Vec& y);

/// Restricts moments to the rows in idx.
ConditionalMoments restrict_moments(ConditionalMoments cm, const std::vector<int>& idx);
Vec restrict_vec(const Vec& v, const std::vector<int>& idx);

/// Residual form of log p. mode_generalised selects G = Sigma^{-1/2} grad nu.
ResidualDecomposition residual_decomposition(const Likelihood& lik, const Vec& y, const Vec& f,
                                             bool generalised = false);

LikelihoodPtr make_gaussian(double variance);
LikelihoodPtr make_heteroscedastic();
LikelihoodPtr make_product(double variance);
LikelihoodPtr make_gprn(const Mat& Sigma);
LikelihoodPtr make_bernoulli_logit();
LikelihoodPtr make_poisson_exp();

/// Noise covariance used in the GPRN experiment.
Mat gprn_noise_covariance();

}  // namespace bnk
