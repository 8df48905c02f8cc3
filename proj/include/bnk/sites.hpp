#pragma once

#include <vector>

#include "bnk/numerics.hpp"

namespace bnk {

/// Mean/covariance pair for a posterior, cavity or marginal.
struct GaussianState {
    Vec mean;
    Mat cov;
};

/// Approximate likelihood t_n(f) = exp(nat1' f + f' nat2 f) (unnormalised).
struct Site {
    Vec nat1;
    Mat nat2;
    double log_z = 0.0;

    int dim() const { return static_cast<int>(nat1.size()); }
    Mat precision() const { return -2.0 * nat2; }
};

class SiteParams {
public:
    SiteParams() = default;
    /// N near-flat proper sites with variance `variance` and zero natural mean.
    static SiteParams init(int N, int D, double variance = 1e6);

    int size() const { return static_cast<int>(sites_.size()); }
    int dim() const { return sites_.empty() ? 0 : sites_.front().dim(); }
    Site& operator[](int n) { return sites_[n]; }
    const Site& operator[](int n) const { return sites_[n]; }

    /// Stacked nat1 (site-major) and block-diagonal precision.
    Vec stacked_nat1() const;

private:
    std::vector<Site> sites_;
};

/// Cavity q(f)/t(f)^alpha. alpha = 0 returns the marginal unchanged.
GaussianState cavity(const GaussianState& marginal, const Site& site, double alpha);

/// log int N(f | mu, S) exp(lam' f - 1/2 f' P f) df for any P with I + S P invertible.
double log_gaussian_integral(const Vec& mu, const Mat& S, const Vec& lam, const Mat& P);

struct SiteGradient {
    Vec J;
    Mat H;
    Vec ref_mean;          // m, or the cavity mean for PEP rules
    double log_z = 0.0;
    bool ok = true;        // false: leave the site unchanged this sweep
};

using SiteGradients = std::vector<SiteGradient>;

enum class PsdGuard { none, heuristic, reject };

struct LocalUpdateResult {
    SiteParams sites;
    int violations = 0;   // committed sites whose precision has min eig < -1e-10
    int projected = 0;    // sites fixed by the heuristic projection
    int rejected = 0;     // sites kept unchanged by guard=reject
    int skipped = 0;      // sites whose gradient computation failed
};

constexpr double kPsdTolerance = 1e-10;

/// nat2 <- (1-rho) nat2 + rho H/2, nat1 <- (1-rho) nat1 + rho (J - H m).
LocalUpdateResult apply_local_update(const SiteParams& sites, const SiteGradients& grads, double rho,
                                     PsdGuard guard, double eps = 0.01);

}  // namespace bnk
