#include "bnk/sites.hpp"

#include <cmath>

namespace bnk {

SiteParams SiteParams::init(int N, int D, double variance) {
    SiteParams s;
    s.sites_.resize(N);
    for (auto& site : s.sites_) {
        site.nat1 = Vec::Zero(D);
        site.nat2 = -0.5 / variance * Mat::Identity(D, D);
    }
    return s;
}

Vec SiteParams::stacked_nat1() const {
    const int D = dim();
    Vec out(size() * D);
    for (int n = 0; n < size(); ++n) out.segment(n * D, D) = sites_[n].nat1;
    return out;
}

GaussianState cavity(const GaussianState& marginal, const Site& site, double alpha) {
    if (alpha == 0.0) return marginal;
    const auto D = marginal.mean.size();
    Eigen::LLT<Mat> post(marginal.cov);
    if (post.info() != Eigen::Success) throw NonPSDCavity("cavity: marginal covariance is not positive definite");
    const Mat post_prec = post.solve(Mat::Identity(D, D));
    const Mat prec = symmetrise(post_prec - alpha * site.precision());
    const Vec nat1 = post.solve(marginal.mean) - alpha * site.nat1;
    Eigen::LLT<Mat> llt(prec);
    if (llt.info() != Eigen::Success || min_eigenvalue(prec) <= 0.0)
        throw NonPSDCavity("cavity: cavity precision is not positive definite");
    GaussianState out;
    out.cov = symmetrise(llt.solve(Mat::Identity(D, D)));
    out.mean = llt.solve(nat1);
    return out;
}

double log_gaussian_integral(const Vec& mu, const Mat& S, const Vec& lam, const Mat& P) {
    const auto D = mu.size();
    const Vec eta = lam - P * mu;
    const Mat M = Mat::Identity(D, D) + S * P;
    Eigen::PartialPivLU<Mat> lu(M);
    const double det = lu.determinant();
    if (!(det > 0.0)) return std::nan("");
    const Mat Splus = symmetrise(lu.solve(S));
    return lam.dot(mu) - 0.5 * mu.dot(P * mu) - 0.5 * std::log(det) + 0.5 * eta.dot(Splus * eta);
}

LocalUpdateResult apply_local_update(const SiteParams& sites, const SiteGradients& grads, double rho,
                                     PsdGuard guard, double eps) {
    LocalUpdateResult res{sites, 0, 0, 0, 0};
    for (int n = 0; n < sites.size(); ++n) {
        const SiteGradient& g = grads[n];
        if (!g.ok) {
            ++res.skipped;
            continue;
        }
        const Site& old = sites[n];
        Site s = old;
        s.nat2 = symmetrise((1.0 - rho) * old.nat2 + rho * 0.5 * g.H);
        s.nat1 = (1.0 - rho) * old.nat1 + rho * (g.J - g.H * g.ref_mean);
        s.log_z = g.log_z;
        if (!s.nat1.allFinite() || !s.nat2.allFinite()) {
            ++res.skipped;
            continue;
        }
        const Mat P = s.precision();
        if (min_eigenvalue(P) < -kPsdTolerance) {
            switch (guard) {
            case PsdGuard::heuristic: {
                s.nat2 = -0.5 * heuristic_psd_projection(SymMatrix(P), eps).mat();
                // nat1 uses the Hessian implied by the projected precision
                const Mat H_eff = 2.0 * (s.nat2 - (1.0 - rho) * old.nat2) / rho;
                s.nat1 = (1.0 - rho) * old.nat1 + rho * (g.J - H_eff * g.ref_mean);
                ++res.projected;
                break;
            }
            case PsdGuard::reject:
                s = old;
                ++res.rejected;
                break;
            case PsdGuard::none:
                ++res.violations;
                break;
            }
        }
        res.sites[n] = s;
    }
    return res;
}

}  // namespace bnk
