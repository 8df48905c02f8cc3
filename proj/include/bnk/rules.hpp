#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bnk/likelihoods.hpp"
#include "bnk/sites.hpp"

namespace bnk {

enum class Rule {
    newton, vi, pep, pl, pl2, pl2_gn, taylor,
    gn, partial_gn, generalised_gn,
    vgn, partial_vgn, vggn,
    newton_qn, vi_qn, pep_qn, pl_qn,
    newton_riemann, vi_riemann, pep_riemann
};

enum class EnergyKind { vfe, le, le2, pepe };
enum class GnMode { gn, partial_gn, generalised_gn };
enum class VgnMode { vgn, partial_vgn, vggn };
enum class Pl2Mode { full, partial_gn };
enum class QnFamily { newton, vi, pep, pl };
enum class RiemannFamily { newton, vi, pep };

struct MethodConfig {
    Rule rule = Rule::newton;
    double rho = 1.0;
    double alpha = 0.5;
    double xi = 0.5;
    bool damped = false;
    PsdGuard guard = PsdGuard::none;
    double eps = 0.01;
    std::optional<Quadrature> quadrature;   // default_quadrature(D) when unset
    std::optional<EnergyKind> energy_kind;  // family default when unset

    /// Parses names like "vgn", "damped-vi-qn", "vi-heuristic", "pl2-gn".
    static MethodConfig from_name(const std::string& name);
    std::string name() const;
    void validate() const;

    EnergyKind energy() const;
    bool uses_cavity() const;
    bool is_quasi_newton() const;
    bool is_riemann() const;
    /// True when every update is NSD by construction (or projected).
    bool guarantees_psd() const;
};

std::string rule_name(Rule r);
Rule parse_rule(const std::string& name);
std::vector<std::string> all_rule_names();

// ----------------------------------------------------------------- site rules

SiteGradient newton_site(const Vec& m, const Vec& y, const Likelihood& lik);
SiteGradient vi_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad);

/// Tilted-distribution quantities for PEP: value (1/alpha) log E[p^alpha] and its
/// first two derivatives in the cavity mean, plus the covariance gradient.
struct TiltedMoments {
    double value = 0.0;
    Vec grad;
    Mat hess;
    Mat grad_cov;   // dL/dC = 1/2 sum omega (alpha g g' + H)
};
TiltedMoments pep_tilted(const GaussianState& cav, const Vec& y, const Likelihood& lik, double alpha,
                         const Quadrature& quad);

/// R = (I + alpha B C_cav)^{-1}; throws SingularScaling.
Mat pep_scaling(const Mat& B, const Mat& C_cav, double alpha);

/// J = R grad, H = R hess. When `site` is given also fills log z_n.
SiteGradient pep_site(const GaussianState& cav, const Vec& y, const Likelihood& lik, double alpha,
                      const Quadrature& quad, const Site* site = nullptr);

/// Statistical linear regression of E[y|f] under N(m, C) on the observed rows of y.
struct Slr {
    std::vector<int> observed;
    Vec nu_bar;
    Mat A;       // E[grad nu]
    Mat Omega;   // E[(nu - nu_bar - A(f - m))(.)'] + E[Sigma]
    std::vector<Mat> mean_hessian;  // E[grad^2 nu_j]
};
Slr statistical_linear_regression(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik,
                                  const Quadrature& quad);

SiteGradient pl_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad);

/// log N(y | E_q[nu](m), Omega(m)) and its analytic gradient (used by pl2).
struct Pl2Target {
    double value = 0.0;
    Vec J;
    Vec logZ_grad;
    Mat D_grad;   // d/dm of Omega^{-1/2}(y - nu_bar)
};
Pl2Target pl2_target(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad);
SiteGradient pl2_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad,
                      Pl2Mode mode);

SiteGradient taylor_site(const Vec& m, const Vec& y, const Likelihood& lik);
SiteGradient gn_site(const Vec& m, const Vec& y, const Likelihood& lik, GnMode mode);
SiteGradient vgn_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad,
                      VgnMode mode);

// ---------------------------------------------------------------- quasi-Newton

struct BfgsResult {
    Mat B;
    bool updated = false;
    double psi = 1.0;
    Vec r;   // the vector B' s reproduces (g, or the damped interpolant)
};

/// NSD BFGS update. Undamped: applied only when s'g < 0. Damped: g replaced by
/// r = psi g + (1 - psi) B s so that s'r = (1 - xi) s'Bs whenever psi < 1.
BfgsResult bfgs_update(const Mat& B, const Vec& s, const Vec& g, bool damped, double xi);

struct QnSiteState {
    bool initialised = false;
    Mat B;       // (D + D^2) square
    Vec eta;     // (m, vec C) or cavity equivalent
    Vec grad;    // gradient of the surrogate in eta
    int accepted = 0;
    int rejected = 0;
};

/// Gradient of a family's surrogate with respect to eta = (m, vec C), with a
/// Gauss-Newton seed Hessian for the mean block.
struct QnTarget {
    Vec eta;
    Vec grad;
    Vec J;        // mean-gradient part (before PEP scaling)
    Mat seed_H;
    Mat C_ref;    // covariance used for PEP scaling
};
QnTarget qn_target(QnFamily family, const GaussianState& state, const Vec& y, const Likelihood& lik,
                   const Quadrature& quad, double alpha);

SiteGradient qn_site(QnFamily family, QnSiteState& state, const GaussianState& marginal_or_cavity, const Vec& y,
                     const Likelihood& lik, const Quadrature& quad, const MethodConfig& cfg);

// ------------------------------------------------------------------- Riemann

/// H' = H - (rho/2) G Cbar G with G = Cbar^{-1} + H and Cbar the site covariance.
Mat riemann_correction(const Mat& H_raw, const Mat& site_precision, double rho);

// ------------------------------------------------------------------ dispatch

struct SiteContext {
    const Likelihood& lik;
    const Vec& y;
    const GaussianState& marginal;
    const Site& site;
    const Quadrature& quad;
    QnSiteState* qn = nullptr;
    const GaussianState* cavity = nullptr;   // overrides cavity(marginal, site, alpha)
};

/// Runs the configured rule for one site. Numerical failures yield ok = false.
SiteGradient compute_site(const MethodConfig& cfg, const SiteContext& ctx);

}  // namespace bnk
