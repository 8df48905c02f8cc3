#include "bnk/rules.hpp"

#include <functional>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace bnk {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

const std::vector<std::pair<Rule, std::string>>& rule_table() {
    static const std::vector<std::pair<Rule, std::string>> t = {
        {Rule::newton, "newton"},
        {Rule::vi, "vi"},
        {Rule::pep, "pep"},
        {Rule::pl, "pl"},
        {Rule::pl2, "pl2"},
        {Rule::pl2_gn, "pl2-gn"},
        {Rule::taylor, "taylor"},
        {Rule::gn, "gn"},
        {Rule::partial_gn, "partial-gn"},
        {Rule::generalised_gn, "generalised-gn"},
        {Rule::vgn, "vgn"},
        {Rule::partial_vgn, "partial-vgn"},
        {Rule::vggn, "vggn"},
        {Rule::newton_qn, "newton-qn"},
        {Rule::vi_qn, "vi-qn"},
        {Rule::pep_qn, "pep-qn"},
        {Rule::pl_qn, "pl-qn"},
        {Rule::newton_riemann, "newton-riemann"},
        {Rule::vi_riemann, "vi-riemann"},
        {Rule::pep_riemann, "pep-riemann"},
    };
    return t;
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }
bool ends_with(const std::string& s, const std::string& p) {
    return s.size() >= p.size() && s.compare(s.size() - p.size(), p.size(), p) == 0;
}

Vec vec_of(const Mat& M) { return Eigen::Map<const Vec>(M.data(), M.size()); }

Mat solve_psd(const Mat& Omega, const Mat& rhs) {
    CholeskyResult ch = cholesky_psd(SymMatrix(Omega), 1e-12);
    const Mat z = ch.L.triangularView<Eigen::Lower>().solve(rhs);
    return ch.L.transpose().triangularView<Eigen::Upper>().solve(z);
}

// Point-wise pieces shared by the Gauss-Newton rules.
struct GnPieces {
    Vec J;
    Mat H;
};

GnPieces gn_pieces(const Vec& f, const Vec& y, const Likelihood& lik, GnMode mode, bool with_grad = true) {
    if (mode != GnMode::generalised_gn && !lik.continuous())
        throw ModeUnsupported(lik.name() + ": gn and partial-gn need the continuous residual form");
    GnPieces p;
    if (mode == GnMode::generalised_gn) {
        const auto idx = observed(y);
        const int D = lik.latent_dim();
        if (idx.empty()) return {Vec::Zero(D), Mat::Zero(D, D)};
        const ConditionalMoments cm = restrict_moments(lik.moments(f), idx);
        const Mat SinvJ = solve_psd(cm.Sigma, cm.dnu);
        p.J = SinvJ.transpose() * (restrict_vec(y, idx) - cm.nu);
        p.H = symmetrise(-cm.dnu.transpose() * SinvJ);
        return p;
    }
    const ResidualDecomposition rd = residual_decomposition(lik, y, f);
    if (with_grad) p.J = lik.log_density(y, f).grad;
    p.H = -rd.G.transpose() * rd.G;
    if (mode == GnMode::partial_gn) p.H -= (*rd.logZ_grad) * rd.logZ_grad->transpose();
    p.H = symmetrise(p.H);
    return p;
}

VgnMode seed_vgn_mode(const Likelihood& lik) { return lik.continuous() ? VgnMode::vgn : VgnMode::vggn; }

}  // namespace

// ------------------------------------------------------------- method config

std::string rule_name(Rule r) {
    for (const auto& [rule, name] : rule_table())
        if (rule == r) return name;
    return "unknown";
}

Rule parse_rule(const std::string& name) {
    for (const auto& [rule, n] : rule_table())
        if (n == name) return rule;
    throw ConfigError("unknown rule '" + name + "'");
}

std::vector<std::string> all_rule_names() {
    std::vector<std::string> out;
    for (const auto& e : rule_table()) out.push_back(e.second);
    return out;
}

MethodConfig MethodConfig::from_name(const std::string& name) {
    MethodConfig cfg;
    std::string base = name;
    if (starts_with(base, "damped-")) {
        cfg.damped = true;
        base = base.substr(7);
    }
    if (ends_with(base, "-heuristic")) {
        cfg.guard = PsdGuard::heuristic;
        base = base.substr(0, base.size() - 10);
    }
    cfg.rule = parse_rule(base);
    if (cfg.damped && !cfg.is_quasi_newton()) throw ConfigError("damping only applies to quasi-Newton rules");
    return cfg;
}

std::string MethodConfig::name() const {
    std::string s = rule_name(rule);
    if (damped) s = "damped-" + s;
    if (guard == PsdGuard::heuristic) s += "-heuristic";
    return s;
}

void MethodConfig::validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in (0, 1]");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    if (!(xi > 0.0 && xi < 1.0)) throw ConfigError("xi must lie in (0, 1)");
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
}

EnergyKind MethodConfig::energy() const {
    if (energy_kind) return *energy_kind;
    switch (rule) {
    case Rule::newton: case Rule::taylor: case Rule::gn: case Rule::partial_gn: case Rule::generalised_gn:
    case Rule::newton_qn: case Rule::newton_riemann:
        return EnergyKind::le;
    case Rule::pep: case Rule::pep_qn: case Rule::pep_riemann:
        return EnergyKind::pepe;
    default:
        return EnergyKind::vfe;
    }
}

bool MethodConfig::uses_cavity() const {
    return rule == Rule::pep || rule == Rule::pep_qn || rule == Rule::pep_riemann;
}

bool MethodConfig::is_quasi_newton() const {
    return rule == Rule::newton_qn || rule == Rule::vi_qn || rule == Rule::pep_qn || rule == Rule::pl_qn;
}

bool MethodConfig::is_riemann() const {
    return rule == Rule::newton_riemann || rule == Rule::vi_riemann || rule == Rule::pep_riemann;
}

bool MethodConfig::guarantees_psd() const {
    if (guard != PsdGuard::none) return true;
    switch (rule) {
    case Rule::pl: case Rule::pl2_gn: case Rule::taylor: case Rule::gn: case Rule::partial_gn:
    case Rule::generalised_gn: case Rule::vgn: case Rule::partial_vgn: case Rule::vggn:
        return true;
    case Rule::newton_qn: case Rule::vi_qn: case Rule::pl_qn:
        return damped;
    default:
        return false;
    }
}

// ----------------------------------------------------------------- site rules

SiteGradient newton_site(const Vec& m, const Vec& y, const Likelihood& lik) {
    const LogDensity d = lik.log_density(y, m);
    return {d.grad, d.hess, m};
}

SiteGradient vi_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad) {
    const ScalarDerivs e = gaussian_expectation_derivs(
        m, C,
        [&](const Vec& f) {
            const LogDensity d = lik.log_density(y, f);
            return ScalarDerivs{d.value, d.grad, d.hess};
        },
        quad);
    return {e.grad, e.hess, m};
}

TiltedMoments pep_tilted(const GaussianState& cav, const Vec& y, const Likelihood& lik, double alpha,
                         const Quadrature& quad) {
    const Mat F = transformed_nodes(cav.mean, cav.cov, quad);
    const auto K = F.cols();
    const int D = lik.latent_dim();
    std::vector<LogDensity> d(K);
    Vec lp(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        d[k] = lik.log_density(y, F.col(k));
        lp(k) = alpha * d[k].value;
    }
    const double logZ = log_weighted_sum_exp(lp, quad.weights);
    if (!std::isfinite(logZ)) throw SingularScaling("pep: tilted normaliser is not finite");
    TiltedMoments t;
    t.value = logZ / alpha;
    t.grad = Vec::Zero(D);
    Mat second = Mat::Zero(D, D);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double w = quad.weights(k) * std::exp(lp(k) - logZ);
        t.grad += w * d[k].grad;
        second += w * (alpha * d[k].grad * d[k].grad.transpose() + d[k].hess);
    }
    t.hess = symmetrise(second - alpha * t.grad * t.grad.transpose());
    t.grad_cov = symmetrise(0.5 * second);
    return t;
}

Mat pep_scaling(const Mat& B, const Mat& C_cav, double alpha) {
    const auto D = B.rows();
    const Mat M = Mat::Identity(D, D) + alpha * B * C_cav;
    Eigen::PartialPivLU<Mat> lu(M);
    if (!(lu.rcond() > 1e-12)) throw SingularScaling("pep: scaling matrix is singular");
    return lu.inverse();
}

SiteGradient pep_site(const GaussianState& cav, const Vec& y, const Likelihood& lik, double alpha,
                      const Quadrature& quad, const Site* site) {
    const TiltedMoments t = pep_tilted(cav, y, lik, alpha, quad);
    const Mat R = pep_scaling(t.hess, cav.cov, alpha);
    SiteGradient g{R * t.grad, symmetrise(R * t.hess), cav.mean};
    if (site) {
        const double lg = log_gaussian_integral(cav.mean, cav.cov, alpha * site->nat1, alpha * site->precision());
        g.log_z = t.value - lg / alpha;
    }
    return g;
}

Slr statistical_linear_regression(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik,
                                  const Quadrature& quad) {
    Slr s;
    s.observed = observed(y);
    const int D = lik.latent_dim();
    const auto Dy = static_cast<Eigen::Index>(s.observed.size());
    const Mat X = sqrt_factor(C) * quad.nodes;
    const auto K = X.cols();
    std::vector<ConditionalMoments> cms(K);
    s.nu_bar = Vec::Zero(Dy);
    s.A = Mat::Zero(Dy, D);
    s.mean_hessian.assign(Dy, Mat::Zero(D, D));
    Mat ESigma = Mat::Zero(Dy, Dy);
    for (Eigen::Index k = 0; k < K; ++k) {
        cms[k] = restrict_moments(lik.moments(m + X.col(k), true), s.observed);
        const double w = quad.weights(k);
        s.nu_bar += w * cms[k].nu;
        s.A += w * cms[k].dnu;
        ESigma += w * cms[k].Sigma;
        for (Eigen::Index j = 0; j < Dy; ++j) s.mean_hessian[j] += w * cms[k].d2nu[j];
    }
    s.Omega = ESigma;
    for (Eigen::Index k = 0; k < K; ++k) {
        const Vec r = cms[k].nu - s.nu_bar - s.A * X.col(k);
        s.Omega += quad.weights(k) * r * r.transpose();
    }
    s.Omega = symmetrise(s.Omega);
    return s;
}

SiteGradient pl_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad) {
    const Slr s = statistical_linear_regression(m, C, y, lik, quad);
    const int D = lik.latent_dim();
    if (s.observed.empty()) return {Vec::Zero(D), Mat::Zero(D, D), m};
    const Mat OinvA = solve_psd(s.Omega, s.A);
    const Vec e = restrict_vec(y, s.observed) - s.nu_bar;
    return {OinvA.transpose() * e, symmetrise(-s.A.transpose() * OinvA), m};
}

Pl2Target pl2_target(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad) {
    const int D = lik.latent_dim();
    const auto idx = observed(y);
    const auto Dy = static_cast<Eigen::Index>(idx.size());
    Pl2Target t;
    t.J = Vec::Zero(D);
    t.logZ_grad = Vec::Zero(D);
    t.D_grad = Mat::Zero(Dy, D);
    if (Dy == 0) return t;

    const Mat X = sqrt_factor(C) * quad.nodes;
    const auto K = X.cols();
    const Vec& w = quad.weights;
    std::vector<ConditionalMoments> cms(K);
    Vec nu_bar = Vec::Zero(Dy);
    Mat A = Mat::Zero(Dy, D);
    std::vector<Mat> E2(Dy, Mat::Zero(D, D));
    Mat Omega = Mat::Zero(Dy, Dy);
    for (Eigen::Index k = 0; k < K; ++k) {
        cms[k] = restrict_moments(lik.moments(m + X.col(k), true), idx);
        nu_bar += w(k) * cms[k].nu;
        A += w(k) * cms[k].dnu;
        Omega += w(k) * cms[k].Sigma;
        for (Eigen::Index j = 0; j < Dy; ++j) E2[j] += w(k) * cms[k].d2nu[j];
    }
    Mat R(Dy, K);
    for (Eigen::Index k = 0; k < K; ++k) {
        R.col(k) = cms[k].nu - nu_bar - A * X.col(k);
        Omega += w(k) * R.col(k) * R.col(k).transpose();
    }
    Omega = symmetrise(Omega);

    // dOmega/dm_i
    std::vector<Mat> dOmega(D, Mat::Zero(Dy, Dy));
    for (Eigen::Index k = 0; k < K; ++k) {
        for (int i = 0; i < D; ++i) {
            Vec dr = cms[k].dnu.col(i) - A.col(i);
            for (Eigen::Index j = 0; j < Dy; ++j) dr(j) -= E2[j].row(i).dot(X.col(k));
            const Mat outer = dr * R.col(k).transpose();
            dOmega[i] += w(k) * (outer + outer.transpose() + cms[k].dSigma[i]);
        }
    }

    Eigen::SelfAdjointEigenSolver<Mat> eig(Omega);
    const Vec& lam = eig.eigenvalues();
    if (!(lam.minCoeff() > 0.0)) throw NotPSD("pl2: Omega is not positive definite");
    const Mat& U = eig.eigenvectors();
    const Mat Oinv = U * lam.cwiseInverse().asDiagonal() * U.transpose();
    const Mat Oinv_half = U * lam.cwiseSqrt().cwiseInverse().asDiagonal() * U.transpose();
    const Vec e = restrict_vec(y, idx) - nu_bar;
    const Vec a = Oinv * e;
    t.value = -0.5 * (Dy * kLog2Pi + lam.array().log().sum()) - 0.5 * e.dot(a);
    for (int i = 0; i < D; ++i) {
        t.logZ_grad(i) = -0.5 * (Oinv * dOmega[i]).trace();
        t.J(i) = t.logZ_grad(i) + a.dot(A.col(i)) + 0.5 * a.dot(dOmega[i] * a);
        t.D_grad.col(i) = inv_sqrt_derivative(eig, dOmega[i]) * e - Oinv_half * A.col(i);
    }
    return t;
}

SiteGradient pl2_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad,
                      Pl2Mode mode) {
    const Pl2Target t = pl2_target(m, C, y, lik, quad);
    const auto D = m.size();
    if (mode == Pl2Mode::partial_gn)
        return {t.J, symmetrise(-t.D_grad.transpose() * t.D_grad - t.logZ_grad * t.logZ_grad.transpose()), m};
    Mat H(D, D);
    for (Eigen::Index i = 0; i < D; ++i) {
        const double h = 1e-4 * (1.0 + std::abs(m(i)));
        Vec mp = m, mn = m;
        mp(i) += h;
        mn(i) -= h;
        H.col(i) = (pl2_target(mp, C, y, lik, quad).J - pl2_target(mn, C, y, lik, quad).J) / (2.0 * h);
    }
    return {t.J, symmetrise(H), m};
}

SiteGradient taylor_site(const Vec& m, const Vec& y, const Likelihood& lik) {
    const int D = lik.latent_dim();
    const auto idx = observed(y);
    if (idx.empty()) return {Vec::Zero(D), Mat::Zero(D, D), m};
    const ConditionalMoments cm = restrict_moments(lik.moments(m), idx);
    const Mat SinvJ = solve_psd(cm.Sigma, cm.dnu);
    return {SinvJ.transpose() * (restrict_vec(y, idx) - cm.nu), symmetrise(-cm.dnu.transpose() * SinvJ), m};
}

SiteGradient gn_site(const Vec& m, const Vec& y, const Likelihood& lik, GnMode mode) {
    GnPieces p = gn_pieces(m, y, lik, mode);
    return {p.J, p.H, m};
}

SiteGradient vgn_site(const Vec& m, const Mat& C, const Vec& y, const Likelihood& lik, const Quadrature& quad,
                      VgnMode mode) {
    if (mode != VgnMode::vggn && !lik.continuous())
        throw ModeUnsupported(lik.name() + ": vgn and partial-vgn need the continuous residual form");
    const GnMode inner = mode == VgnMode::vgn ? GnMode::gn
                         : mode == VgnMode::partial_vgn ? GnMode::partial_gn : GnMode::generalised_gn;
    const Mat F = transformed_nodes(m, C, quad);
    const int D = lik.latent_dim();
    SiteGradient g{Vec::Zero(D), Mat::Zero(D, D), m};
    for (Eigen::Index k = 0; k < F.cols(); ++k) {
        const Vec f = F.col(k);
        g.J += quad.weights(k) * lik.log_density(y, f).grad;
        g.H += quad.weights(k) * gn_pieces(f, y, lik, inner, false).H;
    }
    g.H = symmetrise(g.H);
    return g;
}

// ---------------------------------------------------------------- quasi-Newton

BfgsResult bfgs_update(const Mat& B, const Vec& s, const Vec& g, bool damped, double xi) {
    BfgsResult res{B, false, 1.0, g};
    const Vec Bs = B * s;
    const double sBs = s.dot(Bs);
    const double sg = s.dot(g);
    const double scale = std::max(1.0, B.cwiseAbs().maxCoeff()) * s.squaredNorm();
    if (s.squaredNorm() == 0.0) return res;

    Vec r = g;
    if (damped) {
        if (sg > (1.0 - xi) * sBs) {
            res.psi = xi * sBs / (sBs - sg);
            r = res.psi * g + (1.0 - res.psi) * Bs;
        }
    }
    res.r = r;
    const double sr = s.dot(r);
    if (!(sr < -1e-14 * scale)) return res;

    Mat out = B + r * r.transpose() / sr;
    if (sBs < -1e-300) out -= Bs * Bs.transpose() / sBs;
    res.B = symmetrise(out);
    res.updated = true;
    return res;
}

namespace {

// The surrogate's own Hessian when it is NSD, otherwise the Gauss-Newton fallback.
Mat nsd_or(const Mat& exact, const std::function<Mat()>& fallback) {
    if (exact.allFinite() && min_eigenvalue(-exact) >= -kPsdTolerance) return exact;
    return fallback();
}

}  // namespace

QnTarget qn_target(QnFamily family, const GaussianState& st, const Vec& y, const Likelihood& lik,
                   const Quadrature& quad, double alpha) {
    const int D = lik.latent_dim();
    QnTarget t;
    t.eta.resize(D + D * D);
    t.eta << st.mean, vec_of(st.cov);
    t.grad = Vec::Zero(D + D * D);
    t.C_ref = st.cov;
    const VgnMode vmode = seed_vgn_mode(lik);
    switch (family) {
    case QnFamily::newton: {
        const LogDensity ld = lik.log_density(y, st.mean);
        t.J = ld.grad;
        t.grad.head(D) = t.J;
        t.seed_H = nsd_or(ld.hess, [&] {
            return gn_pieces(st.mean, y, lik, lik.continuous() ? GnMode::gn : GnMode::generalised_gn).H;
        });
        break;
    }
    case QnFamily::vi: {
        const SiteGradient v = vi_site(st.mean, st.cov, y, lik, quad);
        t.J = v.J;
        t.grad << v.J, vec_of(0.5 * v.H);
        t.seed_H = nsd_or(v.H, [&] { return vgn_site(st.mean, st.cov, y, lik, quad, vmode).H; });
        break;
    }
    case QnFamily::pep: {
        const TiltedMoments tm = pep_tilted(st, y, lik, alpha, quad);
        t.J = tm.grad;
        t.grad << tm.grad, vec_of(tm.grad_cov);
        t.seed_H = nsd_or(tm.hess, [&] { return vgn_site(st.mean, st.cov, y, lik, quad, vmode).H; });
        break;
    }
    case QnFamily::pl: {
        const Slr s = statistical_linear_regression(st.mean, st.cov, y, lik, quad);
        t.J = Vec::Zero(D);
        t.seed_H = Mat::Zero(D, D);
        if (!s.observed.empty()) {
            const Vec e = restrict_vec(y, s.observed) - s.nu_bar;
            const Mat OinvA = solve_psd(s.Omega, s.A);
            const Vec a = solve_psd(s.Omega, e);
            t.J = OinvA.transpose() * e;
            Mat gC = Mat::Zero(D, D);
            for (std::size_t j = 0; j < s.observed.size(); ++j) gC += 0.5 * a(j) * s.mean_hessian[j];
            t.grad << t.J, vec_of(gC);
            t.seed_H = symmetrise(-s.A.transpose() * OinvA);
        }
        break;
    }
    }
    return t;
}

SiteGradient qn_site(QnFamily family, QnSiteState& state, const GaussianState& st, const Vec& y,
                     const Likelihood& lik, const Quadrature& quad, const MethodConfig& cfg) {
    const int D = lik.latent_dim();
    const QnTarget t = qn_target(family, st, y, lik, quad, cfg.alpha);
    if (!state.initialised) {
        state.B = Mat::Zero(D + D * D, D + D * D);
        state.B.topLeftCorner(D, D) = t.seed_H;
        state.initialised = true;
    } else {
        const BfgsResult r = bfgs_update(state.B, t.eta - state.eta, t.grad - state.grad, cfg.damped, cfg.xi);
        state.B = r.B;
        if (r.updated) ++state.accepted;
        else ++state.rejected;
    }
    state.eta = t.eta;
    state.grad = t.grad;
    const Mat Bmm = state.B.topLeftCorner(D, D);
    if (family == QnFamily::pep) {
        const Mat R = pep_scaling(Bmm, t.C_ref, cfg.alpha);
        return {R * t.J, symmetrise(R * Bmm), st.mean};
    }
    return {t.J, Bmm, st.mean};
}

// ------------------------------------------------------------------- Riemann

Mat riemann_correction(const Mat& H_raw, const Mat& site_precision, double rho) {
    Eigen::LLT<Mat> llt(site_precision);
    if (llt.info() != Eigen::Success) throw NotPSD("riemann: site covariance is singular");
    const Mat G = site_precision + H_raw;
    return symmetrise(H_raw - 0.5 * rho * G * llt.solve(G));
}

// ------------------------------------------------------------------ dispatch

SiteGradient compute_site(const MethodConfig& cfg, const SiteContext& ctx) {
    const Vec& m = ctx.marginal.mean;
    const Mat& C = ctx.marginal.cov;
    const Likelihood& lik = ctx.lik;
    const Vec& y = ctx.y;
    const Quadrature& q = ctx.quad;
    auto cav = [&] { return ctx.cavity ? *ctx.cavity : cavity(ctx.marginal, ctx.site, cfg.alpha); };
    try {
        SiteGradient g;
        switch (cfg.rule) {
        case Rule::newton: g = newton_site(m, y, lik); break;
        case Rule::vi: g = vi_site(m, C, y, lik, q); break;
        case Rule::pep: g = pep_site(cav(), y, lik, cfg.alpha, q, &ctx.site); break;
        case Rule::pl: g = pl_site(m, C, y, lik, q); break;
        case Rule::pl2: g = pl2_site(m, C, y, lik, q, Pl2Mode::full); break;
        case Rule::pl2_gn: g = pl2_site(m, C, y, lik, q, Pl2Mode::partial_gn); break;
        case Rule::taylor: g = taylor_site(m, y, lik); break;
        case Rule::gn: g = gn_site(m, y, lik, GnMode::gn); break;
        case Rule::partial_gn: g = gn_site(m, y, lik, GnMode::partial_gn); break;
        case Rule::generalised_gn: g = gn_site(m, y, lik, GnMode::generalised_gn); break;
        case Rule::vgn: g = vgn_site(m, C, y, lik, q, VgnMode::vgn); break;
        case Rule::partial_vgn: g = vgn_site(m, C, y, lik, q, VgnMode::partial_vgn); break;
        case Rule::vggn: g = vgn_site(m, C, y, lik, q, VgnMode::vggn); break;
        case Rule::newton_qn: g = qn_site(QnFamily::newton, *ctx.qn, ctx.marginal, y, lik, q, cfg); break;
        case Rule::vi_qn: g = qn_site(QnFamily::vi, *ctx.qn, ctx.marginal, y, lik, q, cfg); break;
        case Rule::pl_qn: g = qn_site(QnFamily::pl, *ctx.qn, ctx.marginal, y, lik, q, cfg); break;
        case Rule::pep_qn: {
            g = qn_site(QnFamily::pep, *ctx.qn, cav(), y, lik, q, cfg);
            break;
        }
        case Rule::newton_riemann:
            g = newton_site(m, y, lik);
            g.H = riemann_correction(g.H, ctx.site.precision(), cfg.rho);
            break;
        case Rule::vi_riemann:
            g = vi_site(m, C, y, lik, q);
            g.H = riemann_correction(g.H, ctx.site.precision(), cfg.rho);
            break;
        case Rule::pep_riemann:
            g = pep_site(cav(), y, lik, cfg.alpha, q, &ctx.site);
            g.H = riemann_correction(g.H, ctx.site.precision(), cfg.rho);
            break;
        }
        g.ok = g.J.allFinite() && g.H.allFinite();
        return g;
    } catch (const ModeUnsupported&) {
        throw;
    } catch (const Error&) {
        SiteGradient bad;
        bad.ok = false;
        return bad;
    }
}

}  // namespace bnk
