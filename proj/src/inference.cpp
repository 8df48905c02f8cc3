#include "bnk/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <random>

#include "bnk/errors.hpp"

namespace bnk {

namespace {

const Quadrature& quadrature_for(const MethodConfig& cfg, const Problem& p) {
    return cfg.quadrature ? *cfg.quadrature : p.quad;
}

SiteGradient site_gradient(const MethodConfig& cfg, const Problem& p, const Quadrature& q,
                           std::vector<QnSiteState>* qn, int n) {
    const Vec y = row(p.Y, n);
    const Site& site = p.backend.sites()[n];
    SiteContext ctx{p.lik, y, p.backend.marginals()[n], site, q, qn ? &(*qn)[n] : nullptr};
    if (!cfg.uses_cavity()) return compute_site(cfg, ctx);
    GaussianState cav;
    try {
        cav = p.backend.cavity(n, cfg.alpha).cavity;
    } catch (const Error&) {
        SiteGradient bad;
        bad.ok = false;
        return bad;
    }
    ctx.cavity = &cav;
    return compute_site(cfg, ctx);
}

std::vector<int> all_sites(const Problem& p, const std::vector<int>& batch) {
    if (!batch.empty()) return batch;
    std::vector<int> idx(p.backend.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

SiteGradients unset_gradients(const Problem& p) {
    SiteGradients g(p.backend.size());
    for (auto& gi : g) gi.ok = false;
    return g;
}

double site_energy(EnergyKind kind, const Problem& p, double alpha, int n) {
    const Vec y = row(p.Y, n);
    const GaussianState& q = p.backend.marginals()[n];
    const Site& s = p.backend.sites()[n];
    const auto log_t = [&](const Vec& m) { return s.nat1.dot(m) + m.dot(s.nat2 * m); };
    switch (kind) {
    case EnergyKind::vfe: {
        const double ell = gaussian_expectation(q.mean, q.cov, [&](const Vec& f) { return p.lik.log_prob(y, f); }, p.quad);
        return -ell + log_t(q.mean) + (s.nat2 * q.cov).trace();
    }
    case EnergyKind::le: return -p.lik.log_prob(y, q.mean) + log_t(q.mean);
    case EnergyKind::le2: return -p.lik.log_prob(y, q.mean);
    case EnergyKind::pepe: {
        const CavityTerm c = p.backend.cavity(n, alpha);
        const Mat F = transformed_nodes(c.cavity.mean, c.cavity.cov, p.quad);
        Vec lp(F.cols());
        for (Eigen::Index k = 0; k < F.cols(); ++k) lp(k) = alpha * p.lik.log_prob(y, F.col(k));
        return -log_weighted_sum_exp(lp, p.quad.weights) / alpha + c.log_site_term;
    }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

// Runs body(i) for every index, in parallel or not; the first exception is rethrown.
template <class Body>
void for_each_site(int count, bool parallel, Body&& body) {
    std::exception_ptr err;
    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < count; ++i) {
            try {
                body(i);
            } catch (...) {
#pragma omp critical(bnk_sweep_error)
                if (!err) err = std::current_exception();
            }
        }
    } else {
        for (int i = 0; i < count; ++i) body(i);
    }
    if (err) std::rethrow_exception(err);
}

SiteGradients gradients_impl(const MethodConfig& cfg, const Problem& p, std::vector<QnSiteState>* qn,
                             const std::vector<int>& batch, bool parallel) {
    const Quadrature& q = quadrature_for(cfg, p);
    if (cfg.is_quasi_newton() && (!qn || static_cast<int>(qn->size()) != p.backend.size()))
        throw ConfigError("quasi-Newton rules need one state per site");
    const std::vector<int> idx = all_sites(p, batch);
    SiteGradients out = unset_gradients(p);
    for_each_site(static_cast<int>(idx.size()), parallel,
                  [&](int i) { out[idx[i]] = site_gradient(cfg, p, q, qn, idx[i]); });
    return out;
}

std::vector<double> energy_impl(EnergyKind kind, const Problem& p, double alpha, bool parallel) {
    std::vector<double> terms(p.backend.size());
    for_each_site(p.backend.size(), parallel, [&](int n) { terms[n] = site_energy(kind, p, alpha, n); });
    return terms;
}

}  // namespace

SiteGradients sweep_gradients(const MethodConfig& cfg, const Problem& p, std::vector<QnSiteState>* qn,
                              const std::vector<int>& batch) {
    return gradients_impl(cfg, p, qn, batch, true);
}

SiteGradients sweep_gradients_serial(const MethodConfig& cfg, const Problem& p, std::vector<QnSiteState>* qn,
                                     const std::vector<int>& batch) {
    return gradients_impl(cfg, p, qn, batch, false);
}

std::vector<double> energy_terms(EnergyKind kind, const Problem& p, double alpha) {
    return energy_impl(kind, p, alpha, true);
}

std::vector<double> energy_terms_serial(EnergyKind kind, const Problem& p, double alpha) {
    return energy_impl(kind, p, alpha, false);
}

namespace {

double total_energy(EnergyKind kind, const Problem& p, double alpha, bool parallel) {
    const std::vector<double> terms = energy_impl(kind, p, alpha, parallel);
    double e = 0.0;
    for (double t : terms) e += t;
    if (kind == EnergyKind::le2) return e + p.backend.laplace_prior_terms();
    return e - p.backend.log_z_tilde();
}

}  // namespace

double energy(EnergyKind kind, const Problem& p, double alpha) { return total_energy(kind, p, alpha, true); }

std::string status_name(FitStatus s) {
    switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iters: return "max_iters";
    case FitStatus::psd_failure: return "psd_failure";
    case FitStatus::numerical_failure: return "numerical_failure";
    }
    return "?";
}

FitResult fit(Backend& backend, const Likelihood& lik, const Mat& Y, const MethodConfig& cfg,
              const FitOptions& opts, SiteParams init, const IterationCallback& on_iteration) {
    cfg.validate();
    const int N = backend.size(), D = backend.latent_dim();
    if (lik.latent_dim() != D) throw ConfigError("likelihood and kernel latent dimensions differ");
    if (Y.rows() != N || Y.cols() != lik.obs_dim()) throw ConfigError("observation matrix has the wrong shape");
    if (init.size() == 0) init = SiteParams::init(N, D);

    const Quadrature quad = cfg.quadrature ? *cfg.quadrature : default_quadrature(D);
    const EnergyKind kind = cfg.energy();
    const Problem p{backend, lik, Y, quad};
    std::vector<QnSiteState> qn(cfg.is_quasi_newton() ? N : 0);
    std::mt19937_64 rng(opts.seed);

    auto safe_energy = [&] {
        try {
            return total_energy(kind, p, cfg.alpha, opts.parallel);
        } catch (const Error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    FitResult res;
    res.sites = init;
    backend.refresh(res.sites);
    double prev = safe_energy();

    for (int it = 1; it <= opts.max_iters; ++it) {
        std::vector<int> batch;
        if (opts.batch_size > 0 && opts.batch_size < N) {
            std::vector<int> all(N);
            std::iota(all.begin(), all.end(), 0);
            std::sample(all.begin(), all.end(), std::back_inserter(batch), opts.batch_size, rng);
        }
        const SiteGradients g = opts.parallel ? sweep_gradients(cfg, p, &qn, batch)
                                              : sweep_gradients_serial(cfg, p, &qn, batch);
        LocalUpdateResult upd = apply_local_update(res.sites, g, cfg.rho, cfg.guard, cfg.eps);
        IterationRecord rec;
        rec.iteration = it;
        rec.violations = upd.violations;
        rec.projected = upd.projected;
        rec.rejected = upd.rejected;
        rec.skipped = upd.skipped - (batch.empty() ? 0 : N - static_cast<int>(batch.size()));

        if (cfg.guard == PsdGuard::none && upd.violations > 0) {
            rec.energy = std::numeric_limits<double>::quiet_NaN();
            res.trace.push_back(rec);
            res.status = FitStatus::psd_failure;
            res.message = "non-PSD site precision at sweep " + std::to_string(it) + "; kept the last stable step";
            break;
        }
        try {
            backend.refresh(upd.sites);
        } catch (const Error& e) {
            backend.refresh(res.sites);
            rec.energy = std::numeric_limits<double>::quiet_NaN();
            res.trace.push_back(rec);
            res.status = FitStatus::numerical_failure;
            res.message = std::string(e.what()) + " at sweep " + std::to_string(it) + "; kept the last stable step";
            break;
        }
        res.sites = std::move(upd.sites);
        rec.energy = safe_energy();
        res.trace.push_back(rec);
        if (on_iteration) on_iteration(rec, backend);

        const bool converged = std::isfinite(rec.energy) && std::isfinite(prev) &&
                               std::abs(rec.energy - prev) <= opts.tol * (1.0 + std::abs(rec.energy));
        prev = rec.energy;
        if (converged && opts.stop_on_convergence) {
            res.status = FitStatus::converged;
            break;
        }
    }
    for (const auto& s : qn) {
        res.qn_accepted += s.accepted;
        res.qn_rejected += s.rejected;
    }
    return res;
}

}  // namespace bnk
