#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bnk/backends.hpp"
#include "bnk/rules.hpp"

namespace bnk {

/// Observations, one row per site. NaN marks a missing output.
struct Problem {
    const Backend& backend;
    const Likelihood& lik;
    const Mat& Y;
    const Quadrature& quad;
};

inline Vec row(const Mat& Y, int n) { return Y.row(n).transpose(); }

// ---------------------------------------------------------------- site sweeps

/// Per-site (J, H) for the sites in `batch` (all sites if empty). Entries
/// outside the batch are returned with ok = false. QN state is per site.
SiteGradients sweep_gradients(const MethodConfig& cfg, const Problem& p, std::vector<QnSiteState>* qn,
                              const std::vector<int>& batch = {});

/// Single-threaded reference for sweep_gradients.
SiteGradients sweep_gradients_serial(const MethodConfig& cfg, const Problem& p, std::vector<QnSiteState>* qn,
                                     const std::vector<int>& batch = {});

// -------------------------------------------------------------------- energies

/// Per-site contributions; the energy is their ordered sum minus log Z~ (plus
/// the prior terms for le2).
std::vector<double> energy_terms(EnergyKind kind, const Problem& p, double alpha);
std::vector<double> energy_terms_serial(EnergyKind kind, const Problem& p, double alpha);

/// vfe: -sum E_q[log p] + sum E_q[log t_n] - log Z~
/// le:  -sum log p(y|m) + sum log t_n(m) - log Z~
/// le2: -sum log p(y|m) + 1/2 m' K^-1 m + 1/2 log|I + K P~|
/// pepe: -(1/a) sum log E_cav[p^a] + (1/a) sum log E_cav[t_n^a] - log Z~
double energy(EnergyKind kind, const Problem& p, double alpha);

// --------------------------------------------------------------------- fitting

enum class FitStatus { converged, max_iters, psd_failure, numerical_failure };

std::string status_name(FitStatus s);

struct IterationRecord {
    int iteration = 0;
    double energy = 0.0;
    int violations = 0;
    int projected = 0;
    int rejected = 0;
    int skipped = 0;
};

struct FitOptions {
    int max_iters = 100;
    double tol = 1e-6;
    int batch_size = 0;            // 0: every site each sweep
    std::uint64_t seed = 0;        // batch sampling
    bool parallel = true;
    bool stop_on_convergence = true;
};

struct FitResult {
    SiteParams sites;              // last stable sites; the backend holds their posterior
    std::vector<IterationRecord> trace;
    FitStatus status = FitStatus::max_iters;
    std::string message;
    int qn_accepted = 0;
    int qn_rejected = 0;
};

using IterationCallback = std::function<void(const IterationRecord&, const Backend&)>;

/// Synchronous sweeps: gradients from the frozen posterior, damped local update,
/// global refresh, energy. With guard = none a non-PSD site precision stops the
/// fit and the backend is left at the last stable step.
FitResult fit(Backend& backend, const Likelihood& lik, const Mat& Y, const MethodConfig& cfg,
              const FitOptions& opts, SiteParams init = {}, const IterationCallback& on_iteration = {});

}  // namespace bnk
