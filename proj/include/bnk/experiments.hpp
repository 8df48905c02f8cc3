#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bnk/inference.hpp"
#include "bnk/likelihoods.hpp"

namespace bnk {

// ---------------------------------------------------------------------- data

struct Dataset {
    Mat X;                     // N x 1 inputs
    Mat Y;                     // N x Dy, NaN marks a missing output
    std::optional<Mat> F;      // N x D ground-truth latents (synthetic only)
};

/// Two-column CSV (time, acceleration) with a header row. Both columns are
/// standardised with the population standard deviation.
Dataset load_motorcycle(const std::filesystem::path& path);

/// Amplitude demodulation sample: y = f1 softplus(f2) + noise, N = 1000 on [0, 200].
Dataset synth_product(std::uint64_t seed);

struct GprnData {
    Dataset data;               // Y with the held-out block set to NaN
    Mat Y_test;                 // held-out values, NaN elsewhere
    Mat Y_clean;                // W f before noise
    std::vector<int> held_out;  // rows of the removed block
};

/// GPRN sample with 400 steps on [-17, 147]; streams 2 and 3 are removed at
/// rows 134..266 (0-based, inclusive).
GprnData synth_gprn(std::uint64_t seed);

/// Deterministic k-fold split: seeded shuffle, then contiguous blocks.
/// Returns the test indices of each fold, each sorted ascending.
std::vector<std::vector<int>> cv_folds(int N, int folds, std::uint64_t seed);

// ------------------------------------------------------------------- metrics

/// -mean_n log int p(y_n|f) q_n(f) df. Rows of Y that are entirely NaN are skipped.
double nlpd(const std::vector<GaussianState>& q, const Likelihood& lik, const Mat& Y, const Quadrature& quad);

/// Root mean squared error between two equally sized vectors.
double rmse(const Vec& estimate, const Vec& truth);

// --------------------------------------------------------------- experiments

enum class ExperimentKind { hsced, product, gprn, custom };

ExperimentKind parse_experiment(const std::string& name);
std::string experiment_name(ExperimentKind kind);

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::hsced;
    MethodConfig method;
    BackendKind backend = BackendKind::dense;
    std::uint64_t seed = 0;
    int folds = 4;               // cross-validation folds; independent samples for gprn
    int iters = 100;
    int inducing = 0;            // sparse backend: number of inducing inputs (0: N/4)
    std::filesystem::path out;   // empty: no files written
    std::filesystem::path data;  // hsced / custom input CSV
    std::string likelihood = "gaussian";  // custom only
    double noise = 0.1;                   // custom gaussian noise variance

    /// Experiment defaults for rho, xi, alpha, iteration count and backend.
    static ExperimentConfig defaults(ExperimentKind kind);
    void validate() const;
};

/// One sweep of one fold.
struct MetricRow {
    int iteration = 0;
    double energy = 0.0;
    double train_nlpd = 0.0;
    double test_nlpd = 0.0;
    std::vector<double> rmse;   // one per reported component (synthetic only)
    int violations = 0;
    double min_site_eig = 0.0;  // smallest site-precision eigenvalue after the sweep
    double wall_ms = 0.0;
    bool last_stable = false;   // marks the row after which the fit stopped
};

struct FoldResult {
    std::vector<MetricRow> rows;
    FitStatus status = FitStatus::max_iters;
    std::string message;
};

struct ExperimentResult {
    std::vector<FoldResult> folds;
    std::vector<std::string> rmse_names;
    std::vector<MetricRow> mean;   // per iteration; a stopped fold carries its last stable row
    double final_test_nlpd = 0.0;  // mean over folds of the last row
    int total_violations = 0;
    double min_site_eig = 0.0;
    double seconds = 0.0;

    /// True when an unguarded rule produced a non-PSD site in any fold.
    bool psd_failure() const;
};

/// Runs every fold and, if cfg.out is set, writes fold_<k>.csv, mean.csv,
/// tidy.csv and timing.csv into it.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace bnk
