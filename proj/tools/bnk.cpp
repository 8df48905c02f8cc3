#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bnk/checks.hpp"
#include "bnk/errors.hpp"
#include "bnk/experiments.hpp"

namespace {

struct RunArgs {
    std::string experiment;
    std::string rule;
    std::optional<double> rho, alpha, xi;
    std::optional<std::string> backend;
    std::optional<int> folds, iters, inducing;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;
    std::string likelihood = "gaussian";
    double noise = 0.1;
};

bnk::ExperimentConfig to_config(const RunArgs& a) {
    using namespace bnk;
    ExperimentConfig cfg = ExperimentConfig::defaults(parse_experiment(a.experiment));
    MethodConfig m = MethodConfig::from_name(a.rule);
    m.rho = a.rho.value_or(cfg.method.rho);
    m.alpha = a.alpha.value_or(cfg.method.alpha);
    m.xi = a.xi.value_or(cfg.method.xi);
    cfg.method = m;
    if (a.backend) cfg.backend = parse_backend(*a.backend);
    if (a.folds) cfg.folds = *a.folds;
    if (a.iters) cfg.iters = *a.iters;
    if (a.inducing) cfg.inducing = *a.inducing;
    cfg.seed = *a.seed;
    cfg.out = a.out;
    cfg.data = a.data;
    cfg.likelihood = a.likelihood;
    cfg.noise = a.noise;
    return cfg;
}

int run(const RunArgs& a) {
    for (const auto& [missing, flag] : {std::pair{a.experiment.empty(), "--experiment"}, std::pair{a.rule.empty(), "--rule"},
                                        std::pair{!a.seed, "--seed"}}) {
        if (missing) {
            std::cerr << "bnk: " << flag << " is required (flag or config key)\n";
            return 2;
        }
    }
    bnk::ExperimentConfig cfg;
    try {
        cfg = to_config(a);
        cfg.validate();
    } catch (const bnk::Error& e) {
        std::cerr << "bnk: config error: " << e.what() << '\n';
        return 2;
    }
    bnk::ExperimentResult res;
    try {
        res = bnk::run_experiment(cfg);
    } catch (const bnk::ConfigError& e) {
        std::cerr << "bnk: config error: " << e.what() << '\n';
        return 2;
    } catch (const bnk::Error& e) {
        std::cerr << "bnk: " << e.what() << '\n';
        return 1;
    }

    std::printf("experiment %s, rule %s, backend %s, %zu folds, %.1f s\n", bnk::experiment_name(cfg.experiment).c_str(),
                cfg.method.name().c_str(), bnk::backend_name(cfg.backend).c_str(), res.folds.size(), res.seconds);
    for (std::size_t k = 0; k < res.folds.size(); ++k) {
        const auto& f = res.folds[k];
        const double nl = f.rows.empty() ? 0.0 : f.rows.back().test_nlpd;
        std::printf("  fold %zu: %s after %zu sweeps, test NLPD %.4f\n", k, bnk::status_name(f.status).c_str(),
                    f.rows.size(), nl);
    }
    std::printf("mean test NLPD %.4f, PSD violations %d\n", res.final_test_nlpd, res.total_violations);
    if (!cfg.out.empty()) std::printf("wrote %s\n", cfg.out.string().c_str());

    if (res.psd_failure() && cfg.method.guard == bnk::PsdGuard::none) {
        for (const auto& f : res.folds)
            if (f.status == bnk::FitStatus::psd_failure) std::cerr << "bnk: " << f.message << '\n';
        return 3;
    }
    return 0;
}

// "key = value" lines of a TOML file as "--key value" arguments.
std::vector<std::string> config_args(const std::string& path) {
    std::vector<std::string> out;
    for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_file(path)) {
        if (item.name == "++" || item.name == "--") continue;
        if (!item.parents.empty()) throw CLI::ConversionError("sections are not supported: " + item.fullname());
        out.push_back("--" + item.name);
        out.insert(out.end(), item.inputs.begin(), item.inputs.end());
    }
    return out;
}

int check(unsigned seed) {
    bool ok = true;
    for (const auto& c : bnk::run_invariant_checks(seed)) {
        std::printf("%s  %-48s %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
        ok = ok && c.pass;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayes-Newton approximate inference for Gaussian process models"};
    app.require_subcommand(1);

    RunArgs a;
    auto* r = app.add_subcommand("run", "fit one rule on an experiment with cross-validation");
    std::string config_file;
    r->add_option("--config", config_file, "TOML file with any of the flags below; flags take precedence")
        ->check(CLI::ExistingFile);
    r->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    r->add_option("--experiment", a.experiment, "hsced, product, gprn or custom");
    r->add_option("--rule", a.rule, "update rule, e.g. vgn, damped-vi-qn, newton-heuristic");
    r->add_option("--rho", a.rho, "learning rate (experiment default if omitted)");
    r->add_option("--alpha", a.alpha, "PEP power");
    r->add_option("--xi", a.xi, "BFGS damping");
    r->add_option("--backend", a.backend, "dense, sparse or markov");
    r->add_option("--folds", a.folds, "cross-validation folds (independent samples for gprn)");
    r->add_option("--iters", a.iters, "sweeps per fold");
    r->add_option("--inducing", a.inducing, "inducing points for the sparse backend");
    r->add_option("--seed", a.seed, "seed for splits, synthetic data and batches");
    r->add_option("--out", a.out, "output directory for CSV files");
    r->add_option("--data", a.data, "input CSV (hsced, custom)");
    r->add_option("--likelihood", a.likelihood, "custom: gaussian, heteroscedastic, bernoulli, poisson");
    r->add_option("--noise", a.noise, "custom: gaussian noise variance");

    unsigned check_seed = 0;
    auto* c = app.add_subcommand("check", "run the invariant suite");
    c->add_option("--seed", check_seed, "seed for the random problems");

    CLI11_PARSE(app, argc, argv);
    if (r->parsed() && !config_file.empty()) {
        // Re-parse with the file's keys placed before the command line, so flags win.
        std::vector<std::string> args;
        try {
            args = config_args(config_file);
        } catch (const CLI::Error& e) {
            std::cerr << "bnk: config error: " << e.what() << '\n';
            return 2;
        }
        args.insert(args.begin(), "run");
        for (int i = 2; i < argc; ++i) args.emplace_back(argv[i]);
        std::reverse(args.begin(), args.end());
        a = RunArgs{};
        config_file.clear();
        CLI11_PARSE(app, args);
    }
    if (r->parsed()) return run(a);
    return check(check_seed);
}
