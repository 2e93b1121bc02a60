// dpets: run, regress, validate and resume experiments from a JSON config.
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dpets/config.hpp"
#include "dpets/errors.hpp"
#include "dpets/experiment.hpp"

namespace fs = std::filesystem;
using namespace dpets;

namespace {

constexpr int exit_runtime = 1;
constexpr int exit_config = 2;

struct Options {
    std::string config;
    std::optional<int> trials;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> ablation;
    std::optional<std::string> out;
    int parallel = 1;
};

ExperimentSpec load(const Options& o)
{
    auto spec = experiment_from_json(read_json_file(o.config));
    if (o.trials)
        spec.trials = *o.trials;
    if (o.seed) {
        spec.run.seed = *o.seed;
        if (spec.regression)
            spec.regression->seed = *o.seed;
    }
    if (o.ablation)
        spec.run.ablation = parse_ablation(*o.ablation);
    if (o.out)
        spec.out = *o.out;
    if (const char* env = std::getenv("DPETS_OUT"); env && *env)
        spec.out = env;
    spec.validate();
    return spec;
}

int cmd_run(const Options& o, bool resume)
{
    const auto spec = load(o);
    const fs::path out = spec.out;
    if (resume) {
        for (int i = 0; i < spec.trials; ++i)
            if (!fs::exists(out / ("trial_" + std::to_string(i)) / "config.json"))
                throw InputError("nothing to resume: " + (out / ("trial_" + std::to_string(i))).string()
                                 + " has no checkpoint");
    }
    std::cerr << "config " << config_hash(spec.run) << ", " << spec.trials << " trial(s) -> " << out.string() << '\n';
    const auto outcome = run_experiment(spec, out, o.parallel, &std::cerr);
    for (const auto& t : outcome.trials)
        if (!t.ok && t.error.find("different config") != std::string::npos)
            throw ConfigError(t.error);
    return outcome.ok() ? 0 : exit_runtime;
}

int cmd_regress(const Options& o)
{
    const auto spec = load(o);
    if (!spec.regression)
        throw ConfigError("field 'regression': required by the regress command");
    const auto& cfg = *spec.regression;
    const auto model = train_regression_model(cfg);
    const auto pred = predict_regression(model, cfg);
    const fs::path out = spec.out;
    fs::create_directories(out);
    write_predictions(out / "predictions.csv", pred);
    std::cerr << "mean std in support " << pred.mean_std(true) << ", in gap " << pred.mean_std(false) << '\n';
    return 0;
}

int cmd_validate(const Options& o)
{
    const auto spec = load(o);
    std::cout << "ok: config hash " << config_hash(spec.run) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Model-based RL with restrictive dropout ensembles"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
        sub->add_option("--seed", o.seed, "Base seed (overrides the config)");
        sub->add_option("--out", o.out, "Output directory (DPETS_OUT overrides)");
    };
    auto add_trials = [&](CLI::App* sub) {
        sub->add_option("--trials", o.trials, "Number of trials, seeds seed..seed+N-1");
        sub->add_option("--ablation", o.ablation, "full, mc, be, no_fec or no_du");
        sub->add_option("--parallel-trials", o.parallel, "Trials run concurrently")->check(CLI::PositiveNumber);
    };

    auto* run = app.add_subcommand("run", "Run learning trials and write learning_curve.csv");
    add_common(run);
    add_trials(run);
    auto* resume = app.add_subcommand("resume", "Continue interrupted trials from their checkpoints");
    add_common(resume);
    add_trials(resume);
    auto* regress = app.add_subcommand("regress", "Fit the sin-with-gap regression and write predictions.csv");
    add_common(regress);
    auto* validate = app.add_subcommand("validate", "Check a config file");
    validate->add_option("--config", o.config, "Experiment config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*run)
            return cmd_run(o, false);
        if (*resume)
            return cmd_run(o, true);
        if (*regress)
            return cmd_regress(o);
        return cmd_validate(o);
    } catch (const ConfigError& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_runtime;
    }
}
