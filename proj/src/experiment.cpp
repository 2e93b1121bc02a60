#include "dpets/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "dpets/errors.hpp"

namespace dpets {

namespace fs = std::filesystem;

bool ExperimentOutcome::ok() const
{
    for (const auto& t : trials)
        if (!t.ok)
            return false;
    return !trials.empty();
}

RunConfig trial_config(const RunConfig& base, int trial)
{
    RunConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(trial);
    return cfg;
}

namespace {

std::string number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

ExperimentOutcome run_experiment(const ExperimentSpec& spec, const fs::path& out, int parallel, std::ostream* progress)
{
    spec.validate();
    if (parallel < 1)
        throw ConfigError("parallel-trials: must be >= 1");
    fs::create_directories(out);

    ExperimentOutcome outcome;
    outcome.trials.resize(static_cast<std::size_t>(spec.trials));
    std::atomic<int> next{0};
    std::mutex report;
    auto worker = [&] {
        for (int i = next++; i < spec.trials; i = next++) {
            auto& t = outcome.trials[static_cast<std::size_t>(i)];
            t.trial = i;
            const auto cfg = trial_config(spec.run, i);
            t.seed = cfg.seed;
            try {
                t.result = learn(cfg, out / ("trial_" + std::to_string(i)));
                t.ok = true;
                for (const auto& ep : t.result.episodes)
                    if (!ep.valid) {
                        t.ok = false;
                        t.error = "episode " + std::to_string(ep.episode) + " failed: " + ep.error;
                        break;
                    }
            } catch (const std::exception& e) {
                t.ok = false;
                t.error = e.what();
            }
            if (progress) {
                std::lock_guard<std::mutex> lock(report);
                *progress << "trial " << i << " (seed " << t.seed << "): "
                          << (t.ok ? "done" : "failed: " + t.error) << '\n';
            }
        }
    };
    const int workers = std::min(parallel, spec.trials);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back(worker);
        for (auto& th : pool)
            th.join();
    }

    write_learning_curve(out / "learning_curve.csv", outcome, spec.run.steps);
    nlohmann::json meta = {
        {"config_hash", config_hash(spec.run)},
        {"ablation", to_string(spec.run.ablation)},
        {"env", spec.run.env},
        {"trials", spec.trials},
        {"seeds", nlohmann::json::array()},
        {"failed_trials", nlohmann::json::array()},
    };
    for (const auto& t : outcome.trials) {
        meta["seeds"].push_back(t.seed);
        if (!t.ok)
            meta["failed_trials"].push_back({{"trial", t.trial}, {"error", t.error}});
    }
    std::ofstream(out / "metadata.json", std::ios::trunc) << meta.dump(2) << '\n';
    return outcome;
}

void write_learning_curve(const fs::path& path, const ExperimentOutcome& outcome, int steps)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw InputError("cannot write " + path.string());
    out << learning_curve_header << '\n';
    for (const auto& t : outcome.trials)
        for (const auto& ep : t.result.episodes)
            out << t.trial << ',' << ep.episode << ',' << ep.episode * steps << ',' << number(ep.total_return) << '\n';
}

RegressionData make_regression_data(const RegressionConfig& cfg)
{
    cfg.validate();
    auto rng = make_rng(cfg.seed, 0, Stream::data);
    const double left = cfg.gap_low - cfg.support_low;
    const double right = cfg.support_high - cfg.gap_high;
    std::uniform_real_distribution<double> u(0.0, left + right);
    std::normal_distribution<double> noise(0.0, 1.0);
    RegressionData d;
    d.x.resize(cfg.samples, 1);
    d.y.resize(cfg.samples, 1);
    for (int i = 0; i < cfg.samples; ++i) {
        const double r = u(rng);
        const double x = r < left ? cfg.support_low + r : cfg.gap_high + (r - left);
        d.x(i, 0) = x;
        d.y(i, 0) = std::sin(x) + cfg.noise_std * noise(rng);
    }
    return d;
}

Ensemble train_regression_model(const RegressionConfig& cfg, PathProbe* probe)
{
    const auto data = make_regression_data(cfg);
    auto init_rng = make_rng(cfg.seed, 0, Stream::init);
    Ensemble model(cfg.model, 1, 0, StateCodec(1, {}), init_rng);
    model.set_probe(probe);
    auto family_rng = make_rng(cfg.seed, 0, Stream::family);
    model.resample_family(family_rng, 0);
    auto train_rng = make_rng(cfg.seed, 0, Stream::train);
    model.train_regression(data.x, data.y, train_rng, cfg.model.epochs);
    return model;
}

double RegressionPrediction::mean_std(bool support) const
{
    double sum = 0.0;
    long n = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (in_support[static_cast<std::size_t>(i)] == support) {
            sum += std[i];
            ++n;
        }
    return n ? sum / static_cast<double>(n) : 0.0;
}

RegressionPrediction predict_regression(const Ensemble& model, const RegressionConfig& cfg)
{
    RegressionPrediction p;
    p.x = Eigen::VectorXd::LinSpaced(cfg.grid, cfg.support_low, cfg.support_high);
    const Eigen::MatrixXd none(cfg.grid, 0);
    const auto moments = model.predictive_moments(p.x, none);
    p.mean = moments.mean.col(0);
    p.std = (moments.epistemic + moments.aleatoric).col(0).cwiseSqrt();
    for (Eigen::Index i = 0; i < p.x.size(); ++i)
        p.in_support.push_back(!cfg.in_gap(p.x[i]));
    return p;
}

void write_predictions(const fs::path& path, const RegressionPrediction& pred)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw InputError("cannot write " + path.string());
    out << predictions_header << '\n';
    for (Eigen::Index i = 0; i < pred.x.size(); ++i)
        out << number(pred.x[i]) << ',' << number(pred.mean[i]) << ',' << number(pred.std[i]) << ','
            << (pred.in_support[static_cast<std::size_t>(i)] ? 1 : 0) << '\n';
}

} // namespace dpets
