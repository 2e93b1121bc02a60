#ifndef DPETS_EXPERIMENT_HPP
#define DPETS_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpets/agent.hpp"
#include "dpets/config.hpp"
#include "dpets/model.hpp"

namespace dpets {

inline constexpr const char* learning_curve_header = "trial,episode,env_steps,return";
inline constexpr const char* predictions_header = "x,mean,std,in_support";

struct TrialOutcome {
    int trial = 0;
    std::uint64_t seed = 0;
    LearnResult result;
    bool ok = false;
    std::string error;
};

struct ExperimentOutcome {
    std::vector<TrialOutcome> trials;
    bool ok() const;
};

// Trial i runs with seed + i.
RunConfig trial_config(const RunConfig& base, int trial);

// Runs every trial into out/trial_{i}, `parallel` at a time, then writes
// learning_curve.csv and metadata.json. Output bytes do not depend on
// `parallel`. Trials pick up from checkpoints already present in their
// directories. `progress` receives one line per finished trial.
ExperimentOutcome run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out, int parallel = 1,
                                 std::ostream* progress = nullptr);

void write_learning_curve(const std::filesystem::path& path, const ExperimentOutcome& outcome, int steps);

struct RegressionData {
    Eigen::MatrixXd x; // n x 1
    Eigen::MatrixXd y; // n x 1
};

// Samples drawn uniformly from the support minus the gap.
RegressionData make_regression_data(const RegressionConfig& cfg);

// Action-free ensemble fitted to make_regression_data(cfg).
Ensemble train_regression_model(const RegressionConfig& cfg, PathProbe* probe = nullptr);

struct RegressionPrediction {
    Eigen::VectorXd x;
    Eigen::VectorXd mean;
    Eigen::VectorXd std; // sqrt(epistemic + aleatoric) over members x family sets
    std::vector<bool> in_support;

    double mean_std(bool support) const;
};

// Predictions on an evenly spaced grid over the support.
RegressionPrediction predict_regression(const Ensemble& model, const RegressionConfig& cfg);
void write_predictions(const std::filesystem::path& path, const RegressionPrediction& pred);

} // namespace dpets

#endif
