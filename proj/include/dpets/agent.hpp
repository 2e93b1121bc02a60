#ifndef DPETS_AGENT_HPP
#define DPETS_AGENT_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpets/dataset.hpp"
#include "dpets/envs.hpp"
#include "dpets/model.hpp"
#include "dpets/planner.hpp"
#include "dpets/probe.hpp"

namespace dpets {

// full: restrictive dropout, two-step loss, mean-only propagation.
// mc: fresh dropout masks everywhere. be: dropout off, bootstrapped members.
// no_fec: one-step loss. no_du: particles sampled from the predicted Gaussian.
enum class Ablation { full, mc, be, no_fec, no_du };

std::string to_string(Ablation a);
// Throws ConfigError listing the valid names.
Ablation parse_ablation(const std::string& name);

struct RunConfig {
    std::string env = "pendulum";
    int episodes = 60;        // K
    int steps = 200;          // T
    int warmup_episodes = 1;
    int horizon = 25;         // H
    int particles = 4;        // P
    double noise_factor = 0.0;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::full;
    EnsembleConfig model;     // hidden, B, M, Q, keep_rate, epochs, batch, lr, lambda
    CemConfig cem;            // action bounds are filled from the environment

    // Throws ConfigError naming the offending field.
    void validate() const;
};

// The ensemble settings with the ablation applied.
EnsembleConfig ensemble_config(const RunConfig& cfg);
MpcOptions mpc_options(const RunConfig& cfg, const Environment& env);
RewardFn reward_function(const Environment& env);

struct StepRecord {
    Eigen::VectorXd state;       // true state
    Eigen::VectorXd observation; // what the planner and the dataset saw
    Eigen::VectorXd action;
    double reward = 0.0;
    Eigen::VectorXd next_state;
};

struct EpisodeLog {
    long episode = 0;
    double total_return = 0.0;
    std::vector<StepRecord> steps;
    LossTrace loss;              // training run that followed the episode
    long planner_fallbacks = 0;
    bool valid = true;
    std::string error;
    double seconds = 0.0;        // wall clock; excluded from equality
};

// Appends T-1 two-step transitions per episode from uniform random actions.
void warmup(Environment& env, Dataset& data, int episodes, int steps, double noise_factor, std::uint64_t seed);

// T closed-loop MPC steps. Observations (possibly noisy) feed the planner and
// the dataset; rewards come from the true state. The plan is reset at the
// start of the episode. A failure ends the episode early with valid = false.
EpisodeLog run_episode(Environment& env, const DynamicsModel& model, const MpcOptions& opts, int steps,
                       double noise_factor, std::uint64_t seed, long episode, Dataset* data = nullptr,
                       PathProbe* probe = nullptr);

struct LearnHooks {
    // Called after each finished episode; returning true ends learning early.
    std::function<bool(const std::vector<EpisodeLog>&)> stop;
    PathProbe* probe = nullptr;
};

struct LearnResult {
    std::vector<EpisodeLog> episodes;
    std::size_t dataset_size = 0;
    bool stopped_early = false;
};

// Warmup, then K episodes of {fresh mask family, run_episode, train}. With a
// directory the run persists config.json, dataset.csv, model_ep{k}.json and
// logs/episode_{k}.json after every episode, and continues from the last
// complete episode found there. A stored config with a different hash is an
// error.
LearnResult learn(const RunConfig& cfg, const std::filesystem::path& dir = {}, const LearnHooks& hooks = {});

// Mean return of the planner driving the environment with its true dynamics,
// one member and one particle, over `episodes` resets drawn like learn's.
double oracle_return(const RunConfig& cfg, int episodes);

} // namespace dpets

#endif
