#ifndef DPETS_PLANNER_HPP
#define DPETS_PLANNER_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpets/dynamics.hpp"
#include "dpets/probe.hpp"
#include "dpets/propagation.hpp"
#include "dpets/rng.hpp"

namespace dpets {

struct CemConfig {
    int population = 400;
    int elites = 40;
    int iterations = 5;
    double init_std_fraction = 1.0;
    double alpha = 0.1; // weight of the previous distribution when refitting
    Eigen::VectorXd action_low;
    Eigen::VectorXd action_high;

    void validate() const;
    Eigen::VectorXd init_std() const { return 0.5 * (action_high - action_low) * init_std_fraction; }
};

// Sampling distribution over H x d_a action sequences.
struct PlanState {
    Eigen::MatrixXd mean;
    Eigen::MatrixXd std;

    bool empty() const { return mean.size() == 0; }
};

// Zero mean (clipped into the bounds), init_std everywhere.
PlanState initial_plan(int horizon, const CemConfig& cfg);

// Scores a population of sequences; higher is better.
using SequenceObjective = std::function<Eigen::VectorXd(std::span<const Eigen::MatrixXd>)>;

struct CemResult {
    Eigen::MatrixXd sequence;      // final distribution mean, clipped to bounds
    PlanState state;               // final distribution
    Eigen::MatrixXd best_sample;   // best candidate seen in any iteration
    double best_score = worst_return;
    std::vector<double> best_so_far; // running best after each iteration
};

// Throws PlanningError when no candidate of an iteration scores finite.
CemResult cem_optimize(const SequenceObjective& objective, int horizon, const CemConfig& cfg,
                       const PlanState& warm_start, Rng& rng);

struct MpcOptions {
    int horizon = 25;
    int particles = 4;
    PropagationMode mode = PropagationMode::mean_only;
    CemConfig cem;
};

struct MpcDecision {
    Eigen::VectorXd action;
    Eigen::MatrixXd plan; // optimized sequence this call
    PlanState next;       // warm start for the following call
    bool fallback = false;
    std::string warning;
};

// One receding-horizon step: draw the call's particle masks, optimize the
// sequence by CEM on rollout_returns, return its first action. On planning
// failure the action is zero (clipped) and the decision is flagged.
MpcDecision mpc_act(const DynamicsModel& model, const Eigen::VectorXd& state, const RewardFn& reward,
                    const MpcOptions& opts, const PlanState& warm_start, Rng& rng, PathProbe* probe = nullptr);

} // namespace dpets

#endif
