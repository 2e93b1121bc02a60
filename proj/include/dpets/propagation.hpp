#ifndef DPETS_PROPAGATION_HPP
#define DPETS_PROPAGATION_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dpets/dynamics.hpp"
#include "dpets/probe.hpp"
#include "dpets/rng.hpp"

namespace dpets {

// mean_only passes mu forward and drops the predicted variance; sampled draws
// the next state from N(mu, Sigma) per particle.
enum class PropagationMode { mean_only, sampled };

// B x P particles. Particle i belongs to member member_of[i] and keeps
// masks[i] for the whole planning call.
struct ParticleBundle {
    Eigen::MatrixXd states; // one particle per row
    std::vector<int> member_of;
    std::vector<MaskSet> masks;
    int particles_per_member = 0;
    int step = 0;

    int size() const { return static_cast<int>(states.rows()); }
};

// Batched reward R(mean, variance, action) over rows.
using RewardFn =
    std::function<Eigen::VectorXd(const Eigen::MatrixXd& mean, const Eigen::MatrixXd& var, const Eigen::MatrixXd& a)>;

// Stand-in for minus infinity that keeps candidate sorting total.
inline constexpr double worst_return = -1e18;

ParticleBundle init_bundle(const DynamicsModel& model, const Eigen::VectorXd& state, int particles, Rng& rng);

struct BundleStep {
    ParticleBundle next;
    StepPrediction gaussians; // per particle, for reward evaluation
};

// Advances every particle one step under its own member and mask. `rng` is
// only used in sampled mode. Throws PlanningError on non-finite output.
BundleStep step_bundle(const DynamicsModel& model, const ParticleBundle& bundle, const Eigen::VectorXd& action,
                       PropagationMode mode = PropagationMode::mean_only, Rng* rng = nullptr,
                       PathProbe* probe = nullptr);

// (1/BP) sum over particles of R(mu, Sigma, a).
double expected_reward(const StepPrediction& gaussians, const Eigen::VectorXd& action, const RewardFn& reward);

struct RolloutOptions {
    PropagationMode mode = PropagationMode::mean_only;
    std::uint64_t seed = 0; // per-candidate sampling streams derive from this
    PathProbe* probe = nullptr;
};

// Undiscounted sum over the horizon of expected_reward, for every candidate
// sequence (H x d_a) started from the same bundle. Candidates whose
// propagation turns non-finite score worst_return.
Eigen::VectorXd rollout_returns(const DynamicsModel& model, const ParticleBundle& bundle,
                                std::span<const Eigen::MatrixXd> sequences, const RewardFn& reward,
                                const RolloutOptions& opts = {});

double rollout_return(const DynamicsModel& model, const ParticleBundle& bundle, const Eigen::MatrixXd& sequence,
                      const RewardFn& reward, const RolloutOptions& opts = {});

// Mean pairwise Euclidean distance between particle states.
double particle_spread(const Eigen::MatrixXd& states);

} // namespace dpets

#endif
