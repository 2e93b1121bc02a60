#ifndef DPETS_DYNAMICS_HPP
#define DPETS_DYNAMICS_HPP

#include <vector>

#include <Eigen/Dense>

#include "dpets/network.hpp"
#include "dpets/rng.hpp"

namespace dpets {

// Next-state Gaussians for a batch of rows, in environment units.
struct StepPrediction {
    Eigen::MatrixXd mean;
    Eigen::MatrixXd variance;
};

// Anything the planner can roll particles through: the learned ensemble or a
// known analytic model.
class DynamicsModel {
public:
    virtual ~DynamicsModel() = default;

    virtual int member_count() const = 0;
    virtual int state_dim() const = 0;
    virtual int action_dim() const = 0;

    // Masks for `count` particles of one planning call.
    virtual std::vector<MaskSet> particle_masks(int count, Rng& rng) const = 0;

    virtual StepPrediction predict(int member, const MaskSet& mask, const Eigen::MatrixXd& states,
                                   const Eigen::MatrixXd& actions) const = 0;
};

} // namespace dpets

#endif
