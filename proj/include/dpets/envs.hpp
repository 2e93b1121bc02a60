#ifndef DPETS_ENVS_HPP
#define DPETS_ENVS_HPP

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpets/dynamics.hpp"
#include "dpets/rng.hpp"

namespace dpets {

struct NoiseConfig {
    double factor = 0.0; // std as a fraction of each dimension's nominal range
};

struct StepResult {
    Eigen::VectorXd next_state;
    double reward = 0.0;
};

// Single-owner simulated system with a known reward. Rewards are evaluated on
// the state reached by an action: r_t = R(s_{t+1}, a_t).
class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string name() const = 0;
    virtual int state_dim() const = 0;
    virtual int action_dim() const = 0;
    virtual Eigen::VectorXd action_low() const = 0;
    virtual Eigen::VectorXd action_high() const = 0;
    // Per-dimension nominal range used to scale observation noise.
    virtual Eigen::VectorXd observation_scale() const = 0;
    // State dimensions the model should see as (sin, cos) pairs.
    virtual std::vector<int> angle_dims() const { return {}; }

    virtual void reset(Rng& rng) = 0;
    const Eigen::VectorXd& state() const { return state_; }
    void set_state(const Eigen::VectorXd& s);

    // Clips the action to the bounds and advances the true state.
    StepResult step(const Eigen::VectorXd& action);

    // Batched true dynamics (rows are states/actions). Actions are clipped.
    virtual Eigen::MatrixXd dynamics(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const = 0;
    // Batched reward of reaching `next_mean` (variance available for
    // uncertainty-aware rewards; the built-in tasks ignore it).
    virtual Eigen::VectorXd reward(const Eigen::MatrixXd& next_mean, const Eigen::MatrixXd& next_var,
                                   const Eigen::MatrixXd& actions) const = 0;

    Eigen::MatrixXd clip_actions(const Eigen::MatrixXd& actions) const;

protected:
    Eigen::VectorXd state_;
};

double wrap_angle(double theta); // into (-pi, pi]

// Torque-driven pendulum, theta = 0 upright. Semi-implicit Euler, dt = 0.05.
class Pendulum : public Environment {
public:
    static constexpr double gravity = 9.81;
    static constexpr double mass = 1.0;
    static constexpr double length = 1.0;
    static constexpr double dt = 0.05;
    static constexpr double max_speed = 8.0;
    static constexpr double max_torque = 2.0;

    std::string name() const override { return "pendulum"; }
    int state_dim() const override { return 2; }
    int action_dim() const override { return 1; }
    Eigen::VectorXd action_low() const override { return Eigen::VectorXd::Constant(1, -max_torque); }
    Eigen::VectorXd action_high() const override { return Eigen::VectorXd::Constant(1, max_torque); }
    Eigen::VectorXd observation_scale() const override;
    std::vector<int> angle_dims() const override { return {0}; }

    // Hanging (theta near pi) with a small random offset.
    void reset(Rng& rng) override;
    Eigen::MatrixXd dynamics(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const override;
    Eigen::VectorXd reward(const Eigen::MatrixXd& next_mean, const Eigen::MatrixXd& next_var,
                           const Eigen::MatrixXd& actions) const override;

    // Kinetic plus potential energy of a uniform rod pivoting at one end.
    static double energy(const Eigen::VectorXd& state);
};

// Point mass in the plane with damped velocity, chasing a target.
// State: [x, y, vx, vy, target_x, target_y].
class Reacher : public Environment {
public:
    static constexpr double dt = 0.05;
    static constexpr double damping = 0.95;

    std::string name() const override { return "reacher"; }
    int state_dim() const override { return 6; }
    int action_dim() const override { return 2; }
    Eigen::VectorXd action_low() const override { return Eigen::VectorXd::Constant(2, -1.0); }
    Eigen::VectorXd action_high() const override { return Eigen::VectorXd::Constant(2, 1.0); }
    Eigen::VectorXd observation_scale() const override;

    // Position uniform in [-1, 1]^2 at rest; target uniform in [-1, 1]^2.
    void reset(Rng& rng) override;
    Eigen::MatrixXd dynamics(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const override;
    Eigen::VectorXd reward(const Eigen::MatrixXd& next_mean, const Eigen::MatrixXd& next_var,
                           const Eigen::MatrixXd& actions) const override;
};

StepResult pendulum_step(const Eigen::VectorXd& state, const Eigen::VectorXd& action);
StepResult reacher_step(const Eigen::VectorXd& state, const Eigen::VectorXd& action);

// Throws ConfigError naming the valid choices for an unknown name.
std::unique_ptr<Environment> make_environment(const std::string& name);

// state + N(0, (factor * scale_i)^2) per dimension; factor 0 returns the state.
Eigen::VectorXd observe(const Eigen::VectorXd& state, const Eigen::VectorXd& scale, const NoiseConfig& noise,
                        Rng& rng);

// The environment's own dynamics as a planner model: one member, zero variance.
class TrueDynamicsModel : public DynamicsModel {
public:
    explicit TrueDynamicsModel(const Environment& env) : env_(env) {}

    int member_count() const override { return 1; }
    int state_dim() const override { return env_.state_dim(); }
    int action_dim() const override { return env_.action_dim(); }
    std::vector<MaskSet> particle_masks(int count, Rng&) const override;
    StepPrediction predict(int member, const MaskSet& mask, const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& actions) const override;

private:
    const Environment& env_;
};

} // namespace dpets

#endif
