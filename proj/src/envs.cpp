#include "dpets/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dpets/errors.hpp"

namespace dpets {

void Environment::set_state(const Eigen::VectorXd& s)
{
    if (s.size() != state_dim())
        throw InputError("state has dimension " + std::to_string(s.size()) + ", expected "
                         + std::to_string(state_dim()));
    if (!s.allFinite())
        throw InputError("state is not finite");
    state_ = s;
}

Eigen::MatrixXd Environment::clip_actions(const Eigen::MatrixXd& actions) const
{
    const Eigen::RowVectorXd lo = action_low().transpose();
    const Eigen::RowVectorXd hi = action_high().transpose();
    return actions.cwiseMax(lo.replicate(actions.rows(), 1)).cwiseMin(hi.replicate(actions.rows(), 1));
}

StepResult Environment::step(const Eigen::VectorXd& action)
{
    if (action.size() != action_dim())
        throw InputError("action has dimension " + std::to_string(action.size()) + ", expected "
                         + std::to_string(action_dim()));
    const Eigen::MatrixXd a = clip_actions(action.transpose());
    const Eigen::MatrixXd next = dynamics(state_.transpose(), a);
    const Eigen::MatrixXd zero_var = Eigen::MatrixXd::Zero(1, state_dim());
    StepResult r;
    r.reward = reward(next, zero_var, a)[0];
    r.next_state = next.row(0).transpose();
    state_ = r.next_state;
    return r;
}

double wrap_angle(double theta)
{
    constexpr double pi = std::numbers::pi;
    double w = std::fmod(theta + pi, 2.0 * pi);
    if (w < 0.0)
        w += 2.0 * pi;
    // fmod maps +pi to -pi; keep the interval half-open on the left.
    w -= pi;
    return w == -pi ? pi : w;
}

Eigen::VectorXd Pendulum::observation_scale() const
{
    return Eigen::Vector2d(std::numbers::pi, max_speed);
}

void Pendulum::reset(Rng& rng)
{
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    state_ = Eigen::Vector2d(std::numbers::pi + jitter(rng), jitter(rng));
}

Eigen::MatrixXd Pendulum::dynamics(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const
{
    const Eigen::MatrixXd u = clip_actions(actions);
    Eigen::MatrixXd next(states.rows(), 2);
    constexpr double accel_gain = 3.0 * gravity / (2.0 * length);
    constexpr double torque_gain = 3.0 / (mass * length * length);
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
        const double th = states(i, 0);
        double thdot = states(i, 1) + (accel_gain * std::sin(th) + torque_gain * u(i, 0)) * dt;
        thdot = std::clamp(thdot, -max_speed, max_speed);
        next(i, 0) = th + thdot * dt;
        next(i, 1) = thdot;
    }
    return next;
}

Eigen::VectorXd Pendulum::reward(const Eigen::MatrixXd& next_mean, const Eigen::MatrixXd&,
                                 const Eigen::MatrixXd& actions) const
{
    Eigen::VectorXd r(next_mean.rows());
    for (Eigen::Index i = 0; i < next_mean.rows(); ++i) {
        const double th = wrap_angle(next_mean(i, 0));
        const double thdot = next_mean(i, 1);
        const double u = std::clamp(actions(i, 0), -max_torque, max_torque);
        r[i] = -(th * th + 0.1 * thdot * thdot + 0.001 * u * u);
    }
    return r;
}

double Pendulum::energy(const Eigen::VectorXd& s)
{
    const double inertia = mass * length * length / 3.0;
    return 0.5 * inertia * s[1] * s[1] + mass * gravity * 0.5 * length * std::cos(s[0]);
}

Eigen::VectorXd Reacher::observation_scale() const
{
    Eigen::VectorXd s(6);
    s << 2.0, 2.0, 2.0, 2.0, 0.0, 0.0;
    return s;
}

void Reacher::reset(Rng& rng)
{
    std::uniform_real_distribution<double> box(-1.0, 1.0);
    state_.resize(6);
    state_[0] = box(rng);
    state_[1] = box(rng);
    state_[2] = 0.0;
    state_[3] = 0.0;
    state_[4] = box(rng);
    state_[5] = box(rng);
}

Eigen::MatrixXd Reacher::dynamics(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const
{
    const Eigen::MatrixXd a = clip_actions(actions);
    Eigen::MatrixXd next = states;
    next.leftCols(2) = states.leftCols(2) + dt * states.middleCols(2, 2);
    next.middleCols(2, 2) = damping * states.middleCols(2, 2) + dt * a;
    return next;
}

Eigen::VectorXd Reacher::reward(const Eigen::MatrixXd& next_mean, const Eigen::MatrixXd&,
                                const Eigen::MatrixXd& actions) const
{
    const Eigen::MatrixXd a = clip_actions(actions);
    const Eigen::VectorXd dist = (next_mean.leftCols(2) - next_mean.rightCols(2)).rowwise().norm();
    return -dist - 0.01 * a.rowwise().squaredNorm();
}

StepResult pendulum_step(const Eigen::VectorXd& state, const Eigen::VectorXd& action)
{
    Pendulum env;
    env.set_state(state);
    return env.step(action);
}

StepResult reacher_step(const Eigen::VectorXd& state, const Eigen::VectorXd& action)
{
    Reacher env;
    env.set_state(state);
    return env.step(action);
}

std::unique_ptr<Environment> make_environment(const std::string& name)
{
    if (name == "pendulum")
        return std::make_unique<Pendulum>();
    if (name == "reacher")
        return std::make_unique<Reacher>();
    throw ConfigError("unknown environment \"" + name + "\" (expected \"pendulum\" or \"reacher\")");
}

Eigen::VectorXd observe(const Eigen::VectorXd& state, const Eigen::VectorXd& scale, const NoiseConfig& noise,
                        Rng& rng)
{
    if (noise.factor == 0.0)
        return state;
    if (!std::isfinite(noise.factor) || noise.factor < 0.0)
        throw ConfigError("noise factor must be finite and non-negative");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd obs = state;
    for (Eigen::Index i = 0; i < obs.size(); ++i)
        obs[i] += noise.factor * scale[i] * normal(rng);
    return obs;
}

std::vector<MaskSet> TrueDynamicsModel::particle_masks(int count, Rng&) const
{
    return std::vector<MaskSet>(static_cast<std::size_t>(count));
}

StepPrediction TrueDynamicsModel::predict(int, const MaskSet&, const Eigen::MatrixXd& states,
                                          const Eigen::MatrixXd& actions) const
{
    StepPrediction p;
    p.mean = env_.dynamics(states, actions);
    p.variance = Eigen::MatrixXd::Zero(states.rows(), states.cols());
    return p;
}

} // namespace dpets
