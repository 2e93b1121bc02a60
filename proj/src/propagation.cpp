#include "dpets/propagation.hpp"

#include <cmath>

#include "dpets/errors.hpp"

namespace dpets {

namespace {

void add_noise(Eigen::MatrixXd& mean, const Eigen::MatrixXd& var, std::span<Rng> rngs)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < mean.rows(); ++r) {
        auto& rng = rngs[static_cast<std::size_t>(r)];
        for (Eigen::Index j = 0; j < mean.cols(); ++j)
            mean(r, j) += std::sqrt(var(r, j)) * normal(rng);
    }
}

} // namespace

ParticleBundle init_bundle(const DynamicsModel& model, const Eigen::VectorXd& state, int particles, Rng& rng)
{
    if (!state.allFinite())
        throw InputError("initial particle state is not finite");
    if (particles < 1)
        throw ConfigError("particles per member must be >= 1");
    const int b = model.member_count();
    ParticleBundle bundle;
    bundle.particles_per_member = particles;
    bundle.states = state.transpose().replicate(b * particles, 1);
    bundle.masks = model.particle_masks(b * particles, rng);
    for (int m = 0; m < b; ++m)
        for (int p = 0; p < particles; ++p)
            bundle.member_of.push_back(m);
    return bundle;
}

BundleStep step_bundle(const DynamicsModel& model, const ParticleBundle& bundle, const Eigen::VectorXd& action,
                       PropagationMode mode, Rng* rng, PathProbe* probe)
{
    if (!action.allFinite())
        throw InputError("action is not finite");
    if (mode == PropagationMode::sampled && !rng)
        throw ConfigError("sampled propagation needs a random stream");
    probe_hit(probe, mode == PropagationMode::mean_only ? "propagation.mean_only" : "propagation.sampled");

    const auto n = bundle.size();
    BundleStep out;
    out.next = bundle;
    out.next.step = bundle.step + 1;
    out.gaussians.mean.resize(n, model.state_dim());
    out.gaussians.variance.resize(n, model.state_dim());
    const Eigen::MatrixXd a = action.transpose();
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto pred = model.predict(bundle.member_of[static_cast<std::size_t>(i)],
                                        bundle.masks[static_cast<std::size_t>(i)], bundle.states.row(i), a);
        if (!pred.mean.allFinite() || !pred.variance.allFinite())
            throw PlanningError("particle " + std::to_string(i) + " diverged at step " + std::to_string(bundle.step));
        out.gaussians.mean.row(i) = pred.mean.row(0);
        out.gaussians.variance.row(i) = pred.variance.row(0);
        out.next.states.row(i) = pred.mean.row(0);
        if (mode == PropagationMode::sampled)
            for (Eigen::Index j = 0; j < pred.mean.cols(); ++j)
                out.next.states(i, j) += std::sqrt(pred.variance(0, j)) * normal(*rng);
    }
    return out;
}

double expected_reward(const StepPrediction& gaussians, const Eigen::VectorXd& action, const RewardFn& reward)
{
    const Eigen::MatrixXd a = action.transpose().replicate(gaussians.mean.rows(), 1);
    return reward(gaussians.mean, gaussians.variance, a).mean();
}

Eigen::VectorXd rollout_returns(const DynamicsModel& model, const ParticleBundle& bundle,
                                std::span<const Eigen::MatrixXd> sequences, const RewardFn& reward,
                                const RolloutOptions& opts)
{
    const auto pop = static_cast<Eigen::Index>(sequences.size());
    if (pop == 0)
        return {};
    const auto horizon = sequences.front().rows();
    const auto action_dim = sequences.front().cols();
    for (const auto& seq : sequences)
        if (seq.rows() != horizon || seq.cols() != action_dim)
            throw ConfigError("candidate sequences must share one H x d_a shape");
    probe_hit(opts.probe, opts.mode == PropagationMode::mean_only ? "propagation.mean_only" : "propagation.sampled");

    std::vector<Rng> rngs;
    if (opts.mode == PropagationMode::sampled) {
        rngs.reserve(static_cast<std::size_t>(pop));
        for (Eigen::Index c = 0; c < pop; ++c)
            rngs.emplace_back(derive_seed(opts.seed, static_cast<std::uint64_t>(c), Stream::planner));
    }

    const int n_particles = bundle.size();
    std::vector<Eigen::MatrixXd> states(static_cast<std::size_t>(n_particles));
    for (int i = 0; i < n_particles; ++i)
        states[static_cast<std::size_t>(i)] = bundle.states.row(i).replicate(pop, 1);

    Eigen::VectorXd total = Eigen::VectorXd::Zero(pop);
    std::vector<char> failed(static_cast<std::size_t>(pop), 0);
    Eigen::MatrixXd actions(pop, action_dim);
    for (Eigen::Index h = 0; h < horizon; ++h) {
        for (Eigen::Index c = 0; c < pop; ++c)
            actions.row(c) = sequences[static_cast<std::size_t>(c)].row(h);
        for (int i = 0; i < n_particles; ++i) {
            auto& s = states[static_cast<std::size_t>(i)];
            auto pred = model.predict(bundle.member_of[static_cast<std::size_t>(i)],
                                      bundle.masks[static_cast<std::size_t>(i)], s, actions);
            const Eigen::VectorXd r = reward(pred.mean, pred.variance, actions);
            if (opts.mode == PropagationMode::sampled)
                add_noise(pred.mean, pred.variance, rngs);
            for (Eigen::Index c = 0; c < pop; ++c) {
                if (!std::isfinite(r[c]) || !pred.mean.row(c).allFinite()) {
                    failed[static_cast<std::size_t>(c)] = 1;
                    // Park the row on the start state so later batches stay finite.
                    pred.mean.row(c) = bundle.states.row(i);
                } else {
                    total[c] += r[c];
                }
            }
            s = std::move(pred.mean);
        }
    }
    total /= static_cast<double>(n_particles);
    for (Eigen::Index c = 0; c < pop; ++c)
        if (failed[static_cast<std::size_t>(c)])
            total[c] = worst_return;
    return total;
}

double rollout_return(const DynamicsModel& model, const ParticleBundle& bundle, const Eigen::MatrixXd& sequence,
                      const RewardFn& reward, const RolloutOptions& opts)
{
    return rollout_returns(model, bundle, std::span<const Eigen::MatrixXd>(&sequence, 1), reward, opts)[0];
}

double particle_spread(const Eigen::MatrixXd& states)
{
    const auto n = states.rows();
    if (n < 2)
        return 0.0;
    double sum = 0.0;
    long pairs = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j, ++pairs)
            sum += (states.row(i) - states.row(j)).norm();
    return sum / static_cast<double>(pairs);
}

} // namespace dpets
