#include "dpets/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpets/errors.hpp"

namespace dpets {

void CemConfig::validate() const
{
    if (population < 2)
        throw ConfigError("cem population must be >= 2");
    if (!(elites > 0 && elites < population))
        throw ConfigError("cem elites must satisfy 0 < elites < population");
    if (iterations < 1)
        throw ConfigError("cem iterations must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ConfigError("cem alpha must lie in [0, 1]");
    if (!(init_std_fraction > 0.0))
        throw ConfigError("cem init_std_fraction must be positive");
    if (action_low.size() == 0 || action_low.size() != action_high.size())
        throw ConfigError("cem action bounds are missing or mismatched");
    if (((action_high - action_low).array() <= 0.0).any())
        throw ConfigError("cem action_low must be below action_high");
}

PlanState initial_plan(int horizon, const CemConfig& cfg)
{
    const auto d = cfg.action_low.size();
    PlanState s;
    s.mean = Eigen::MatrixXd::Zero(horizon, d);
    for (Eigen::Index j = 0; j < d; ++j)
        s.mean.col(j) = s.mean.col(j).cwiseMax(cfg.action_low[j]).cwiseMin(cfg.action_high[j]);
    s.std = cfg.init_std().transpose().replicate(horizon, 1);
    return s;
}

namespace {

Eigen::MatrixXd clip(const Eigen::MatrixXd& seq, const CemConfig& cfg)
{
    Eigen::MatrixXd out = seq;
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        out.col(j) = out.col(j).cwiseMax(cfg.action_low[j]).cwiseMin(cfg.action_high[j]);
    return out;
}

} // namespace

CemResult cem_optimize(const SequenceObjective& objective, int horizon, const CemConfig& cfg,
                       const PlanState& warm_start, Rng& rng)
{
    cfg.validate();
    if (horizon < 1)
        throw ConfigError("planning horizon must be >= 1");
    const auto d = cfg.action_low.size();
    PlanState dist = warm_start.empty() ? initial_plan(horizon, cfg) : warm_start;
    if (dist.mean.rows() != horizon || dist.mean.cols() != d || dist.std.rows() != horizon || dist.std.cols() != d)
        throw ConfigError("warm start does not match the H x d_a plan shape");

    CemResult result;
    std::normal_distribution<double> normal(0.0, 1.0);
    // Raw Gaussian draws feed the refit; their clipped copies are what gets scored.
    std::vector<Eigen::MatrixXd> pop(static_cast<std::size_t>(cfg.population));
    std::vector<Eigen::MatrixXd> clipped(pop.size());
    std::vector<std::size_t> order(pop.size());

    for (int it = 0; it < cfg.iterations; ++it) {
        for (auto& cand : pop) {
            cand.resize(horizon, d);
            for (Eigen::Index j = 0; j < d; ++j)
                for (Eigen::Index h = 0; h < horizon; ++h)
                    cand(h, j) = dist.mean(h, j) + dist.std(h, j) * normal(rng);
        }
        for (std::size_t i = 0; i < pop.size(); ++i)
            clipped[i] = clip(pop[i], cfg);
        Eigen::VectorXd scores = objective(clipped);
        if (scores.size() != cfg.population)
            throw ConfigError("objective returned the wrong number of scores");
        bool any_finite = false;
        for (auto& s : scores) {
            if (!std::isfinite(s) || s <= worst_return)
                s = worst_return;
            else
                any_finite = true;
        }
        if (!any_finite)
            throw PlanningError("every candidate sequence diverged in CEM iteration " + std::to_string(it));

        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
        });
        const double top = scores[static_cast<Eigen::Index>(order.front())];
        if (top > result.best_score || result.best_sample.size() == 0) {
            result.best_score = top;
            result.best_sample = clipped[order.front()];
        }
        result.best_so_far.push_back(result.best_score);

        Eigen::MatrixXd elite_mean = Eigen::MatrixXd::Zero(horizon, d);
        for (int e = 0; e < cfg.elites; ++e)
            elite_mean += pop[order[static_cast<std::size_t>(e)]];
        elite_mean /= static_cast<double>(cfg.elites);
        Eigen::MatrixXd elite_var = Eigen::MatrixXd::Zero(horizon, d);
        for (int e = 0; e < cfg.elites; ++e)
            elite_var += (pop[order[static_cast<std::size_t>(e)]] - elite_mean).cwiseAbs2();
        elite_var /= static_cast<double>(cfg.elites);

        // The mean stays inside the box so weakly constrained steps cannot drift
        // into permanent saturation; a pinned optimum still lands on the bound.
        dist.mean = clip(cfg.alpha * dist.mean + (1.0 - cfg.alpha) * elite_mean, cfg);
        dist.std = cfg.alpha * dist.std + (1.0 - cfg.alpha) * elite_var.cwiseSqrt();
        // Keep the distribution non-degenerate.
        dist.std = dist.std.cwiseMax(1e-6);
    }
    result.sequence = dist.mean;
    result.state = std::move(dist);
    return result;
}

MpcDecision mpc_act(const DynamicsModel& model, const Eigen::VectorXd& state, const RewardFn& reward,
                    const MpcOptions& opts, const PlanState& warm_start, Rng& rng, PathProbe* probe)
{
    const auto bundle = init_bundle(model, state, opts.particles, rng);
    const SequenceObjective objective = [&](std::span<const Eigen::MatrixXd> seqs) {
        RolloutOptions ro{opts.mode, rng(), probe};
        return rollout_returns(model, bundle, seqs, reward, ro);
    };

    const auto init = initial_plan(opts.horizon, opts.cem);
    MpcDecision decision;
    try {
        auto result = cem_optimize(objective, opts.horizon, opts.cem, warm_start, rng);
        decision.plan = result.sequence;
        decision.action = result.sequence.row(0).transpose();
    } catch (const PlanningError& e) {
        decision.fallback = true;
        decision.warning = e.what();
        decision.plan = init.mean;
        decision.action = init.mean.row(0).transpose();
    }
    decision.next.mean = Eigen::MatrixXd::Zero(opts.horizon, init.mean.cols());
    decision.next.mean.topRows(opts.horizon - 1) = decision.plan.bottomRows(opts.horizon - 1);
    decision.next.std = init.std;
    return decision;
}

} // namespace dpets
