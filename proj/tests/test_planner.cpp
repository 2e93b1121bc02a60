#include <doctest.h>

#include "dpets/envs.hpp"
#include "dpets/errors.hpp"
#include "dpets/planner.hpp"
#include "fake_models.hpp"

using namespace dpets;

namespace {

CemConfig unit_bounds(int population = 400, int elites = 40, int iterations = 5)
{
    CemConfig c;
    c.population = population;
    c.elites = elites;
    c.iterations = iterations;
    c.action_low = Eigen::VectorXd::Constant(1, -1.0);
    c.action_high = Eigen::VectorXd::Constant(1, 1.0);
    return c;
}

SequenceObjective quadratic(double target, double offset = 0.0)
{
    return [=](std::span<const Eigen::MatrixXd> seqs) {
        Eigen::VectorXd r(static_cast<Eigen::Index>(seqs.size()));
        for (std::size_t i = 0; i < seqs.size(); ++i)
            r[static_cast<Eigen::Index>(i)] = -(seqs[i].array() - target).square().sum() + offset;
        return r;
    };
}

} // namespace

TEST_CASE("config validation")
{
    auto c = unit_bounds();
    CHECK_NOTHROW(c.validate());
    c.elites = 500;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = unit_bounds();
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = unit_bounds();
    c.action_low[0] = 2.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(unit_bounds().init_std()[0] == 1.0);
}

TEST_CASE("separable quadratic is recovered")
{
    // Five iterations leave a final std near 0.05, so the mean sits within a
    // few 1e-2 of the optimum; seven iterations are comfortably inside 1e-2.
    for (int iterations : {5, 7}) {
        const auto cfg = unit_bounds(400, 40, iterations);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(seed);
            const auto r = cem_optimize(quadratic(0.3), 5, cfg, initial_plan(5, cfg), rng);
            CHECK((r.sequence.array() - 0.3).abs().maxCoeff() < (iterations == 5 ? 3e-2 : 1e-2));
        }
    }
}

TEST_CASE("constant objective keeps the warm start under full smoothing")
{
    auto cfg = unit_bounds();
    cfg.alpha = 1.0;
    PlanState warm = initial_plan(4, cfg);
    warm.mean << 0.1, -0.2, 0.3, 0.0;
    Rng rng(1);
    const auto r = cem_optimize(quadratic(0.0, 0.0), 4, cfg, warm, rng);
    CHECK(r.sequence == warm.mean);
    CHECK(r.state.std == warm.std);
}

TEST_CASE("bounds saturate")
{
    const auto cfg = unit_bounds();
    Rng rng(2);
    const auto r = cem_optimize(quadratic(2.0), 5, cfg, initial_plan(5, cfg), rng);
    CHECK(r.sequence.isConstant(1.0));
    CHECK(r.sequence.maxCoeff() <= 1.0);
}

TEST_CASE("running best never decreases and returned actions stay in bounds")
{
    auto cfg = unit_bounds(50, 5, 8);
    Rng rng(3);
    const auto r = cem_optimize(quadratic(-0.7), 6, cfg, initial_plan(6, cfg), rng);
    REQUIRE(r.best_so_far.size() == 8);
    for (std::size_t i = 1; i < r.best_so_far.size(); ++i)
        CHECK(r.best_so_far[i] >= r.best_so_far[i - 1]);
    CHECK(r.best_score == r.best_so_far.back());
    CHECK(r.sequence.minCoeff() >= -1.0);
    CHECK(r.sequence.maxCoeff() <= 1.0);
    CHECK(r.best_sample.minCoeff() >= -1.0);
}

TEST_CASE("adding a constant to the objective changes nothing")
{
    const auto cfg = unit_bounds(60, 6, 4);
    Rng a(4), b(4);
    const auto x = cem_optimize(quadratic(0.2), 3, cfg, initial_plan(3, cfg), a);
    const auto y = cem_optimize(quadratic(0.2, 123.0), 3, cfg, initial_plan(3, cfg), b);
    CHECK(x.sequence == y.sequence);
    CHECK(x.state.std == y.state.std);
}

TEST_CASE("all-failed populations raise a planning error")
{
    const auto cfg = unit_bounds(20, 2, 2);
    const SequenceObjective bad = [](std::span<const Eigen::MatrixXd> s) {
        return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(s.size()), std::nan(""));
    };
    Rng rng(5);
    CHECK_THROWS_AS(cem_optimize(bad, 2, cfg, initial_plan(2, cfg), rng), PlanningError);
}

TEST_CASE("mpc with a one-step horizon picks the bang-bang action")
{
    testing::LinearModel m; // s' = s + a
    const RewardFn r = [](const Eigen::MatrixXd& mean, const Eigen::MatrixXd&, const Eigen::MatrixXd&) {
        return Eigen::VectorXd(mean.col(0));
    };
    MpcOptions opts;
    opts.horizon = 1;
    opts.particles = 1;
    opts.cem = unit_bounds();
    Rng rng(6);
    const auto d = mpc_act(m, Eigen::VectorXd::Zero(1), r, opts, initial_plan(1, opts.cem), rng);
    CHECK(d.action[0] > 0.99);
    CHECK(d.action[0] <= 1.0);
    CHECK_FALSE(d.fallback);
}

TEST_CASE("mpc warm start shifts the plan and is deterministic")
{
    testing::LinearModel m;
    m.a_scale = 0.8;
    const RewardFn r = [](const Eigen::MatrixXd& mean, const Eigen::MatrixXd&, const Eigen::MatrixXd& a) {
        return Eigen::VectorXd(-(mean.array() - 0.5).square().rowwise().sum() - 0.1 * a.array().square().rowwise().sum());
    };
    MpcOptions opts;
    opts.horizon = 6;
    opts.particles = 2;
    opts.cem = unit_bounds(80, 8, 3);
    opts.cem.alpha = 1.0;
    Rng a(7), b(7);
    const auto x = mpc_act(m, Eigen::VectorXd::Zero(1), r, opts, initial_plan(6, opts.cem), a);
    const auto y = mpc_act(m, Eigen::VectorXd::Zero(1), r, opts, initial_plan(6, opts.cem), b);
    CHECK(x.action == y.action);
    CHECK(x.next.mean.topRows(5) == x.plan.bottomRows(5));
    CHECK(x.next.mean.row(5).isZero());
    CHECK(x.next.std == initial_plan(6, opts.cem).std);

    opts.cem.alpha = 0.1;
    Rng c(8);
    const auto z = mpc_act(m, Eigen::VectorXd::Zero(1), r, opts, initial_plan(6, opts.cem), c);
    CHECK(z.next.mean.topRows(5) == z.plan.bottomRows(5));
    CHECK(z.action[0] == z.plan(0, 0));
}

TEST_CASE("mpc falls back to the zero action when planning fails")
{
    testing::LinearModel m;
    const RewardFn nan = [](const Eigen::MatrixXd& mean, const Eigen::MatrixXd&, const Eigen::MatrixXd&) {
        return Eigen::VectorXd::Constant(mean.rows(), std::nan(""));
    };
    MpcOptions opts;
    opts.horizon = 3;
    opts.particles = 1;
    opts.cem = unit_bounds(10, 2, 2);
    Rng rng(9);
    const auto d = mpc_act(m, Eigen::VectorXd::Zero(1), nan, opts, initial_plan(3, opts.cem), rng);
    CHECK(d.fallback);
    CHECK(d.action.isZero());
    CHECK_FALSE(d.warning.empty());
}

TEST_CASE("true-dynamics planner holds the pendulum upright")
{
    Pendulum env;
    TrueDynamicsModel model(env);
    MpcOptions opts;
    opts.horizon = 25;
    opts.particles = 1;
    opts.cem = unit_bounds(100, 10, 3);
    opts.cem.action_low = env.action_low();
    opts.cem.action_high = env.action_high();
    const RewardFn reward = [&](const Eigen::MatrixXd& m, const Eigen::MatrixXd& v, const Eigen::MatrixXd& a) {
        return env.reward(m, v, a);
    };
    env.set_state(Eigen::Vector2d::Zero());
    Rng rng(10);
    PlanState plan = initial_plan(opts.horizon, opts.cem);
    double total = 0.0, worst_angle = 0.0;
    for (int t = 0; t < 50; ++t) {
        const auto d = mpc_act(model, env.state(), reward, opts, plan, rng);
        plan = d.next;
        total += env.step(d.action).reward;
        worst_angle = std::max(worst_angle, std::abs(wrap_angle(env.state()[0])));
    }
    // Individual torques chatter (the first action of a 25-step plan is weakly
    // determined), but the pole stays up.
    CHECK(worst_angle < 0.15);
    CHECK(total > -2.0);
}
