#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "dpets/errors.hpp"
#include "dpets/model.hpp"
#include "fd_oracle.hpp"
#include "fixtures.hpp"

using namespace dpets;

namespace {

// d_s = 1, d_a = 1 single linear layer: delta = w_x x + w_a a + c, raw logvar
// constant. Masks are all-ones, normalization off.
NetworkParams linear_delta(double wx, double wa, double c, double raw_lv)
{
    NetworkParams p;
    Layer l;
    l.weight = Eigen::MatrixXd::Zero(2, 2);
    l.weight(0, 0) = wx;
    l.weight(1, 0) = wa;
    l.bias = Eigen::Vector2d(c, raw_lv);
    l.activation = Activation::identity;
    p.layers.push_back(l);
    p.max_logvar = Eigen::VectorXd::Constant(1, 0.5);
    p.min_logvar = Eigen::VectorXd::Constant(1, -10.0);
    return p;
}

InputPipeline plain_pipeline(int sd, int ad)
{
    InputPipeline pipe;
    pipe.codec = StateCodec(sd, {});
    pipe.action_dim = ad;
    pipe.normalizer = Normalizer::identity(sd + ad);
    return pipe;
}

TransitionBatch linear_batch(const std::vector<double>& x0, const std::vector<double>& a0, const std::vector<double>& a1)
{
    const auto n = static_cast<Eigen::Index>(x0.size());
    TransitionBatch b;
    b.s_prev.resize(n, 1);
    b.a_prev.resize(n, 1);
    b.s_mid.resize(n, 1);
    b.a_mid.resize(n, 1);
    b.s_next.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        b.s_prev(i, 0) = x0[k];
        b.a_prev(i, 0) = a0[k];
        b.s_mid(i, 0) = 0.9 * x0[k] + 0.1 * a0[k];
        b.a_mid(i, 0) = a1[k];
        b.s_next(i, 0) = 0.9 * b.s_mid(i, 0) + 0.1 * a1[k];
    }
    return b;
}

EnsembleConfig small_config()
{
    EnsembleConfig c;
    c.hidden = {8, 8};
    c.ensemble_size = 2;
    return c;
}

} // namespace

TEST_CASE("subset size must satisfy 0.5M < Q < M")
{
    CHECK_NOTHROW(validate_subset_size(5, 3));
    CHECK_NOTHROW(validate_subset_size(5, 4));
    CHECK_THROWS_AS(validate_subset_size(5, 5), ConfigError);
    CHECK_THROWS_AS(validate_subset_size(5, 2), ConfigError);
    CHECK_THROWS_AS(validate_subset_size(1, 1), ConfigError);
    try {
        validate_subset_size(5, 5);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("0.5M < Q < M") != std::string::npos);
    }
}

TEST_CASE("mask family sampling")
{
    const std::vector<int> widths{200, 200, 200};
    SUBCASE("keep rate one keeps everything")
    {
        Rng rng(1);
        const auto f = sample_mask_family(5, widths, 1.0, rng);
        for (const auto& s : f.sets)
            for (const auto& k : s.keep)
                CHECK(k.minCoeff() == 1.0);
    }
    SUBCASE("M below two is rejected")
    {
        Rng rng(1);
        CHECK_THROWS_AS(sample_mask_family(1, widths, 0.9, rng), ConfigError);
    }
    SUBCASE("same seed, same family")
    {
        Rng a(42), b(42);
        const auto fa = sample_mask_family(5, widths, 0.9, a, 3);
        const auto fb = sample_mask_family(5, widths, 0.9, b, 3);
        REQUIRE(fa.sets.size() == 5);
        for (std::size_t m = 0; m < 5; ++m)
            CHECK(fa.sets[m] == fb.sets[m]);
    }
    SUBCASE("keep fraction within three binomial standard deviations")
    {
        Rng rng(7);
        const auto f = sample_mask_family(5, widths, 0.9, rng);
        double kept = 0.0, total = 0.0;
        for (const auto& s : f.sets)
            for (const auto& k : s.keep) {
                for (Eigen::Index i = 0; i < k.size(); ++i)
                    CHECK((k[i] == 0.0 || k[i] == 1.0));
                kept += k.sum();
                total += static_cast<double>(k.size());
            }
        const double sigma = std::sqrt(0.9 * 0.1 / total);
        CHECK(std::abs(kept / total - 0.9) <= 3.0 * sigma);
    }
}

TEST_CASE("Q subsets are distinct and uniform")
{
    Rng rng(3);
    const std::vector<int> widths{4};
    const auto f = sample_mask_family(5, widths, 0.9, rng);
    std::map<std::size_t, int> counts;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const auto q = draw_q_subset(f, 3, rng);
        REQUIRE(q.size() == 3);
        CHECK(std::set<std::size_t>(q.begin(), q.end()).size() == 3);
        for (auto k : q)
            ++counts[k];
    }
    // Each set appears with probability Q/M = 0.6 per draw.
    for (const auto& [k, c] : counts) {
        const double p = static_cast<double>(c) / draws;
        CHECK(std::abs(p - 0.6) < 4.0 * std::sqrt(0.6 * 0.4 / draws));
    }
    CHECK_THROWS_AS(draw_q_subset(f, 5, rng), ConfigError);
    for (int i = 0; i < 200; ++i)
        CHECK(draw_partner(f, 2, rng) != 2);
}

TEST_CASE("state codec chain rule")
{
    const StateCodec codec(3, {1});
    Eigen::MatrixXd s(2, 3);
    s << 0.3, -2.0, 1.5, -0.7, 2.9, 0.1;
    const auto enc = codec.encode(s);
    REQUIRE(enc.cols() == 4);
    CHECK(enc(0, 1) == doctest::Approx(std::sin(-2.0)));
    CHECK(enc(0, 2) == doctest::Approx(std::cos(-2.0)));
    Eigen::MatrixXd w(2, 4);
    w << 0.5, -1.0, 2.0, 0.25, 1.0, 0.3, -0.4, 2.0;
    const auto analytic = codec.backprop(s, w);
    for (Eigen::Index r = 0; r < 2; ++r)
        for (Eigen::Index c = 0; c < 3; ++c) {
            auto f = [&](double v) {
                Eigen::MatrixXd t = s;
                t(r, c) = v;
                return codec.encode(t).cwiseProduct(w).sum();
            };
            const double num = (f(s(r, c) + 1e-6) - f(s(r, c) - 1e-6)) / 2e-6;
            CHECK(analytic(r, c) == doctest::Approx(num).epsilon(1e-7));
        }
}

TEST_CASE("normalizer floors tiny deviations")
{
    Eigen::MatrixXd rows(3, 2);
    rows << 1.0, 5.0, 2.0, 5.0, 3.0, 5.0;
    const auto n = Normalizer::fit(rows);
    CHECK(n.std[1] == 1.0);
    CHECK(n.std[0] == doctest::Approx(std::sqrt(2.0 / 3.0)));
    CHECK((n.std.array() >= 1e-8).all());
}

TEST_CASE("scalar Gaussian NLL values")
{
    auto nll = [](double mu, double y, double lv) {
        BatchPrediction p{Eigen::MatrixXd::Constant(1, 1, mu), Eigen::MatrixXd::Constant(1, 1, lv)};
        return gaussian_nll(p, Eigen::MatrixXd::Constant(1, 1, y));
    };
    CHECK(nll(0.4, 0.4, 0.0) == 0.0);
    CHECK(nll(1.4, 0.4, 0.0) == doctest::Approx(1.0));
    // Sigma = e: log det contributes exactly 1.
    CHECK(nll(0.4, 0.4, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("two-step loss on exact models")
{
    // Zero dynamics network: delta 0 everywhere, constant log-variance.
    const auto p = linear_delta(0.0, 0.0, 0.0, -1.0);
    const double lv = bound_logvar(-1.0, 0.5, -10.0);
    const auto pipe = plain_pipeline(1, 1);
    const auto w = mask_widths(p);
    const auto ones = full_mask(w);
    const std::vector<MaskPair> one{{&ones, &ones}};

    TransitionBatch b;
    b.s_prev = Eigen::MatrixXd::Constant(4, 1, 0.7);
    b.s_mid = b.s_prev;
    b.s_next = b.s_prev;
    b.a_prev = Eigen::MatrixXd::Random(4, 1);
    b.a_mid = Eigen::MatrixXd::Random(4, 1);

    const double one_step = fec_loss(p, pipe, one, b, false);
    const double two_step = fec_loss(p, pipe, one, b, true);
    CHECK(one_step == doctest::Approx(lv));
    CHECK(two_step == doctest::Approx(2.0 * lv));
}

TEST_CASE("two-step error of a biased linear model is 1.9 times the one-step error")
{
    const double eps = 1e-3;
    // True map x' = 0.9 x + 0.1 a; the model's delta is off by eps.
    const auto p = linear_delta(-0.1, 0.1, eps, -2.0);
    const double lv = bound_logvar(-2.0, 0.5, -10.0);
    const auto pipe = plain_pipeline(1, 1);
    const auto ones = full_mask(mask_widths(p));
    const std::vector<MaskPair> one{{&ones, &ones}};
    const auto b = linear_batch({0.5, -1.0, 2.0}, {0.3, -0.2, 1.0}, {-1.0, 0.4, 0.0});

    const double l1 = fec_loss(p, pipe, one, b, false) - lv;
    const double l2 = fec_loss(p, pipe, one, b, true) - fec_loss(p, pipe, one, b, false) - lv;
    const double inv_var = std::exp(-lv);
    CHECK(l1 == doctest::Approx(eps * eps * inv_var).epsilon(1e-9));
    CHECK(l2 == doctest::Approx(1.9 * 1.9 * eps * eps * inv_var).epsilon(1e-6));
    CHECK(l2 > l1);
}

TEST_CASE("two-step loss is the sum of its parts")
{
    Rng rng(5);
    InputPipeline pipe;
    pipe.codec = StateCodec(2, {0});
    pipe.action_dim = 1;
    pipe.normalizer = Normalizer::identity(pipe.input_dim());
    const auto p = make_network({pipe.input_dim(), 2, {6, 6}}, rng);
    const auto fam = sample_mask_family(5, mask_widths(p), 0.8, rng);
    const std::vector<MaskPair> pairs{{&fam.sets[0], &fam.sets[4]}};
    const auto b = testing::random_batch(5, 2, 1, rng);

    const double first = fec_loss(p, pipe, pairs, b, false);
    // Second step evaluated by hand.
    const auto pred1 = forward_batch(p, pipe.inputs(b.s_prev, b.a_prev), fam.sets[0]);
    const Eigen::MatrixXd s_hat = b.s_prev + pred1.mean;
    const auto pred2 = forward_batch(p, pipe.inputs(s_hat, b.a_mid), fam.sets[4]);
    const double second = gaussian_nll(pred2, b.s_next - s_hat, 1.0 / 5.0);
    CHECK(fec_loss(p, pipe, pairs, b, true) == doctest::Approx(first + second).epsilon(1e-12));

    std::vector<TwoStepTransition> crossing(1);
    crossing[0] = {Eigen::Vector2d(0, 0), Eigen::VectorXd::Zero(1), Eigen::Vector2d(0, 0), Eigen::VectorXd::Zero(1),
                   Eigen::Vector2d(0, 0), 1, 2};
    CHECK_THROWS_AS(fec_loss(p, pipe, pairs, std::span<const TwoStepTransition>(crossing)), InputError);
}

TEST_CASE("regularizer values")
{
    auto p = linear_delta(2.0, 0.0, 0.0, 0.0);
    LossWeights w;
    w.weight_decay = 0.1;
    w.logvar_bound = 0.0;
    CHECK(regularizer(p, w) == doctest::Approx(0.4));
    w.weight_decay = 0.0;
    CHECK(regularizer(p, w) == 0.0);
    w.logvar_bound = 0.01;
    CHECK(regularizer(p, w) == doctest::Approx(0.01 * 10.5));
}

TEST_CASE("total loss gradient matches finite differences with angle features")
{
    const auto check = testing::check_total_loss_gradient({7, 5}, 2, 1, {0}, 11);
    CHECK(check.worst_ratio <= 1.0);
    const auto plain = testing::check_total_loss_gradient({6}, 3, 2, {}, 12);
    CHECK(plain.worst_ratio <= 1.0);
}

TEST_CASE("mean-head gradient vanishes for the data-generating model")
{
    // Noise-free linear data, exact linear model: only variance terms remain.
    const auto p = linear_delta(-0.1, 0.1, 0.0, -3.0);
    const auto pipe = plain_pipeline(1, 1);
    const auto ones = full_mask(mask_widths(p));
    const std::vector<MaskPair> one{{&ones, &ones}};
    const auto b = linear_batch({0.5, -1.0, 2.0, 0.1}, {0.3, -0.2, 1.0, 2.0}, {-1.0, 0.4, 0.0, 0.2});
    Gradients g = Gradients::zeros_like(p);
    fec_loss(p, pipe, one, b, true, &g);
    CHECK(std::abs(g.weight[0](0, 0)) < 1e-12);
    CHECK(std::abs(g.weight[0](1, 0)) < 1e-12);
    CHECK(std::abs(g.bias[0][0]) < 1e-12);
}

TEST_CASE("ensemble prediction invariances")
{
    auto cfg = small_config();
    cfg.ensemble_size = 1;
    Rng init(9);
    Ensemble one(cfg, 2, 1, StateCodec(2, {}), init);
    // Degenerate family: five copies of one dropout mask.
    Rng mrng(4);
    const auto mask = sample_mask(one.widths(), 0.8, mrng);
    MaskFamily fam;
    fam.sets.assign(5, mask);
    one.set_family(fam);

    Eigen::MatrixXd s(3, 2), a(3, 1);
    s << 0.1, 0.2, -0.5, 1.0, 2.0, -1.0;
    a << 0.5, -0.5, 1.0;
    Rng r1(1);
    const auto single = one.predict_output(s, a, r1);
    CHECK((single - one.head(0, mask, s, a).mean).cwiseAbs().maxCoeff() < 1e-15);

    cfg.ensemble_size = 2;
    Rng init2(10);
    Ensemble two(cfg, 2, 1, StateCodec(2, {}), init2);
    two.members() = {one.members()[0], one.members()[0]};
    two.set_family(fam);
    Rng r2(1);
    CHECK((two.predict_output(s, a, r2) - single).cwiseAbs().maxCoeff() < 1e-15);

    // The same Q subset gives bit-identical outputs.
    Rng r3(77), r4(77);
    Rng init3(11);
    Ensemble fresh(small_config(), 2, 1, StateCodec(2, {}), init3);
    CHECK(fresh.predict_output(s, a, r3) == fresh.predict_output(s, a, r4));
}

TEST_CASE("zero epochs leave the parameters unchanged")
{
    Rng init(2);
    Ensemble m(small_config(), 1, 1, StateCodec(1, {}), init);
    Dataset d(1, 1);
    d.append({Eigen::VectorXd::Constant(1, 0.1), Eigen::VectorXd::Constant(1, 0.2), Eigen::VectorXd::Constant(1, 0.3),
              Eigen::VectorXd::Constant(1, 0.4), Eigen::VectorXd::Constant(1, 0.5), 0, 0});
    const auto before = flatten(m.members()[0].params);
    Rng r(3);
    m.train(d, r, 0);
    CHECK(flatten(m.members()[0].params) == before);
    Dataset empty(1, 1);
    CHECK_THROWS_AS(m.train(empty, r), InputError);
}

TEST_CASE("linear teacher is learned to within 0.05 RMSE")
{
    // x' = 0.9 x + 0.1 a, noiseless, 500 random transitions.
    Rng data_rng(21);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Dataset train(1, 1);
    auto make = [&](Dataset& d, int n, long ep) {
        for (int i = 0; i < n; ++i) {
            const double x0 = u(data_rng), a0 = u(data_rng), a1 = u(data_rng);
            const double x1 = 0.9 * x0 + 0.1 * a0;
            d.append({Eigen::VectorXd::Constant(1, x0), Eigen::VectorXd::Constant(1, a0),
                      Eigen::VectorXd::Constant(1, x1), Eigen::VectorXd::Constant(1, a1),
                      Eigen::VectorXd::Constant(1, 0.9 * x1 + 0.1 * a1), ep, ep});
        }
    };
    make(train, 500, 0);
    Dataset held(1, 1);
    make(held, 200, 1);

    EnsembleConfig cfg;
    cfg.hidden = {32, 32};
    cfg.epochs = 50;
    Rng init(22);
    Ensemble m(cfg, 1, 1, StateCodec(1, {}), init);
    Rng fam(23);
    m.resample_family(fam, 0);
    Rng tr(24);
    m.train(train, tr);

    const auto b = held.all();
    Rng pr(25);
    const Eigen::MatrixXd pred = b.s_prev + m.predict_output(b.s_prev, b.a_prev, pr);
    const double rmse = std::sqrt((pred - b.s_mid).squaredNorm() / static_cast<double>(b.size()));
    MESSAGE("held-out one-step RMSE " << rmse);
    CHECK(rmse < 0.05);
}
