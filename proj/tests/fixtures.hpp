#ifndef DPETS_TESTS_FIXTURES_HPP
#define DPETS_TESTS_FIXTURES_HPP

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "dpets/dataset.hpp"
#include "dpets/model.hpp"
#include "dpets/network.hpp"
#include "fd_oracle.hpp"

namespace dpets::testing {

// Random transitions in a box; the dynamics are irrelevant to gradient checks.
inline TransitionBatch random_batch(int n, int sd, int ad, Rng& rng)
{
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    auto fill = [&](Eigen::MatrixXd& m, int cols) {
        m.resize(n, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = u(rng);
    };
    TransitionBatch b;
    fill(b.s_prev, sd);
    fill(b.a_prev, ad);
    fill(b.s_mid, sd);
    fill(b.a_mid, ad);
    fill(b.s_next, sd);
    return b;
}

struct GradientCheck {
    double worst_ratio = 0.0;
    int parameters = 0;
};

// Analytic gradient of the full training objective (two-step loss plus
// regularizers) against central differences, with dropout masks that really
// drop units, non-trivial input normalization and, optionally, angle
// features. Bounds are nudged off their initial values so both bound
// gradients are exercised.
inline GradientCheck check_total_loss_gradient(std::vector<int> hidden, int sd, int ad, std::vector<int> angles,
                                               std::uint64_t seed)
{
    Rng rng(seed);
    InputPipeline pipe;
    pipe.codec = StateCodec(sd, angles);
    pipe.action_dim = ad;
    auto params = make_network({pipe.input_dim(), sd, hidden}, rng);
    // Larger weights than the initializer so that tanh curvature matters.
    for (auto& l : params.layers) {
        l.weight *= 3.0;
        for (Eigen::Index i = 0; i < l.bias.size(); ++i)
            l.bias[i] = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    }
    params.max_logvar.setConstant(0.2);
    params.min_logvar.setConstant(-3.0);

    const auto batch = random_batch(6, sd, ad, rng);
    Eigen::MatrixXd raw(12, pipe.input_dim());
    raw.topRows(6) = pipe.raw_features(batch.s_prev, batch.a_prev);
    raw.bottomRows(6) = pipe.raw_features(batch.s_mid, batch.a_mid);
    pipe.normalizer = Normalizer::fit(raw);

    const auto widths = mask_widths(params);
    const auto family = sample_mask_family(5, widths, 0.8, rng);
    const std::vector<MaskPair> pairs{{&family.sets[0], &family.sets[3]}, {&family.sets[2], &family.sets[1]}};
    LossWeights weights;

    Gradients grads = Gradients::zeros_like(params);
    total_loss(params, pipe, pairs, batch, weights, &grads);
    const Eigen::VectorXd at = flatten(params);
    auto f = [&](const Eigen::VectorXd& flat) {
        NetworkParams p = params;
        unflatten(flat, p);
        return total_loss(p, pipe, pairs, batch, weights);
    };
    const auto numeric = central_differences(f, at, 1e-5);
    return {worst_gradient_ratio(flatten(grads), numeric, 1e-4, 1e-7), static_cast<int>(at.size())};
}

} // namespace dpets::testing

#endif
