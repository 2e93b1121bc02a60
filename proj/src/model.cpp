#include "dpets/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dpets/errors.hpp"

namespace dpets {

void validate_subset_size(int mask_sets, int q_subset)
{
    if (mask_sets < 2)
        throw ConfigError("mask_sets M = " + std::to_string(mask_sets)
                          + " leaves no valid subset size; need M >= 2 so that 0.5M < Q < M");
    if (!(2 * q_subset > mask_sets && q_subset < mask_sets))
        throw ConfigError("q_subset Q = " + std::to_string(q_subset) + " violates 0.5M < Q < M with M = "
                          + std::to_string(mask_sets));
}

MaskFamily sample_mask_family(int mask_sets, std::span<const int> widths, double keep_rate, Rng& rng,
                              long episode_id)
{
    if (mask_sets < 2)
        throw ConfigError("mask family needs M >= 2 (0.5M < Q < M is unsatisfiable otherwise), got M = "
                          + std::to_string(mask_sets));
    MaskFamily family;
    family.episode_id = episode_id;
    family.sets.reserve(static_cast<std::size_t>(mask_sets));
    for (int m = 0; m < mask_sets; ++m)
        family.sets.push_back(sample_mask(widths, keep_rate, rng));
    return family;
}

std::vector<std::size_t> draw_q_subset(const MaskFamily& family, int q_subset, Rng& rng)
{
    validate_subset_size(static_cast<int>(family.sets.size()), q_subset);
    std::vector<std::size_t> idx(family.sets.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first Q slots are a uniform draw without replacement.
    for (int i = 0; i < q_subset; ++i) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), idx.size() - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[pick(rng)]);
    }
    idx.resize(static_cast<std::size_t>(q_subset));
    return idx;
}

std::size_t draw_partner(const MaskFamily& family, std::size_t excluded, Rng& rng)
{
    const auto m = family.sets.size();
    if (m < 2)
        throw ConfigError("partner draw needs at least two mask sets");
    std::uniform_int_distribution<std::size_t> pick(0, m - 2);
    const auto k = pick(rng);
    return k >= excluded ? k + 1 : k;
}

StateCodec::StateCodec(int state_dim, std::vector<int> angle_dims)
    : state_dim_(state_dim), angle_dims_(std::move(angle_dims)), is_angle_(static_cast<std::size_t>(state_dim), 0)
{
    for (int d : angle_dims_) {
        if (d < 0 || d >= state_dim)
            throw ConfigError("angle dimension " + std::to_string(d) + " out of range");
        is_angle_[static_cast<std::size_t>(d)] = 1;
    }
}

Eigen::MatrixXd StateCodec::encode(const Eigen::MatrixXd& states) const
{
    if (states.cols() != state_dim_)
        throw ConfigError("state width " + std::to_string(states.cols()) + " does not match codec "
                          + std::to_string(state_dim_));
    if (angle_dims_.empty())
        return states;
    Eigen::MatrixXd out(states.rows(), feature_dim());
    Eigen::Index k = 0;
    for (int d = 0; d < state_dim_; ++d) {
        if (is_angle_[static_cast<std::size_t>(d)]) {
            out.col(k++) = states.col(d).array().sin().matrix();
            out.col(k++) = states.col(d).array().cos().matrix();
        } else {
            out.col(k++) = states.col(d);
        }
    }
    return out;
}

Eigen::MatrixXd StateCodec::backprop(const Eigen::MatrixXd& states, const Eigen::MatrixXd& d_features) const
{
    if (angle_dims_.empty())
        return d_features;
    Eigen::MatrixXd out(states.rows(), state_dim_);
    Eigen::Index k = 0;
    for (int d = 0; d < state_dim_; ++d) {
        if (is_angle_[static_cast<std::size_t>(d)]) {
            out.col(d) = (d_features.col(k).array() * states.col(d).array().cos()
                          - d_features.col(k + 1).array() * states.col(d).array().sin())
                             .matrix();
            k += 2;
        } else {
            out.col(d) = d_features.col(k++);
        }
    }
    return out;
}

Normalizer Normalizer::identity(int dim)
{
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Normalizer Normalizer::fit(const Eigen::MatrixXd& rows)
{
    if (rows.rows() == 0)
        throw InputError("cannot fit a normalizer on zero rows");
    Normalizer n;
    n.mean = rows.colwise().mean().transpose();
    const Eigen::MatrixXd centered = rows.rowwise() - n.mean.transpose();
    n.std = (centered.array().square().colwise().sum() / static_cast<double>(rows.rows())).sqrt().transpose();
    for (Eigen::Index i = 0; i < n.std.size(); ++i)
        if (!(n.std[i] >= 1e-8))
            n.std[i] = 1.0;
    return n;
}

Eigen::MatrixXd Normalizer::apply(const Eigen::MatrixXd& rows) const
{
    return ((rows.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array()).matrix();
}

Eigen::MatrixXd InputPipeline::raw_features(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const
{
    if (actions.cols() != action_dim)
        throw ConfigError("action width " + std::to_string(actions.cols()) + " does not match model "
                          + std::to_string(action_dim));
    if (actions.rows() != states.rows())
        throw ConfigError("state and action batches differ in length");
    Eigen::MatrixXd raw(states.rows(), input_dim());
    raw.leftCols(codec.feature_dim()) = codec.encode(states);
    raw.rightCols(action_dim) = actions;
    return raw;
}

Eigen::MatrixXd InputPipeline::inputs(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const
{
    return normalizer.apply(raw_features(states, actions));
}

Eigen::MatrixXd InputPipeline::state_gradient(const Eigen::MatrixXd& states, const Eigen::MatrixXd& d_inputs) const
{
    const auto f = codec.feature_dim();
    const Eigen::MatrixXd d_features =
        (d_inputs.leftCols(f).array().rowwise() / normalizer.std.head(f).transpose().array()).matrix();
    return codec.backprop(states, d_features);
}

double gaussian_nll(const BatchPrediction& pred, const Eigen::MatrixXd& target, double scale, Eigen::MatrixXd* d_mean,
                    Eigen::MatrixXd* d_logvar)
{
    const Eigen::ArrayXXd err = (pred.mean - target).array();
    const Eigen::ArrayXXd inv_var = (-pred.logvar.array()).exp();
    const Eigen::ArrayXXd weighted = err.square() * inv_var;
    if (d_mean)
        *d_mean = (2.0 * scale * err * inv_var).matrix();
    if (d_logvar)
        *d_logvar = (scale * (1.0 - weighted)).matrix();
    return scale * (weighted + pred.logvar.array()).sum();
}

double nll_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskSet* const> masks,
                const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, const Eigen::MatrixXd& targets,
                Gradients* grads)
{
    const auto n = states.rows();
    if (n == 0)
        throw InputError("nll_loss on an empty batch");
    const double scale = 1.0 / static_cast<double>(n);
    const Eigen::MatrixXd x = pipe.inputs(states, actions);
    double total = 0.0;
    for (const MaskSet* mask : masks) {
        if (!grads) {
            total += gaussian_nll(forward_batch(params, x, *mask), targets, scale);
            continue;
        }
        ForwardCache cache;
        const auto pred = forward_batch(params, x, *mask, &cache);
        Eigen::MatrixXd dm, dlv;
        total += gaussian_nll(pred, targets, scale, &dm, &dlv);
        backward(params, cache, dm, dlv, *grads);
    }
    return total;
}

double fec_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskPair> pairs,
                const TransitionBatch& batch, bool second_step, Gradients* grads)
{
    const auto n = batch.size();
    if (n == 0)
        throw InputError("fec_loss on an empty batch");
    const double scale = 1.0 / static_cast<double>(n);
    const Eigen::MatrixXd x1 = pipe.inputs(batch.s_prev, batch.a_prev);
    const Eigen::MatrixXd target1 = batch.s_mid - batch.s_prev;

    double total = 0.0;
    for (const auto& pair : pairs) {
        ForwardCache cache1;
        const auto pred1 = forward_batch(params, x1, *pair.first, grads ? &cache1 : nullptr);
        Eigen::MatrixXd dm1, dlv1;
        total += gaussian_nll(pred1, target1, scale, grads ? &dm1 : nullptr, grads ? &dlv1 : nullptr);
        if (second_step) {
            const Eigen::MatrixXd s_hat = batch.s_prev + pred1.mean;
            const Eigen::MatrixXd x2 = pipe.inputs(s_hat, batch.a_mid);
            ForwardCache cache2;
            const auto pred2 = forward_batch(params, x2, *pair.second, grads ? &cache2 : nullptr);
            // Error of s_hat + mu2 against s_next, expressed as a delta target.
            const Eigen::MatrixXd target2 = batch.s_next - s_hat;
            Eigen::MatrixXd dm2, dlv2;
            total += gaussian_nll(pred2, target2, scale, grads ? &dm2 : nullptr, grads ? &dlv2 : nullptr);
            if (grads) {
                const Eigen::MatrixXd dx2 = backward(params, cache2, dm2, dlv2, *grads);
                dm1 += pipe.state_gradient(s_hat, dx2) + dm2;
            }
        }
        if (grads)
            backward(params, cache1, dm1, dlv1, *grads);
    }
    return total;
}

double fec_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskPair> pairs,
                std::span<const TwoStepTransition> transitions, bool second_step, Gradients* grads)
{
    if (transitions.empty())
        throw InputError("fec_loss on an empty batch");
    const auto sd = static_cast<int>(transitions.front().s_prev.size());
    const auto ad = static_cast<int>(transitions.front().a_prev.size());
    Dataset ds(sd, ad);
    for (std::size_t i = 0; i < transitions.size(); ++i) {
        if (transitions[i].crosses_boundary())
            throw InputError("transition " + std::to_string(i) + " crosses an episode boundary");
        ds.append(transitions[i]);
    }
    return fec_loss(params, pipe, pairs, ds.all(), second_step, grads);
}

double regularizer(const NetworkParams& params, const LossWeights& weights, Gradients* grads)
{
    double total = 0.0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        total += weights.weight_decay * (layer.weight.squaredNorm() + layer.bias.squaredNorm());
        if (grads) {
            grads->weight[l] += 2.0 * weights.weight_decay * layer.weight;
            grads->bias[l] += 2.0 * weights.weight_decay * layer.bias;
        }
    }
    total += weights.logvar_bound * (params.max_logvar.sum() - params.min_logvar.sum());
    if (grads) {
        grads->max_logvar.array() += weights.logvar_bound;
        grads->min_logvar.array() -= weights.logvar_bound;
    }
    return total;
}

double total_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskPair> pairs,
                  const TransitionBatch& batch, const LossWeights& weights, Gradients* grads)
{
    return fec_loss(params, pipe, pairs, batch, weights.fec, grads) + regularizer(params, weights, grads);
}

void EnsembleConfig::validate() const
{
    if (ensemble_size < 1)
        throw ConfigError("ensemble_size must be >= 1");
    if (hidden.empty())
        throw ConfigError("at least one hidden layer is required");
    if (!(keep_rate > 0.0 && keep_rate <= 1.0))
        throw ConfigError("keep_rate must lie in (0, 1]");
    if (epochs < 0)
        throw ConfigError("epochs must be >= 0");
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (!(optimizer.learning_rate > 0.0))
        throw ConfigError("learning_rate must be positive");
    if (loss.weight_decay < 0.0)
        throw ConfigError("weight_decay must be >= 0");
    switch (dropout) {
    case DropoutMode::restrictive:
        validate_subset_size(mask_sets, q_subset);
        break;
    case DropoutMode::mc:
        if (q_subset < 1)
            throw ConfigError("q_subset must be >= 1");
        break;
    case DropoutMode::none:
        if (mask_sets < 1)
            throw ConfigError("mask_sets must be >= 1");
        break;
    }
}

Ensemble::Ensemble(EnsembleConfig cfg, int state_dim, int action_dim, StateCodec codec, Rng& init_rng)
    : cfg_(std::move(cfg)), state_dim_(state_dim), action_dim_(action_dim)
{
    cfg_.validate();
    if (codec.state_dim() != state_dim)
        throw ConfigError("state codec dimension does not match the model state dimension");
    pipe_.codec = std::move(codec);
    pipe_.action_dim = action_dim;
    pipe_.normalizer = Normalizer::identity(pipe_.input_dim());

    const auto base = init_rng();
    NetworkShape shape{pipe_.input_dim(), state_dim, cfg_.hidden};
    for (int b = 0; b < cfg_.ensemble_size; ++b) {
        Rng rng(derive_seed(base, static_cast<std::uint64_t>(b), Stream::init));
        members_.push_back({make_network(shape, rng), {}});
    }
    resample_family(init_rng, 0);
}

void Ensemble::set_family(MaskFamily family)
{
    const auto w = widths();
    for (const auto& set : family.sets) {
        if (set.keep.size() != w.size())
            throw ConfigError("mask family does not match the network architecture");
        for (std::size_t l = 0; l < w.size(); ++l)
            if (set.keep[l].size() != w[l])
                throw ConfigError("mask family does not match the network architecture");
    }
    family_ = std::move(family);
}

void Ensemble::resample_family(Rng& rng, long episode_id)
{
    const double keep = cfg_.dropout == DropoutMode::none ? 1.0 : cfg_.keep_rate;
    const int m = std::max(cfg_.mask_sets, 2);
    family_ = sample_mask_family(m, widths(), keep, rng, episode_id);
}

std::vector<MaskSet> Ensemble::particle_masks(int count, Rng& rng) const
{
    std::vector<MaskSet> out;
    out.reserve(static_cast<std::size_t>(count));
    const auto w = widths();
    switch (cfg_.dropout) {
    case DropoutMode::restrictive: {
        probe_hit(probe_, "particles.family");
        std::uniform_int_distribution<std::size_t> pick(0, family_.sets.size() - 1);
        for (int i = 0; i < count; ++i)
            out.push_back(family_.sets[pick(rng)]);
        break;
    }
    case DropoutMode::mc:
        probe_hit(probe_, "particles.fresh");
        for (int i = 0; i < count; ++i)
            out.push_back(sample_mask(w, cfg_.keep_rate, rng));
        break;
    case DropoutMode::none:
        probe_hit(probe_, "particles.ones");
        for (int i = 0; i < count; ++i)
            out.push_back(full_mask(w));
        break;
    }
    return out;
}

BatchPrediction Ensemble::head(int member, const MaskSet& mask, const Eigen::MatrixXd& states,
                               const Eigen::MatrixXd& actions) const
{
    return forward_batch(members_.at(static_cast<std::size_t>(member)).params, pipe_.inputs(states, actions), mask);
}

StepPrediction Ensemble::predict(int member, const MaskSet& mask, const Eigen::MatrixXd& states,
                                 const Eigen::MatrixXd& actions) const
{
    const auto pred = head(member, mask, states, actions);
    return {states + pred.mean, pred.logvar.array().exp().matrix()};
}

Eigen::MatrixXd Ensemble::predict_output(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, Rng& rng,
                                         const DropoutMode* mode) const
{
    const auto m = mode ? *mode : cfg_.dropout;
    const Eigen::MatrixXd x = pipe_.inputs(states, actions);
    const auto w = widths();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(states.rows(), state_dim_);
    long count = 0;
    for (const auto& member : members_) {
        std::vector<MaskSet> owned;
        std::vector<const MaskSet*> masks;
        switch (m) {
        case DropoutMode::restrictive:
            for (auto i : draw_q_subset(family_, cfg_.q_subset, rng))
                masks.push_back(&family_.sets[i]);
            break;
        case DropoutMode::mc:
            owned.reserve(static_cast<std::size_t>(cfg_.q_subset));
            for (int q = 0; q < cfg_.q_subset; ++q) {
                owned.push_back(sample_mask(w, cfg_.keep_rate, rng));
                masks.push_back(&owned.back());
            }
            break;
        case DropoutMode::none:
            owned.push_back(full_mask(w));
            masks.push_back(&owned.back());
            break;
        }
        for (const MaskSet* mask : masks) {
            sum += forward_batch(member.params, x, *mask).mean;
            ++count;
        }
    }
    Eigen::MatrixXd out = sum / static_cast<double>(count);
    if (!out.allFinite())
        throw NumericalError("ensemble prediction is not finite");
    return out;
}

Eigen::VectorXd Ensemble::predict_mean(const Eigen::VectorXd& state, const Eigen::VectorXd& action, Rng& rng) const
{
    const Eigen::MatrixXd delta = predict_output(state.transpose(), action.transpose(), rng);
    return state + delta.row(0).transpose();
}

PredictiveMoments Ensemble::predictive_moments(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const
{
    const Eigen::MatrixXd x = pipe_.inputs(states, actions);
    const auto n = states.rows();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, state_dim_);
    Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(n, state_dim_);
    Eigen::MatrixXd var_sum = Eigen::MatrixXd::Zero(n, state_dim_);
    long count = 0;
    for (const auto& member : members_) {
        for (const auto& set : family_.sets) {
            const auto pred = forward_batch(member.params, x, set);
            sum += pred.mean;
            sum_sq += pred.mean.cwiseAbs2();
            var_sum += pred.logvar.array().exp().matrix();
            ++count;
        }
    }
    const double c = static_cast<double>(count);
    PredictiveMoments out;
    out.mean = sum / c;
    out.epistemic = (sum_sq / c - out.mean.cwiseAbs2()).cwiseMax(0.0);
    out.aleatoric = var_sum / c;
    return out;
}

Ensemble::BatchMasks Ensemble::batch_masks(Rng& rng) const
{
    BatchMasks out;
    const auto w = widths();
    switch (cfg_.dropout) {
    case DropoutMode::restrictive:
        probe_hit(probe_, "train.restrictive");
        for (auto q : draw_q_subset(family_, cfg_.q_subset, rng)) {
            const auto partner = draw_partner(family_, q, rng);
            out.pairs.push_back({&family_.sets[q], &family_.sets[partner]});
        }
        break;
    case DropoutMode::mc:
        probe_hit(probe_, "train.mc");
        out.owned.reserve(2 * static_cast<std::size_t>(cfg_.q_subset));
        for (int q = 0; q < cfg_.q_subset; ++q) {
            out.owned.push_back(sample_mask(w, cfg_.keep_rate, rng));
            out.owned.push_back(sample_mask(w, cfg_.keep_rate, rng));
        }
        for (std::size_t q = 0; q < out.owned.size(); q += 2)
            out.pairs.push_back({&out.owned[q], &out.owned[q + 1]});
        break;
    case DropoutMode::none:
        probe_hit(probe_, "train.no_dropout");
        out.owned.push_back(full_mask(w));
        out.pairs.push_back({&out.owned[0], &out.owned[0]});
        break;
    }
    return out;
}

std::vector<std::size_t> Ensemble::member_indices(std::size_t n, Rng& rng) const
{
    std::vector<std::size_t> idx(n);
    if (cfg_.bootstrap) {
        probe_hit(probe_, "train.bootstrap");
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (auto& i : idx)
            i = pick(rng);
    } else {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    return idx;
}

template <typename Step>
LossTrace Ensemble::run_training(std::size_t n, Rng& rng, int epochs, Step&& step)
{
    LossTrace trace(members_.size());
    const auto base = rng();
    const auto batch = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t b = 0; b < members_.size(); ++b) {
        Rng member_rng(derive_seed(base, b, Stream::train));
        auto idx = member_indices(n, member_rng);
        auto& member = members_[b];
        for (int epoch = 0; epoch < epochs; ++epoch) {
            std::shuffle(idx.begin(), idx.end(), member_rng);
            double loss_sum = 0.0;
            long batches = 0;
            for (std::size_t start = 0; start < idx.size(); start += batch) {
                const auto len = std::min(batch, idx.size() - start);
                const std::span<const std::size_t> slice(idx.data() + start, len);
                const auto masks = batch_masks(member_rng);
                Gradients grads = Gradients::zeros_like(member.params);
                const double loss = step(member.params, slice, masks.pairs, grads);
                if (!std::isfinite(loss) || !grads.all_finite())
                    throw NumericalError("training loss is not finite in member " + std::to_string(b),
                                         static_cast<long>(start / batch));
                apply_update(member.params, grads, member.optimizer, cfg_.optimizer);
                loss_sum += loss;
                ++batches;
            }
            trace[b].push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
        }
    }
    return trace;
}

LossTrace Ensemble::train(const Dataset& data, Rng& rng)
{
    return train(data, rng, cfg_.epochs);
}

LossTrace Ensemble::train(const Dataset& data, Rng& rng, int epochs)
{
    if (data.empty())
        throw InputError("cannot train on an empty dataset");
    if (data.state_dim() != state_dim_ || data.action_dim() != action_dim_)
        throw ConfigError("dataset dimensions do not match the model");

    const auto everything = data.all();
    Eigen::MatrixXd raw(2 * everything.size(), pipe_.input_dim());
    raw.topRows(everything.size()) = pipe_.raw_features(everything.s_prev, everything.a_prev);
    raw.bottomRows(everything.size()) = pipe_.raw_features(everything.s_mid, everything.a_mid);
    pipe_.normalizer = Normalizer::fit(raw);

    probe_hit(probe_, cfg_.loss.fec ? "loss.fec" : "loss.one_step");
    return run_training(data.size(), rng, epochs,
                        [&](const NetworkParams& params, std::span<const std::size_t> slice,
                            const std::vector<MaskPair>& pairs, Gradients& grads) {
                            const auto batch = data.gather(slice);
                            return total_loss(params, pipe_, pairs, batch, cfg_.loss, &grads);
                        });
}

LossTrace Ensemble::train_regression(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Rng& rng, int epochs)
{
    if (x.rows() == 0)
        throw InputError("cannot train on an empty dataset");
    if (action_dim_ != 0 || x.cols() != state_dim_ || y.cols() != state_dim_ || y.rows() != x.rows())
        throw ConfigError("regression expects an action-free model with matching x and y widths");
    const Eigen::MatrixXd no_actions(x.rows(), 0);
    pipe_.normalizer = Normalizer::fit(pipe_.raw_features(x, no_actions));

    return run_training(static_cast<std::size_t>(x.rows()), rng, epochs,
                        [&](const NetworkParams& params, std::span<const std::size_t> slice,
                            const std::vector<MaskPair>& pairs, Gradients& grads) {
                            const auto n = static_cast<Eigen::Index>(slice.size());
                            Eigen::MatrixXd xs(n, x.cols()), ys(n, y.cols());
                            for (Eigen::Index r = 0; r < n; ++r) {
                                xs.row(r) = x.row(static_cast<Eigen::Index>(slice[static_cast<std::size_t>(r)]));
                                ys.row(r) = y.row(static_cast<Eigen::Index>(slice[static_cast<std::size_t>(r)]));
                            }
                            std::vector<const MaskSet*> masks;
                            for (const auto& p : pairs)
                                masks.push_back(p.first);
                            const Eigen::MatrixXd none(n, 0);
                            return nll_loss(params, pipe_, masks, xs, none, ys, &grads)
                                + regularizer(params, cfg_.loss, &grads);
                        });
}

} // namespace dpets
