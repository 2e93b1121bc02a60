#include "dpets/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dpets/errors.hpp"

namespace dpets {

namespace {

double softplus(double x)
{
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void activate(Activation act, Eigen::MatrixXd& m)
{
    // tanh via exp: Eigen vectorizes exp for doubles but not tanh. Absolute
    // error stays at rounding level; saturated beyond |x| = 20.
    if (act == Activation::tanh)
        m = (1.0 - 2.0 / ((2.0 * m.array().max(-20.0).min(20.0)).exp() + 1.0)).matrix();
}

std::string shape_str(Eigen::Index r, Eigen::Index c)
{
    return std::to_string(r) + "x" + std::to_string(c);
}

} // namespace

int NetworkParams::parameter_count() const
{
    int n = 0;
    for (const auto& l : layers)
        n += static_cast<int>(l.weight.size() + l.bias.size());
    return n + static_cast<int>(max_logvar.size() + min_logvar.size());
}

void NetworkParams::validate() const
{
    if (layers.empty())
        throw ConfigError("network has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.bias.size() != layer.weight.cols())
            throw ConfigError("layer " + std::to_string(l) + ": bias length " + std::to_string(layer.bias.size())
                              + " does not match weight " + shape_str(layer.weight.rows(), layer.weight.cols()));
        if (l + 1 < layers.size() && layer.weight.cols() != layers[l + 1].weight.rows())
            throw ConfigError("layer " + std::to_string(l) + " output width does not match layer "
                              + std::to_string(l + 1) + " input width");
    }
    if (layers.back().weight.cols() % 2 != 0)
        throw ConfigError("output layer width must be even (mean and log-variance heads)");
    if (layers.back().activation != Activation::identity)
        throw ConfigError("output layer must be linear");
    const auto d = layers.back().weight.cols() / 2;
    if (max_logvar.size() != d || min_logvar.size() != d)
        throw ConfigError("log-variance bounds must have length " + std::to_string(d));
    if (((max_logvar - min_logvar).array() <= 0.0).any())
        throw ConfigError("max_logvar must exceed min_logvar");
}

NetworkParams make_network(const NetworkShape& shape, Rng& rng)
{
    if (shape.input_dim < 1 || shape.output_dim < 1)
        throw ConfigError("network input and output dimensions must be positive");
    std::vector<int> widths{shape.input_dim};
    for (int h : shape.hidden) {
        if (h < 1)
            throw ConfigError("hidden layer widths must be positive");
        widths.push_back(h);
    }
    widths.push_back(2 * shape.output_dim);

    NetworkParams params;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        Layer layer;
        const double std = 1.0 / (2.0 * std::sqrt(static_cast<double>(widths[l])));
        layer.weight.resize(widths[l], widths[l + 1]);
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
                double z;
                do {
                    z = normal(rng);
                } while (std::abs(z) > 2.0);
                layer.weight(i, j) = std * z;
            }
        }
        layer.bias = Eigen::VectorXd::Zero(widths[l + 1]);
        layer.activation = (l + 2 == widths.size()) ? Activation::identity : Activation::tanh;
        params.layers.push_back(std::move(layer));
    }
    params.max_logvar = Eigen::VectorXd::Constant(shape.output_dim, initial_max_logvar);
    params.min_logvar = Eigen::VectorXd::Constant(shape.output_dim, initial_min_logvar);
    return params;
}

std::vector<int> mask_widths(const NetworkParams& params)
{
    std::vector<int> w;
    w.reserve(params.layers.size());
    for (const auto& l : params.layers)
        w.push_back(static_cast<int>(l.weight.rows()));
    return w;
}

MaskSet full_mask(std::span<const int> widths)
{
    MaskSet m;
    for (int w : widths)
        m.keep.push_back(Eigen::VectorXd::Ones(w));
    m.keep_rate = 1.0;
    return m;
}

MaskSet sample_mask(std::span<const int> widths, double keep_rate, Rng& rng)
{
    if (!(keep_rate > 0.0 && keep_rate <= 1.0))
        throw ConfigError("keep_rate must lie in (0, 1]");
    std::bernoulli_distribution keep(keep_rate);
    MaskSet m;
    m.keep_rate = keep_rate;
    for (int w : widths) {
        Eigen::VectorXd z(w);
        for (int i = 0; i < w; ++i)
            z[i] = keep(rng) ? 1.0 : 0.0;
        m.keep.push_back(std::move(z));
    }
    return m;
}

double bound_logvar(double raw, double max_lv, double min_lv)
{
    const double stage = min_lv + softplus(raw - min_lv);
    return std::max(max_lv - softplus(max_lv - stage), min_lv);
}

BatchPrediction forward_batch(const NetworkParams& params, const Eigen::MatrixXd& inputs, const MaskSet& mask,
                              ForwardCache* cache)
{
    const auto n_layers = params.layers.size();
    if (mask.keep.size() != n_layers)
        throw ConfigError("mask has " + std::to_string(mask.keep.size()) + " layers, network has "
                          + std::to_string(n_layers));
    if (inputs.cols() != params.input_dim())
        throw ConfigError("input width " + std::to_string(inputs.cols()) + " does not match network input "
                          + std::to_string(params.input_dim()));
    if (!inputs.allFinite())
        throw InputError("network input contains non-finite values");

    if (cache) {
        cache->inputs.resize(n_layers);
        cache->outputs.resize(n_layers);
        cache->keep.resize(n_layers);
    }

    Eigen::MatrixXd x = inputs;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = params.layers[l];
        if (mask.keep[l].size() != layer.weight.rows())
            throw ConfigError("mask for layer " + std::to_string(l) + " has width "
                              + std::to_string(mask.keep[l].size()) + ", expected "
                              + std::to_string(layer.weight.rows()));
        x.array().rowwise() *= mask.keep[l].transpose().array();
        Eigen::MatrixXd y = x * layer.weight;
        y.rowwise() += layer.bias.transpose();
        activate(layer.activation, y);
        if (cache) {
            cache->inputs[l] = std::move(x);
            cache->keep[l] = mask.keep[l];
        }
        x = std::move(y);
        if (cache)
            cache->outputs[l] = x;
    }

    const auto d = params.output_dim();
    BatchPrediction out;
    out.mean = x.leftCols(d);
    out.logvar.resize(x.rows(), d);
    Eigen::MatrixXd stage(x.rows(), d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double hi = params.max_logvar[j];
        const double lo = params.min_logvar[j];
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double s = lo + softplus(x(i, d + j) - lo);
            stage(i, j) = s;
            out.logvar(i, j) = std::max(hi - softplus(hi - s), lo);
        }
    }
    if (cache) {
        cache->raw_logvar = x.rightCols(d);
        cache->stage_logvar = std::move(stage);
    }
    return out;
}

GaussianPrediction forward(const NetworkParams& params, const Eigen::VectorXd& input, const MaskSet& mask)
{
    const auto batch = forward_batch(params, input.transpose(), mask);
    return {batch.mean.row(0).transpose(), batch.logvar.row(0).transpose().array().exp().matrix()};
}

Gradients Gradients::zeros_like(const NetworkParams& params)
{
    Gradients g;
    for (const auto& l : params.layers) {
        g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
        g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
    g.max_logvar = Eigen::VectorXd::Zero(params.max_logvar.size());
    g.min_logvar = Eigen::VectorXd::Zero(params.min_logvar.size());
    return g;
}

Gradients& Gradients::operator+=(const Gradients& other)
{
    for (std::size_t l = 0; l < weight.size(); ++l) {
        weight[l] += other.weight[l];
        bias[l] += other.bias[l];
    }
    max_logvar += other.max_logvar;
    min_logvar += other.min_logvar;
    return *this;
}

Gradients& Gradients::operator*=(double scale)
{
    for (std::size_t l = 0; l < weight.size(); ++l) {
        weight[l] *= scale;
        bias[l] *= scale;
    }
    max_logvar *= scale;
    min_logvar *= scale;
    return *this;
}

bool Gradients::all_finite() const
{
    for (std::size_t l = 0; l < weight.size(); ++l)
        if (!weight[l].allFinite() || !bias[l].allFinite())
            return false;
    return max_logvar.allFinite() && min_logvar.allFinite();
}

Eigen::MatrixXd backward(const NetworkParams& params, const ForwardCache& cache, const Eigen::MatrixXd& d_mean,
                         const Eigen::MatrixXd& d_logvar, Gradients& grads)
{
    const auto d = params.output_dim();
    const auto n = d_mean.rows();
    Eigen::MatrixXd d_out(n, 2 * d);
    d_out.leftCols(d) = d_mean;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double hi = params.max_logvar[j];
        const double lo = params.min_logvar[j];
        for (Eigen::Index i = 0; i < n; ++i) {
            const double g = d_logvar(i, j);
            const double stage = cache.stage_logvar(i, j);
            const double upper = hi - softplus(hi - stage);
            if (upper < lo) {
                d_out(i, d + j) = 0.0;
                grads.min_logvar[j] += g;
                continue;
            }
            const double s_lower = sigmoid(cache.raw_logvar(i, j) - lo);
            const double s_upper = sigmoid(hi - stage);
            d_out(i, d + j) = g * s_upper * s_lower;
            grads.max_logvar[j] += g * (1.0 - s_upper);
            grads.min_logvar[j] += g * s_upper * (1.0 - s_lower);
        }
    }

    Eigen::MatrixXd delta = std::move(d_out);
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        if (layer.activation == Activation::tanh)
            delta.array() *= 1.0 - cache.outputs[l].array().square();
        grads.weight[l].noalias() += cache.inputs[l].transpose() * delta;
        grads.bias[l] += delta.colwise().sum().transpose();
        Eigen::MatrixXd d_in = delta * layer.weight.transpose();
        // The dropout mask multiplies the layer input, so it gates the gradient too.
        d_in.array().rowwise() *= cache.keep[l].transpose().array();
        delta = std::move(d_in);
    }
    return delta;
}

} // namespace dpets

namespace dpets {

LossAndGradients gradients(const NetworkParams& params, const Eigen::MatrixXd& inputs, const MaskSet& mask,
                           const HeadLoss& loss)
{
    ForwardCache cache;
    const auto pred = forward_batch(params, inputs, mask, &cache);
    Eigen::MatrixXd d_mean = Eigen::MatrixXd::Zero(pred.mean.rows(), pred.mean.cols());
    Eigen::MatrixXd d_logvar = Eigen::MatrixXd::Zero(pred.logvar.rows(), pred.logvar.cols());
    LossAndGradients out;
    out.loss = loss.evaluate(pred, d_mean, d_logvar);
    if (!std::isfinite(out.loss)) {
        long bad = 0;
        for (Eigen::Index i = 0; i < pred.mean.rows(); ++i) {
            if (!pred.mean.row(i).allFinite() || !d_mean.row(i).allFinite() || !d_logvar.row(i).allFinite()) {
                bad = static_cast<long>(i);
                break;
            }
        }
        throw NumericalError("loss is not finite (first offending row " + std::to_string(bad) + ")", bad);
    }
    out.grads = Gradients::zeros_like(params);
    backward(params, cache, d_mean, d_logvar, out.grads);
    return out;
}

Eigen::VectorXd flatten(const NetworkParams& params)
{
    Eigen::VectorXd flat(params.parameter_count());
    Eigen::Index k = 0;
    for (const auto& l : params.layers) {
        flat.segment(k, l.weight.size()) = l.weight.reshaped();
        k += l.weight.size();
        flat.segment(k, l.bias.size()) = l.bias;
        k += l.bias.size();
    }
    flat.segment(k, params.max_logvar.size()) = params.max_logvar;
    k += params.max_logvar.size();
    flat.segment(k, params.min_logvar.size()) = params.min_logvar;
    return flat;
}

Eigen::VectorXd flatten(const Gradients& grads)
{
    Eigen::Index n = grads.max_logvar.size() + grads.min_logvar.size();
    for (std::size_t l = 0; l < grads.weight.size(); ++l)
        n += grads.weight[l].size() + grads.bias[l].size();
    Eigen::VectorXd flat(n);
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < grads.weight.size(); ++l) {
        flat.segment(k, grads.weight[l].size()) = grads.weight[l].reshaped();
        k += grads.weight[l].size();
        flat.segment(k, grads.bias[l].size()) = grads.bias[l];
        k += grads.bias[l].size();
    }
    flat.segment(k, grads.max_logvar.size()) = grads.max_logvar;
    k += grads.max_logvar.size();
    flat.segment(k, grads.min_logvar.size()) = grads.min_logvar;
    return flat;
}

void unflatten(const Eigen::VectorXd& flat, NetworkParams& params)
{
    if (flat.size() != params.parameter_count())
        throw ConfigError("flat parameter vector has length " + std::to_string(flat.size()) + ", expected "
                          + std::to_string(params.parameter_count()));
    Eigen::Index k = 0;
    for (auto& l : params.layers) {
        l.weight.reshaped() = flat.segment(k, l.weight.size());
        k += l.weight.size();
        l.bias = flat.segment(k, l.bias.size());
        k += l.bias.size();
    }
    params.max_logvar = flat.segment(k, params.max_logvar.size());
    k += params.max_logvar.size();
    params.min_logvar = flat.segment(k, params.min_logvar.size());
}

void enforce_logvar_separation(NetworkParams& params)
{
    for (Eigen::Index j = 0; j < params.max_logvar.size(); ++j) {
        if (params.max_logvar[j] - params.min_logvar[j] < min_logvar_separation) {
            const double mid = 0.5 * (params.max_logvar[j] + params.min_logvar[j]);
            params.max_logvar[j] = mid + 0.5 * min_logvar_separation;
            params.min_logvar[j] = mid - 0.5 * min_logvar_separation;
        }
    }
}

void apply_update(NetworkParams& params, const Gradients& grads, OptimizerState& state, const OptimizerConfig& cfg)
{
    Eigen::VectorXd theta = flatten(params);
    const Eigen::VectorXd g = flatten(grads);
    if (g.size() != theta.size())
        throw ConfigError("gradient shape does not match parameters");

    if (cfg.kind == OptimizerConfig::Kind::sgd) {
        theta -= cfg.learning_rate * g;
    } else {
        if (state.first_moment.size() != theta.size()) {
            state.first_moment = Eigen::VectorXd::Zero(theta.size());
            state.second_moment = Eigen::VectorXd::Zero(theta.size());
            state.steps = 0;
        }
        ++state.steps;
        state.first_moment = cfg.beta1 * state.first_moment + (1.0 - cfg.beta1) * g;
        state.second_moment = cfg.beta2 * state.second_moment + (1.0 - cfg.beta2) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
        theta.array() -= cfg.learning_rate * (state.first_moment.array() / c1)
            / ((state.second_moment.array() / c2).sqrt() + cfg.epsilon);
    }
    unflatten(theta, params);
    enforce_logvar_separation(params);
}

} // namespace dpets
