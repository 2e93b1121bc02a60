#ifndef DPETS_NETWORK_HPP
#define DPETS_NETWORK_HPP

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dpets/rng.hpp"

namespace dpets {

enum class Activation { tanh, identity };

struct Layer {
    Eigen::MatrixXd weight; // in x out
    Eigen::VectorXd bias;   // out
    Activation activation = Activation::tanh;
};

// One feed-forward dynamics network. The final layer is linear and emits
// 2*d_s values: a mean head followed by a raw log-variance head. The raw head
// is squashed into [min_logvar, max_logvar], both of which are trained.
struct NetworkParams {
    std::vector<Layer> layers;
    Eigen::VectorXd max_logvar;
    Eigen::VectorXd min_logvar;

    int input_dim() const { return static_cast<int>(layers.front().weight.rows()); }
    int output_dim() const { return static_cast<int>(layers.back().weight.cols()) / 2; }
    int parameter_count() const;

    // Throws ConfigError when the layer chain or bound vectors are inconsistent.
    void validate() const;
};

struct NetworkShape {
    int input_dim = 0;
    int output_dim = 0;
    std::vector<int> hidden;
};

// Truncated-normal weights (std 1/(2 sqrt(fan_in)), cut at two std), zero
// biases, log-variance bounds at [-10, 0.5].
NetworkParams make_network(const NetworkShape& shape, Rng& rng);

inline constexpr double initial_max_logvar = 0.5;
inline constexpr double initial_min_logvar = -10.0;
inline constexpr double min_logvar_separation = 1e-2;

// Binary keep vectors, one per layer, each as long as that layer's input.
struct MaskSet {
    std::vector<Eigen::VectorXd> keep;
    double keep_rate = 1.0;

    bool operator==(const MaskSet&) const = default;
};

std::vector<int> mask_widths(const NetworkParams& params);
MaskSet full_mask(std::span<const int> widths);
MaskSet sample_mask(std::span<const int> widths, double keep_rate, Rng& rng);

struct GaussianPrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
};

// Row-wise predictions for a batch. logvar is already bounded.
struct BatchPrediction {
    Eigen::MatrixXd mean;
    Eigen::MatrixXd logvar;
};

// Intermediate values kept for the backward pass.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;  // masked input of each layer
    std::vector<Eigen::MatrixXd> outputs; // post-activation output of each layer
    std::vector<Eigen::VectorXd> keep;
    Eigen::MatrixXd raw_logvar;
    Eigen::MatrixXd stage_logvar; // after the lower softplus, before the upper
};

// Two-sided soft bound: lower softplus stage, then upper softplus stage, then a
// hard floor at min_logvar to absorb the residual of the upper stage.
double bound_logvar(double raw, double max_lv, double min_lv);

GaussianPrediction forward(const NetworkParams& params, const Eigen::VectorXd& input, const MaskSet& mask);

// Inputs are rows. Dropout multiplies each layer input by its keep vector; no
// rescaling by keep_rate.
BatchPrediction forward_batch(const NetworkParams& params, const Eigen::MatrixXd& inputs, const MaskSet& mask,
                              ForwardCache* cache = nullptr);

struct Gradients {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;
    Eigen::VectorXd max_logvar;
    Eigen::VectorXd min_logvar;

    static Gradients zeros_like(const NetworkParams& params);
    Gradients& operator+=(const Gradients& other);
    Gradients& operator*=(double scale);
    bool all_finite() const;
};

// Back-propagates dL/dmean and dL/dlogvar (w.r.t. the bounded log-variance)
// through a cached forward pass. Parameter gradients accumulate into grads;
// the return value is dL/dinputs.
Eigen::MatrixXd backward(const NetworkParams& params, const ForwardCache& cache, const Eigen::MatrixXd& d_mean,
                         const Eigen::MatrixXd& d_logvar, Gradients& grads);

// Loss over one batch prediction. Implementations fill d_mean and d_logvar
// (already sized like the prediction) and return the scalar loss.
struct HeadLoss {
    virtual ~HeadLoss() = default;
    virtual double evaluate(const BatchPrediction& pred, Eigen::MatrixXd& d_mean, Eigen::MatrixXd& d_logvar) const = 0;
};

struct LossAndGradients {
    double loss = 0.0;
    Gradients grads;
};

// Gradient of a head loss evaluated on one masked forward pass. Throws
// NumericalError with the first offending row when the loss is not finite.
LossAndGradients gradients(const NetworkParams& params, const Eigen::MatrixXd& inputs, const MaskSet& mask,
                           const HeadLoss& loss);

// Flat views in a fixed order: per layer (weight column-major, bias), then
// max_logvar, then min_logvar.
Eigen::VectorXd flatten(const NetworkParams& params);
Eigen::VectorXd flatten(const Gradients& grads);
void unflatten(const Eigen::VectorXd& flat, NetworkParams& params);

struct OptimizerConfig {
    enum class Kind { adam, sgd };
    Kind kind = Kind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    long steps = 0;
};

// One optimizer step. Restores max_logvar - min_logvar >= min_logvar_separation
// afterwards by moving both bounds symmetrically about their midpoint.
void apply_update(NetworkParams& params, const Gradients& grads, OptimizerState& state, const OptimizerConfig& cfg);

void enforce_logvar_separation(NetworkParams& params);

} // namespace dpets

#endif
