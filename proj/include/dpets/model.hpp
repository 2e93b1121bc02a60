#ifndef DPETS_MODEL_HPP
#define DPETS_MODEL_HPP

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dpets/dataset.hpp"
#include "dpets/dynamics.hpp"
#include "dpets/network.hpp"
#include "dpets/probe.hpp"
#include "dpets/rng.hpp"

namespace dpets {

// restrictive: M episode-fixed mask sets, Q-of-M subsets per prediction.
// mc: a fresh Bernoulli mask for every prediction and batch.
// none: dropout off; diversity comes from bootstrapped members only.
enum class DropoutMode { restrictive, mc, none };

struct MaskFamily {
    std::vector<MaskSet> sets;
    long episode_id = 0;
};

// Throws ConfigError unless 0.5M < Q < M.
void validate_subset_size(int mask_sets, int q_subset);

MaskFamily sample_mask_family(int mask_sets, std::span<const int> widths, double keep_rate, Rng& rng,
                              long episode_id = 0);

// Q distinct family indices, uniformly without replacement.
std::vector<std::size_t> draw_q_subset(const MaskFamily& family, int q_subset, Rng& rng);

// A uniformly drawn family index different from `excluded`.
std::size_t draw_partner(const MaskFamily& family, std::size_t excluded, Rng& rng);

// Maps environment states to network features. Angle dimensions are replaced by
// their (sin, cos) pair, all others pass through.
class StateCodec {
public:
    StateCodec() = default;
    StateCodec(int state_dim, std::vector<int> angle_dims);

    int state_dim() const { return state_dim_; }
    int feature_dim() const { return state_dim_ + static_cast<int>(angle_dims_.size()); }
    const std::vector<int>& angle_dims() const { return angle_dims_; }

    Eigen::MatrixXd encode(const Eigen::MatrixXd& states) const;
    // Chain rule through encode: d_features -> d_states.
    Eigen::MatrixXd backprop(const Eigen::MatrixXd& states, const Eigen::MatrixXd& d_features) const;

private:
    int state_dim_ = 0;
    std::vector<int> angle_dims_;
    std::vector<char> is_angle_;
};

struct Normalizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;

    static Normalizer identity(int dim);
    // Column statistics; columns with std below 1e-8 get std 1.
    static Normalizer fit(const Eigen::MatrixXd& rows);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
};

// states/actions -> standardized network inputs.
struct InputPipeline {
    StateCodec codec;
    Normalizer normalizer;
    int action_dim = 0;

    int input_dim() const { return codec.feature_dim() + action_dim; }
    Eigen::MatrixXd raw_features(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;
    Eigen::MatrixXd inputs(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;
    // d_inputs -> d_states (the action part is discarded).
    Eigen::MatrixXd state_gradient(const Eigen::MatrixXd& states, const Eigen::MatrixXd& d_inputs) const;
};

struct LossWeights {
    double weight_decay = 1e-4;  // per layer, on squared weights and biases
    double logvar_bound = 0.01;  // on sum(max_logvar) - sum(min_logvar)
    bool fec = true;             // include the second-step term
};

// Sum over rows and dimensions of E^2 exp(-lv) + lv, times `scale`. When the
// derivative outputs are given they receive the scaled derivatives.
double gaussian_nll(const BatchPrediction& pred, const Eigen::MatrixXd& target, double scale = 1.0,
                    Eigen::MatrixXd* d_mean = nullptr, Eigen::MatrixXd* d_logvar = nullptr);

// (1/N) sum_n sum_q [E^T Sigma^-1 E + log det Sigma] for one member, one mask per q.
double nll_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskSet* const> masks,
                const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, const Eigen::MatrixXd& targets,
                Gradients* grads = nullptr);

// First mask of the pair scores step one, the second scores step two.
struct MaskPair {
    const MaskSet* first = nullptr;
    const MaskSet* second = nullptr;
};

// (1/N) sum_n sum_q [L + L']. L is the one-step NLL against s_mid - s_prev; L'
// feeds the predicted s_mid (with a_mid) back through the network under the
// pair's second mask and scores s_next. Gradients flow through the first-step
// mean into L'. With second_step false only L is evaluated.
double fec_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskPair> pairs,
                const TransitionBatch& batch, bool second_step = true, Gradients* grads = nullptr);

// Throws InputError if any transition crosses an episode boundary.
double fec_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskPair> pairs,
                std::span<const TwoStepTransition> transitions, bool second_step = true, Gradients* grads = nullptr);

// sum_l lambda (|W_l|^2 + |b_l|^2) + bound_weight (sum max_lv - sum min_lv).
double regularizer(const NetworkParams& params, const LossWeights& weights, Gradients* grads = nullptr);

double total_loss(const NetworkParams& params, const InputPipeline& pipe, std::span<const MaskPair> pairs,
                  const TransitionBatch& batch, const LossWeights& weights, Gradients* grads = nullptr);

struct EnsembleConfig {
    std::vector<int> hidden{200, 200, 200};
    int ensemble_size = 5;
    int mask_sets = 5;
    int q_subset = 3;
    double keep_rate = 0.9;
    DropoutMode dropout = DropoutMode::restrictive;
    bool bootstrap = false; // resample the dataset per member
    LossWeights loss;
    OptimizerConfig optimizer;
    int epochs = 20;
    int batch_size = 32;

    void validate() const;
};

struct Member {
    NetworkParams params;
    OptimizerState optimizer;
};

// Per member, per epoch mean batch loss.
using LossTrace = std::vector<std::vector<double>>;

struct PredictiveMoments {
    Eigen::MatrixXd mean;      // mixture mean of the network output
    Eigen::MatrixXd epistemic; // variance of the component means
    Eigen::MatrixXd aleatoric; // average component variance
};

// B networks sharing one mask family. Networks predict state deltas, so the
// next-state mean is s + mu. For plain regression (train_regression) the
// output is the target itself.
class Ensemble : public DynamicsModel {
public:
    Ensemble(EnsembleConfig cfg, int state_dim, int action_dim, StateCodec codec, Rng& init_rng);

    const EnsembleConfig& config() const { return cfg_; }
    EnsembleConfig& mutable_config() { return cfg_; }
    const std::vector<Member>& members() const { return members_; }
    std::vector<Member>& members() { return members_; }
    const MaskFamily& family() const { return family_; }
    void set_family(MaskFamily family);
    const InputPipeline& pipeline() const { return pipe_; }
    InputPipeline& pipeline() { return pipe_; }
    std::vector<int> widths() const { return mask_widths(members_.front().params); }

    // Draws the episode's mask family (all-ones sets when dropout is off).
    void resample_family(Rng& rng, long episode_id);

    void set_probe(PathProbe* probe) { probe_ = probe; }

    int member_count() const override { return static_cast<int>(members_.size()); }
    int state_dim() const override { return state_dim_; }
    int action_dim() const override { return action_dim_; }
    std::vector<MaskSet> particle_masks(int count, Rng& rng) const override;
    StepPrediction predict(int member, const MaskSet& mask, const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& actions) const override;

    // Raw network head for one member and mask, on standardized inputs.
    BatchPrediction head(int member, const MaskSet& mask, const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& actions) const;

    // Mean head averaged over Q masks per member and over members. Q masks are
    // a fresh family subset (restrictive), fresh Bernoulli draws (mc) or the
    // all-ones mask (none). `mode` overrides the configured dropout mode.
    Eigen::MatrixXd predict_output(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions, Rng& rng,
                                   const DropoutMode* mode = nullptr) const;
    Eigen::VectorXd predict_mean(const Eigen::VectorXd& state, const Eigen::VectorXd& action, Rng& rng) const;

    // Mixture over members x family sets.
    PredictiveMoments predictive_moments(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;

    // Refreshes the normalizer from the full dataset, then trains every member
    // on its own random stream.
    LossTrace train(const Dataset& data, Rng& rng);
    LossTrace train(const Dataset& data, Rng& rng, int epochs);

    // One-step training on (x, y) pairs with absolute targets; x are "states"
    // of an action-free model.
    LossTrace train_regression(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Rng& rng, int epochs);

private:
    struct BatchMasks {
        std::vector<MaskSet> owned;
        std::vector<MaskPair> pairs;
    };
    BatchMasks batch_masks(Rng& rng) const;
    std::vector<std::size_t> member_indices(std::size_t n, Rng& rng) const;

    template <typename Step>
    LossTrace run_training(std::size_t n, Rng& rng, int epochs, Step&& step);

    EnsembleConfig cfg_;
    int state_dim_;
    int action_dim_;
    InputPipeline pipe_;
    std::vector<Member> members_;
    MaskFamily family_;
    PathProbe* probe_ = nullptr;
};

} // namespace dpets

#endif
