#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gptx/autodiff.hpp"
#include "gptx/prompt.hpp"
#include "gptx/transformer.hpp"
#include "gptx/vq.hpp"

namespace gptx {

struct TrainConfig {
    TuneMode mode = TuneMode::Prompt;
    double learning_rate = 1e-3;
    double pretrained_lr = -1.0;  // finetune: rate for pretrained tensors; <0 -> learning_rate
    int64_t batch_size = 32;
    int64_t epochs = 30;
    int64_t warmup_epochs = 0;
    double weight_decay = 0.0;
    uint64_t seed = 1;
    bool instance_conditioning = false;
    double instance_sample_prob = 0.5;

    void validate() const;
};

// Non-empty, duplicate-free subset of grid positions [0, H*W).
struct MaskSet {
    std::vector<int64_t> positions;
};

// Draw r ~ U(0,1) and mask ceil(cos(pi*r/2) * H*W) positions uniformly
// without replacement, clamped to at least one.
MaskSet sample_mask(int64_t h, int64_t w, std::mt19937_64& rng);

// Class id, or the instance id offset by n_classes with probability
// instance_sample_prob. Degenerate probabilities 0/1 consume no randomness.
int64_t sample_condition(int64_t class_label, std::optional<int64_t> instance_id,
                         int64_t n_classes, double instance_sample_prob, std::mt19937_64& rng);

// Teacher-forcing losses. Grid variants condition through the prompt
// generator; _cond variants accept a prebuilt [B,S,D] condition tensor.
ad::Var ar_loss(const TransformerModel& model, const PromptGenerator& gen,
                std::span<const TokenGrid> grids, std::span<const int64_t> condition_ids);
ad::Var nar_loss(const TransformerModel& model, const PromptGenerator& gen,
                 std::span<const TokenGrid> grids, std::span<const int64_t> condition_ids,
                 std::mt19937_64& rng);
ad::Var ar_loss_cond(const TransformerModel& model, const ad::Var& cond,
                     std::span<const int64_t> tokens, int64_t batch);
// Masks each sample with sample_mask; cross-entropy averaged over masked
// positions only.
ad::Var nar_loss_cond(const TransformerModel& model, const ad::Var& cond,
                      std::span<const int64_t> target_tokens, int64_t batch, std::mt19937_64& rng);

// Adam with decoupled weight decay and per-parameter learning-rate scales.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void add_param(const ad::Var& param, double lr_scale = 1.0, double weight_decay = 0.0);
    void step(double lr);
    void zero_grad();
    int64_t steps_taken() const { return t_; }

private:
    struct Slot {
        ad::Var param;
        double lr_scale;
        double weight_decay;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Cosine decay to zero over the post-warmup steps, linear warmup before.
double lr_at_step(double base_lr, int64_t step, int64_t total_steps, int64_t warmup_steps);

struct EpochLog {
    int64_t epoch;
    double loss;
    double lr;
};

struct TrainResult {
    std::vector<EpochLog> log;
    bool diverged = false;
    int64_t steps = 0;
    // One `epoch,loss,lr` line per epoch, '.' decimal separator.
    std::string metrics_text() const;
};

struct TrainSet {
    std::vector<TokenGrid> grids;
    std::vector<int64_t> labels;  // class per grid; instance id is the index
    int64_t n_classes = 0;
};

// Runs the optimization loop. gen == nullptr trains a source model from
// scratch conditioned on its class tokens (pretraining); otherwise the
// partition for cfg.mode is applied and prompts provide the conditioning.
// Frozen tensors are hash-checked every epoch; a non-finite loss aborts with
// parameters restored to the last finished epoch.
TrainResult train_model(TransformerModel& model, PromptGenerator* gen, const TrainSet& data,
                        const TrainConfig& cfg);

uint64_t hash_tensor(const Tensor& t);

}  // namespace gptx
