#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gptx/autodiff.hpp"
#include "gptx/tensor.hpp"

namespace gptx {

enum class ModelKind { AR, NAR };

ModelKind parse_model_kind(std::string_view s);
std::string to_string(ModelKind kind);

struct ModelConfig {
    ModelKind kind = ModelKind::NAR;
    int64_t layers = 4;
    int64_t embed_dim = 64;
    int64_t heads = 4;
    int64_t mlp_ratio = 4;
    int64_t codebook_size = 64;  // K
    int64_t grid_h = 8;
    int64_t grid_w = 8;
    int64_t source_classes = 8;  // class-token vocabulary used during pretraining
    int64_t adapter_hidden = 0;  // 0 = no adapters attached

    int64_t positions() const { return grid_h * grid_w; }
    bool has_mask_token() const { return kind == ModelKind::NAR; }
    // NAR vocab: [0,K) codewords, K mask, then class tokens. AR omits the mask.
    int64_t mask_token_id() const;
    int64_t class_token_id(int64_t source_class) const;
    int64_t vocab_size() const;
    void validate() const;
};

enum class ParamGroup { Transformer, Adapter, Prompt };

struct NamedParam {
    std::string name;
    ad::Var var;
    ParamGroup group = ParamGroup::Transformer;
};

// Small AR (causal) / NAR (bidirectional) decoder over [condition ‖ visual]
// token sequences. The condition slot is a continuous S x D sequence: a class
// token embedding during pretraining, prompt tokens during transfer. Visual
// positional embeddings cover grid positions only and never shift with the
// condition length.
class TransformerModel {
public:
    TransformerModel(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Tape forward over the full sequence; returns logits [B, S+vis_len, V]
    // at every sequence row. `tokens` holds batch*vis_len ids row-major.
    // AR accepts any vis_len in [0, H*W]; NAR requires vis_len == H*W.
    ad::Var sequence_logits(const ad::Var& cond, std::span<const int64_t> tokens,
                            int64_t batch, int64_t vis_len) const;

    // Teacher-forcing logits for training: [B, H*W, V].
    // AR: row i predicts z_{i+1}; NAR: row i is the prediction at position i.
    ad::Var training_logits(const ad::Var& cond, std::span<const int64_t> tokens, int64_t batch) const;

    // Contract entry points (no gradients retained by caller).
    // ar_logits: prefix of generated tokens -> (prefix+1) x V next-token logits.
    Tensor ar_logits(std::span<const int64_t> prefix, const Tensor& prompt) const;
    // nar_logits: full grid with mask ids at unknown positions -> (H*W) x V.
    Tensor nar_logits(std::span<const int64_t> tokens_with_mask, const Tensor& prompt) const;

    // Bottleneck adapters after the attention and MLP sublayers (two per
    // layer); up-projection zero-initialized so attaching is output-neutral.
    void attach_adapters(int64_t hidden_units, uint64_t seed);
    bool has_adapters() const { return cfg_.adapter_hidden > 0; }
    int64_t adapter_param_count() const;

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    NamedParam* find(std::string_view name);

    // Incremental KV-cache evaluator for sequential AR decoding. Matches the
    // tape path bit-for-bit on shared prefixes.
    class ArStream {
    public:
        ArStream(const TransformerModel& model, const Tensor& prompt);
        // Logits [V] predicting the next visual token.
        const std::vector<float>& logits() const { return logits_; }
        // Feed the sampled token for grid position `pos` (0-based).
        void push(int64_t token_id, int64_t pos);

    private:
        void feed_row(std::vector<float> row);
        const TransformerModel& model_;
        std::vector<std::vector<float>> k_cache_, v_cache_;  // per layer, t*D floats
        std::vector<float> logits_;
        int64_t fed_ = 0;
    };

private:
    struct Layer {
        ad::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Var ln2_g, ln2_b, fc1, fc1_b, fc2, fc2_b;
        ad::Var ad1_down, ad1_down_b, ad1_up, ad1_up_b;
        ad::Var ad2_down, ad2_down_b, ad2_up, ad2_up_b;
    };

    ad::Var block(const ad::Var& x, const Layer& layer, const ad::Var* mask,
                  int64_t batch, int64_t seq) const;

    ModelConfig cfg_;
    ad::Var tok_embed_, pos_embed_, lnf_g_, lnf_b_, head_w_, head_b_;
    std::vector<Layer> layers_;
    std::vector<NamedParam> params_;

    friend class ArStream;
};

enum class TuneMode { Prompt, Adapter, Finetune, Scratch };

TuneMode parse_tune_mode(std::string_view s);
std::string to_string(TuneMode mode);

struct PartitionReport {
    int64_t trainable_count = 0;
    int64_t frozen_count = 0;
    std::vector<std::string> trainable_names;
    std::vector<std::string> frozen_names;
};

// Applies the frozen/trainable split for a transfer mode and reports it.
// prompt: only prompt-generator params train; adapter: adapters + prompt;
// finetune/scratch: everything trains.
PartitionReport param_partition(TransformerModel& model, std::span<NamedParam> prompt_params,
                                TuneMode mode);

}  // namespace gptx
