#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "gptx/autodiff.hpp"
#include "gptx/transformer.hpp"

namespace gptx {

enum class PromptKind { Baseline, Factorized };

PromptKind parse_prompt_kind(std::string_view s);
std::string to_string(PromptKind kind);

struct PromptConfig {
    PromptKind kind = PromptKind::Factorized;
    int64_t prompt_len = 16;  // S
    int64_t conditions = 1;   // C: classes, plus instances indexed from the class count
    int64_t feature_dim = 64; // P
    int64_t token_dim = 64;   // D
    int64_t factors = 1;      // F, factorized only

    void validate() const;
};

// Closed-form weight-matrix parameter count: baseline P*(C*S+D), factorized
// P*(F*(C+S)+D). Dense bias, factor vector and layernorm affine excluded.
int64_t count_params(const PromptConfig& cfg);

// Quadratic marquee blend weight: min(((t-1)/(t_cutoff-1))^2, 1).
double marquee_weight(int64_t t, int64_t t_cutoff);

// Conditional prompt-token generator.
//   baseline:   table[C,S,P] -> dense P->D
//   factorized: dense(LayerNorm(sum_F factor ⊙ (pos[S,P,F] + cls[c][P,F])))
class PromptGenerator {
public:
    PromptGenerator(PromptConfig cfg, uint64_t seed);

    const PromptConfig& config() const { return cfg_; }

    ad::Var generate(int64_t condition) const;                       // [S, D]
    ad::Var generate_batch(std::span<const int64_t> conditions) const;  // [B, S, D]
    Tensor generate_tensor(int64_t condition) const;

    // Condition embedding used for analysis and marquee interpolation. The
    // factorized class-table row [P, F]; baseline generators carry no such
    // low-dimensional embedding and reject the call.
    Tensor representation(int64_t condition) const;

    // Prompt for decoding step t: condition embeddings of cond1/cond2 blended
    // with marquee_weight, then pushed through the rest of the pipeline. With
    // token_level=true the final S x D prompts are blended instead.
    Tensor marquee_prompt(int64_t cond1, int64_t cond2, int64_t t, int64_t t_cutoff,
                          bool token_level = false) const;

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    NamedParam* find(std::string_view name);

    // Every trainable value, biases and affine included (unlike count_params).
    int64_t total_param_count() const;

private:
    ad::Var forward_from_cls(const ad::Var& cls_pf) const;  // factorized tail
    ad::Var forward_from_row(const ad::Var& row_sp) const;  // baseline tail
    void check_condition(int64_t condition) const;

    PromptConfig cfg_;
    ad::Var class_table_, pos_table_, factor_, ln_g_, ln_b_;  // factorized
    ad::Var table_;                                           // baseline
    ad::Var out_w_, out_b_;
    std::vector<NamedParam> params_;
};

}  // namespace gptx
