#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "gptx/prompt.hpp"
#include "gptx/transformer.hpp"
#include "gptx/vq.hpp"

namespace gptx {

enum class ScheduleShape { Cosine, Uniform };

ScheduleShape parse_schedule_shape(std::string_view s);

// Per-step token counts n_1..n_T with sum H*W and every n_t >= 1.
struct DecodeSchedule {
    int64_t steps = 0;
    std::vector<int64_t> tokens_per_step;

    int64_t total() const;
    void validate(int64_t hw) const;
};

// cosine: counts follow the decrements of H*W*cos(pi*t/(2T)) under
// largest-remainder rounding; uniform: as equal as possible, rounded up late.
DecodeSchedule make_schedule(int64_t steps, int64_t h, int64_t w, ScheduleShape shape);

// Maps a 1-based decoding step to the S x D prompt used at that step.
using PromptSource = std::function<Tensor(int64_t step)>;

PromptSource constant_prompt(Tensor prompt);

struct MarqueeSpec {
    int64_t cond1 = 0;
    int64_t cond2 = 0;
    int64_t t_cutoff = 2;
    bool token_level = false;
};

PromptSource marquee_source(const PromptGenerator& gen, const MarqueeSpec& spec);

struct NarDecodeResult {
    TokenGrid grid;
    std::vector<int64_t> finalized_step;   // 1-based step at which each position froze
    std::vector<int64_t> per_step_counts;  // tokens finalized per step
    std::vector<std::vector<int64_t>> step_grids;  // post-step snapshots when recorded
};

// Scheduled parallel decoding: every still-masked position samples a fresh
// token each step; the n_t most confident samples (raw model probability,
// ties -> lower raster index) are kept and never revisited.
// temperature == 0 selects the argmax instead of sampling.
NarDecodeResult decode_nar(const TransformerModel& model, const PromptSource& prompt_source,
                           const DecodeSchedule& schedule, std::mt19937_64& rng,
                           double temperature = 1.0, bool record_steps = false);

// Raster-order sequential sampling. top_k > 0 truncates the categorical to
// the top_k visual logits; temperature == 0 selects the argmax.
TokenGrid decode_ar(const TransformerModel& model, const Tensor& prompt, std::mt19937_64& rng,
                    double temperature = 1.0, int64_t top_k = 0);

}  // namespace gptx
