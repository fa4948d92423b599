#pragma once

#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gptx/checkpoint.hpp"
#include "gptx/dataset.hpp"
#include "gptx/decoding.hpp"
#include "gptx/prompt.hpp"
#include "gptx/training.hpp"
#include "gptx/transformer.hpp"
#include "gptx/vq.hpp"

namespace gptx {

// Everything one run carries: tokenizer, transformer, optional prompt
// generator, and bookkeeping for the target dataset.
struct ModelBundle {
    std::unique_ptr<TransformerModel> model;
    std::unique_ptr<PromptGenerator> gen;  // null on pretraining checkpoints
    Codebook codebook;
    int64_t target_classes = 0;    // classes the generator conditions on
    int64_t target_instances = 0;  // instance conditions beyond the classes
    uint64_t seed = 0;
    std::string mode;  // "pretrain" or a transfer mode
};

Checkpoint bundle_to_checkpoint(const ModelBundle& bundle);
ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt);

// Prompt tensor for one condition id: generator output, or the source class
// token embedding on pretraining bundles.
Tensor condition_prompt(const ModelBundle& bundle, int64_t condition_id);

// Decodes one image per condition id; ordering fixed by sample index.
std::vector<Image> sample_images(const ModelBundle& bundle, std::span<const int64_t> condition_ids,
                                 int64_t steps, ScheduleShape shape, double temperature,
                                 int64_t top_k, uint64_t seed);

// Marquee-steered NAR decoding, one image per condition pair.
std::vector<Image> sample_images_marquee(const ModelBundle& bundle,
                                         std::span<const std::pair<int64_t, int64_t>> cond_pairs,
                                         int64_t steps, ScheduleShape shape, int64_t t_cutoff,
                                         bool token_level, double temperature, uint64_t seed);

namespace cli {

// Subcommands: pretrain, transfer, generate, eval, inspect.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cli

}  // namespace gptx
