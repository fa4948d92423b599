#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gptx/image.hpp"

namespace gptx {

// K learned patch codewords. Immutable after fitting; encode/decode are pure.
struct Codebook {
    int64_t patch_h = 0;
    int64_t patch_w = 0;
    int64_t channels = 0;
    std::vector<float> codewords;  // [K, patch_h*patch_w*channels], values in [0,1]

    int64_t k() const { return patch_elems() == 0 ? 0 : static_cast<int64_t>(codewords.size()) / patch_elems(); }
    int64_t patch_elems() const { return patch_h * patch_w * channels; }
};

// H x W grid of codeword indices, flattened in raster (row-major) order.
struct TokenGrid {
    int64_t h = 0;
    int64_t w = 0;
    std::vector<int64_t> tokens;

    int64_t size() const { return h * w; }
    bool operator==(const TokenGrid&) const = default;
};

struct CodebookFitStats {
    std::vector<double> sse_per_iteration;
    double max_patch_mse = 0.0;  // max over training patches of per-element squared error
};

// k-means over raw image patches, k-means++ seeded. Exact-duplicate codewords
// are collapsed after fitting.
Codebook fit_codebook(std::span<const Image> images, int64_t k, int64_t patch_h, int64_t patch_w,
                      int iterations, uint64_t seed, CodebookFitStats* stats = nullptr);

// Nearest codeword per patch (squared Euclidean, ties -> lowest index).
TokenGrid encode(const Image& image, const Codebook& codebook);

// Paste codeword patches in raster order.
Image decode(const TokenGrid& grid, const Codebook& codebook);

}  // namespace gptx
