#include "gptx/vq.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "gptx/kmeans.hpp"

namespace gptx {

namespace {

void check_geometry(const Image& img, int64_t ph, int64_t pw, int64_t channels) {
    if (img.height % ph != 0 || img.width % pw != 0) {
        throw std::invalid_argument("image extents " + std::to_string(img.height) + "x" +
                                    std::to_string(img.width) + " not divisible by patch " +
                                    std::to_string(ph) + "x" + std::to_string(pw));
    }
    if (img.channels != channels) {
        throw std::invalid_argument("channel count mismatch");
    }
}

void copy_patch(const Image& img, int64_t py, int64_t px, int64_t ph, int64_t pw, float* out) {
    int64_t i = 0;
    for (int64_t y = 0; y < ph; ++y) {
        for (int64_t x = 0; x < pw; ++x) {
            for (int64_t c = 0; c < img.channels; ++c) {
                out[i++] = img.at(py * ph + y, px * pw + x, c);
            }
        }
    }
}

}  // namespace

Codebook fit_codebook(std::span<const Image> images, int64_t k, int64_t patch_h, int64_t patch_w,
                      int iterations, uint64_t seed, CodebookFitStats* stats) {
    if (images.empty()) throw std::invalid_argument("fit_codebook: no images");
    if (k < 1) throw std::invalid_argument("fit_codebook: k must be >= 1");
    if (iterations < 1) throw std::invalid_argument("fit_codebook: iterations must be >= 1");

    const int64_t channels = images[0].channels;
    const int64_t dim = patch_h * patch_w * channels;
    int64_t n_patches = 0;
    for (const Image& img : images) {
        check_geometry(img, patch_h, patch_w, channels);
        n_patches += (img.height / patch_h) * (img.width / patch_w);
    }

    std::vector<float> patches(static_cast<size_t>(n_patches * dim));
    int64_t p = 0;
    for (const Image& img : images) {
        const int64_t gy = img.height / patch_h;
        const int64_t gx = img.width / patch_w;
        for (int64_t y = 0; y < gy; ++y) {
            for (int64_t x = 0; x < gx; ++x) {
                copy_patch(img, y, x, patch_h, patch_w, patches.data() + p * dim);
                ++p;
            }
        }
    }

    // K must not exceed the number of distinct patches.
    {
        std::unordered_set<std::string> distinct;
        for (int64_t i = 0; i < n_patches && static_cast<int64_t>(distinct.size()) < k; ++i) {
            distinct.emplace(reinterpret_cast<const char*>(patches.data() + i * dim),
                             static_cast<size_t>(dim) * sizeof(float));
        }
        if (static_cast<int64_t>(distinct.size()) < k) {
            throw std::invalid_argument("fit_codebook: k exceeds distinct-patch count");
        }
    }

    KMeansResult km = kmeans(patches, n_patches, dim, k, seed, iterations);

    Codebook cb;
    cb.patch_h = patch_h;
    cb.patch_w = patch_w;
    cb.channels = channels;
    cb.codewords = std::move(km.centroids);
    for (float& v : cb.codewords) v = std::clamp(v, 0.0f, 1.0f);

    // Collapse exact-duplicate codewords, keeping first occurrences.
    {
        std::vector<float> unique;
        std::unordered_set<std::string> seen;
        for (int64_t c = 0; c < k; ++c) {
            std::string key(reinterpret_cast<const char*>(cb.codewords.data() + c * dim),
                            static_cast<size_t>(dim) * sizeof(float));
            if (seen.insert(std::move(key)).second) {
                unique.insert(unique.end(), cb.codewords.begin() + c * dim,
                              cb.codewords.begin() + (c + 1) * dim);
            }
        }
        cb.codewords = std::move(unique);
    }

    if (stats) {
        stats->sse_per_iteration = km.sse_per_iter;
        stats->max_patch_mse = 0.0;
        const int64_t kk = cb.k();
        for (int64_t i = 0; i < n_patches; ++i) {
            const float* pt = patches.data() + i * dim;
            double best = -1.0;
            for (int64_t c = 0; c < kk; ++c) {
                const float* cw = cb.codewords.data() + c * dim;
                double d = 0.0;
                for (int64_t j = 0; j < dim; ++j) {
                    const double diff = static_cast<double>(pt[j]) - static_cast<double>(cw[j]);
                    d += diff * diff;
                }
                if (best < 0.0 || d < best) best = d;
            }
            stats->max_patch_mse = std::max(stats->max_patch_mse, best / static_cast<double>(dim));
        }
    }
    return cb;
}

TokenGrid encode(const Image& image, const Codebook& cb) {
    check_geometry(image, cb.patch_h, cb.patch_w, cb.channels);
    const int64_t dim = cb.patch_elems();
    const int64_t k = cb.k();
    TokenGrid grid;
    grid.h = image.height / cb.patch_h;
    grid.w = image.width / cb.patch_w;
    grid.tokens.resize(static_cast<size_t>(grid.size()));
    std::vector<float> patch(static_cast<size_t>(dim));
    for (int64_t y = 0; y < grid.h; ++y) {
        for (int64_t x = 0; x < grid.w; ++x) {
            copy_patch(image, y, x, cb.patch_h, cb.patch_w, patch.data());
            grid.tokens[static_cast<size_t>(y * grid.w + x)] =
                nearest_centroid(patch, cb.codewords, k, dim);
        }
    }
    return grid;
}

Image decode(const TokenGrid& grid, const Codebook& cb) {
    const int64_t k = cb.k();
    for (int64_t t : grid.tokens) {
        if (t < 0 || t >= k) throw std::out_of_range("decode: token " + std::to_string(t) + " out of range");
    }
    if (static_cast<int64_t>(grid.tokens.size()) != grid.size()) {
        throw std::invalid_argument("decode: token count does not match grid extents");
    }
    Image img(grid.h * cb.patch_h, grid.w * cb.patch_w, cb.channels);
    for (int64_t gy = 0; gy < grid.h; ++gy) {
        for (int64_t gx = 0; gx < grid.w; ++gx) {
            const float* cw = cb.codewords.data() + grid.tokens[static_cast<size_t>(gy * grid.w + gx)] * cb.patch_elems();
            int64_t i = 0;
            for (int64_t y = 0; y < cb.patch_h; ++y) {
                for (int64_t x = 0; x < cb.patch_w; ++x) {
                    for (int64_t c = 0; c < cb.channels; ++c) {
                        img.at(gy * cb.patch_h + y, gx * cb.patch_w + x, c) = cw[i++];
                    }
                }
            }
        }
    }
    return img;
}

}  // namespace gptx
