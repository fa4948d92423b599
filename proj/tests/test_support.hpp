#pragma once

#include <random>
#include <vector>

#include "gptx/autodiff.hpp"
#include "gptx/prompt.hpp"
#include "gptx/tensor.hpp"
#include "gptx/transformer.hpp"

namespace gptx::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, scale);
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = dist(rng);
    return t;
}

inline ModelConfig tiny_model_config(ModelKind kind, int64_t grid = 4, int64_t k = 8,
                                     int64_t layers = 2, int64_t dim = 32, int64_t heads = 2,
                                     int64_t source_classes = 3) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.layers = layers;
    cfg.embed_dim = dim;
    cfg.heads = heads;
    cfg.codebook_size = k;
    cfg.grid_h = grid;
    cfg.grid_w = grid;
    cfg.source_classes = source_classes;
    return cfg;
}

// Concatenate every generator parameter into one flat vector (finite-diff
// probes write modified copies back through scatter_params).
inline std::vector<float> gather_params(const std::vector<NamedParam>& params) {
    std::vector<float> flat;
    for (const NamedParam& p : params) {
        flat.insert(flat.end(), p.var.value().vec().begin(), p.var.value().vec().end());
    }
    return flat;
}

inline void scatter_params(std::vector<NamedParam>& params, std::span<const float> flat) {
    size_t off = 0;
    for (NamedParam& p : params) {
        const size_t n = static_cast<size_t>(p.var.value().size());
        Tensor t(p.var.value().shape(),
                 std::vector<float>(flat.begin() + off, flat.begin() + off + n));
        p.var.assign_value(t);
        off += n;
    }
}

inline std::vector<float> gather_grads(const std::vector<NamedParam>& params) {
    std::vector<float> flat;
    for (const NamedParam& p : params) {
        if (p.var.has_grad()) {
            flat.insert(flat.end(), p.var.grad().vec().begin(), p.var.grad().vec().end());
        } else {
            flat.insert(flat.end(), static_cast<size_t>(p.var.value().size()), 0.0f);
        }
    }
    return flat;
}

inline void zero_grads(std::vector<NamedParam>& params) {
    for (NamedParam& p : params) p.var.zero_grad();
}

}  // namespace gptx::test
