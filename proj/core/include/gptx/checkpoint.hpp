#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gptx/tensor.hpp"

namespace gptx {

// Binary container: "GPTX" magic, u32 version, per-tensor CRC-protected
// float32 payloads, then an ordered key=value metadata block (config
// snapshot, frozen/trainable tags, RNG seed). Round-trips byte for byte.
struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
    bool trainable = true;
};

struct Checkpoint {
    uint32_t version = 1;
    std::vector<CheckpointTensor> tensors;
    std::vector<std::pair<std::string, std::string>> metadata;

    const CheckpointTensor* find(std::string_view name) const;
    std::string meta(std::string_view key, std::string fallback = "") const;
    int64_t meta_int(std::string_view key, int64_t fallback) const;
    void set_meta(std::string key, std::string value);
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

uint32_t crc32_bytes(const void* data, size_t len);

}  // namespace gptx
