#pragma once

#include <cstdint>
#include <vector>

namespace gptx {

// Row-major H x W x C float image with values in [0,1].
struct Image {
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 0;
    std::vector<float> data;

    Image() = default;
    Image(int64_t h, int64_t w, int64_t c)
        : height(h), width(w), channels(c), data(static_cast<size_t>(h * w * c), 0.0f) {}

    float& at(int64_t y, int64_t x, int64_t c) {
        return data[static_cast<size_t>((y * width + x) * channels + c)];
    }
    float at(int64_t y, int64_t x, int64_t c) const {
        return data[static_cast<size_t>((y * width + x) * channels + c)];
    }
    int64_t size() const { return static_cast<int64_t>(data.size()); }
};

}  // namespace gptx
