#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gptx/image.hpp"

namespace gptx {

enum class ShapeKind { Circle, Square, Triangle, Stripes };

struct ClassRecipe {
    ShapeKind shape;
    std::array<float, 3> fg;
    std::array<float, 3> bg;
    double base_size;  // fraction of the image extent

    bool operator==(const ClassRecipe&) const = default;
};

// Deterministic recipe table; consecutive ids cycle through foreground colors
// fastest so any small id range mixes colors, shapes and sizes.
ClassRecipe class_recipe(int64_t recipe_index);

struct SyntheticDatasetSpec {
    int64_t n_classes = 8;
    int64_t images_per_class = 50;
    int64_t image_size = 32;
    int64_t channels = 3;
    double jitter = 0.25;  // size/position jitter fraction
    uint64_t seed = 7;
    int64_t class_offset = 0;  // recipe index of class 0 (held-out targets use an offset)
};

struct LabeledImage {
    Image image;
    int64_t class_label = 0;
    int64_t instance_id = 0;  // unique, assigned 0..N-1 in generation order
};

struct Dataset {
    std::vector<LabeledImage> items;
    int64_t n_classes = 0;
};

Dataset synth_dataset(const SyntheticDatasetSpec& spec);

// PPM corpus ingester: one subdirectory per class (sorted), .ppm files inside
// (sorted); labels and instance ids follow that order.
Dataset load_ppm_directory(const std::string& dir);

}  // namespace gptx
