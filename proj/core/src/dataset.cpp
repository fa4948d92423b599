#include "gptx/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <stdexcept>

#include "gptx/image_io.hpp"

namespace gptx {

namespace {

constexpr std::array<std::array<float, 3>, 8> kForeground = {{
    {1.0f, 0.15f, 0.15f},  // red
    {0.15f, 0.9f, 0.2f},   // green
    {0.95f, 0.95f, 0.2f},  // yellow
    {0.2f, 0.85f, 0.9f},   // cyan
    {0.95f, 0.95f, 0.95f}, // white
    {0.9f, 0.25f, 0.9f},   // magenta
    {1.0f, 0.6f, 0.1f},    // orange
    {0.25f, 0.35f, 1.0f},  // blue
}};

constexpr std::array<std::array<float, 3>, 4> kBackground = {{
    {0.05f, 0.05f, 0.08f},  // near black
    {0.92f, 0.92f, 0.9f},   // near white
    {0.45f, 0.45f, 0.48f},  // mid gray
    {0.08f, 0.1f, 0.3f},    // navy
}};

constexpr std::array<double, 3> kSizeTiers = {0.30, 0.44, 0.22};

struct DrawParams {
    double cx, cy, size;
};

void draw_shape(Image& img, const ClassRecipe& recipe, const DrawParams& p) {
    const int64_t n = img.width;
    auto put = [&](int64_t y, int64_t x, const std::array<float, 3>& rgb) {
        for (int64_t c = 0; c < img.channels; ++c) img.at(y, x, c) = rgb[static_cast<size_t>(c)];
    };
    for (int64_t y = 0; y < n; ++y) {
        for (int64_t x = 0; x < n; ++x) put(y, x, recipe.bg);
    }
    const double r = p.size * static_cast<double>(n) / 2.0;
    switch (recipe.shape) {
        case ShapeKind::Circle:
            for (int64_t y = 0; y < n; ++y) {
                for (int64_t x = 0; x < n; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - p.cx;
                    const double dy = static_cast<double>(y) + 0.5 - p.cy;
                    if (dx * dx + dy * dy <= r * r) put(y, x, recipe.fg);
                }
            }
            break;
        case ShapeKind::Square:
            for (int64_t y = 0; y < n; ++y) {
                for (int64_t x = 0; x < n; ++x) {
                    if (std::abs(static_cast<double>(x) + 0.5 - p.cx) <= r &&
                        std::abs(static_cast<double>(y) + 0.5 - p.cy) <= r) {
                        put(y, x, recipe.fg);
                    }
                }
            }
            break;
        case ShapeKind::Triangle: {
            // filled isosceles triangle: apex up
            const double x0 = p.cx, y0 = p.cy - r;
            const double x1 = p.cx - r, y1 = p.cy + r;
            const double x2 = p.cx + r, y2 = p.cy + r;
            auto edge = [](double ax, double ay, double bx, double by, double px, double py) {
                return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            };
            for (int64_t y = 0; y < n; ++y) {
                for (int64_t x = 0; x < n; ++x) {
                    const double px = static_cast<double>(x) + 0.5;
                    const double py = static_cast<double>(y) + 0.5;
                    const double e0 = edge(x0, y0, x1, y1, px, py);
                    const double e1 = edge(x1, y1, x2, y2, px, py);
                    const double e2 = edge(x2, y2, x0, y0, px, py);
                    if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)) {
                        put(y, x, recipe.fg);
                    }
                }
            }
            break;
        }
        case ShapeKind::Stripes: {
            const int64_t period = std::max<int64_t>(2, static_cast<int64_t>(std::lround(r)));
            const int64_t phase = static_cast<int64_t>(std::lround(p.cy)) % period;
            for (int64_t y = 0; y < n; ++y) {
                if (((y + phase) / (period / 2 > 0 ? period / 2 : 1)) % 2 == 0) {
                    for (int64_t x = 0; x < n; ++x) put(y, x, recipe.fg);
                }
            }
            break;
        }
    }
}

}  // namespace

ClassRecipe class_recipe(int64_t recipe_index) {
    if (recipe_index < 0) throw std::invalid_argument("recipe index must be >= 0");
    ClassRecipe r;
    r.shape = static_cast<ShapeKind>((recipe_index / 2) % 4);
    r.fg = kForeground[static_cast<size_t>(recipe_index % 8)];
    r.bg = kBackground[static_cast<size_t>((recipe_index / 32) % 4)];
    r.base_size = kSizeTiers[static_cast<size_t>((recipe_index / 8) % 3)];
    return r;
}

Dataset synth_dataset(const SyntheticDatasetSpec& spec) {
    if (spec.n_classes < 1 || spec.images_per_class < 1) {
        throw std::invalid_argument("dataset needs at least one class and one image per class");
    }
    if (spec.image_size < 8 || spec.channels < 1) throw std::invalid_argument("bad image geometry");
    if (spec.jitter < 0.0 || spec.jitter > 1.0) throw std::invalid_argument("jitter must lie in [0,1]");

    // Distinct classes must map to distinct recipes.
    {
        std::vector<ClassRecipe> recipes;
        for (int64_t c = 0; c < spec.n_classes; ++c) recipes.push_back(class_recipe(spec.class_offset + c));
        for (size_t i = 0; i < recipes.size(); ++i) {
            for (size_t j = i + 1; j < recipes.size(); ++j) {
                if (recipes[i] == recipes[j]) {
                    throw std::invalid_argument("class recipes collide; reduce class count or offset");
                }
            }
        }
    }

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    Dataset ds;
    ds.n_classes = spec.n_classes;
    int64_t instance = 0;
    for (int64_t c = 0; c < spec.n_classes; ++c) {
        const ClassRecipe recipe = class_recipe(spec.class_offset + c);
        for (int64_t i = 0; i < spec.images_per_class; ++i) {
            const double u_size = uni(rng);
            const double u_x = uni(rng);
            const double u_y = uni(rng);
            DrawParams p;
            p.size = recipe.base_size * (1.0 + 0.5 * spec.jitter * u_size);
            p.cx = static_cast<double>(spec.image_size) * (0.5 + 0.25 * spec.jitter * u_x);
            p.cy = static_cast<double>(spec.image_size) * (0.5 + 0.25 * spec.jitter * u_y);

            LabeledImage item;
            item.image = Image(spec.image_size, spec.image_size, spec.channels);
            draw_shape(item.image, recipe, p);
            item.class_label = c;
            item.instance_id = instance++;
            ds.items.push_back(std::move(item));
        }
    }
    return ds;
}

Dataset load_ppm_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir);

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::invalid_argument("no class subdirectories in " + dir);

    Dataset ds;
    ds.n_classes = static_cast<int64_t>(class_dirs.size());
    int64_t instance = 0;
    for (size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
            if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw std::invalid_argument("class directory has no .ppm files: " + class_dirs[c].string());
        }
        for (const fs::path& f : files) {
            LabeledImage item;
            item.image = read_ppm(f.string());
            item.class_label = static_cast<int64_t>(c);
            item.instance_id = instance++;
            ds.items.push_back(std::move(item));
        }
    }
    return ds;
}

}  // namespace gptx
