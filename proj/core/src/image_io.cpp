#include "gptx/image_io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace gptx {

namespace {

constexpr int64_t kMaxExtent = 1 << 20;

// PNM token reader: whitespace separated, '#' starts a comment to end of line.
std::string next_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

}  // namespace

void write_ppm(const std::string& path, const Image& image) {
    if (image.channels != 3) throw std::invalid_argument("PPM writer expects 3 channels");
    if (image.height < 1 || image.width < 1) throw std::invalid_argument("empty image");
    for (float v : image.data) {
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("image values must lie in [0,1]");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> bytes(image.data.size());
    for (size_t i = 0; i < image.data.size(); ++i) {
        // round half up
        const double q = std::floor(static_cast<double>(image.data[i]) * 255.0 + 0.5);
        bytes[i] = static_cast<unsigned char>(std::min(255.0, std::max(0.0, q)));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    const std::string magic = next_token(in);
    if (magic != "P6") throw std::runtime_error("malformed PPM header (magic) in " + path);
    const std::string ws = next_token(in);
    const std::string hs = next_token(in);
    const std::string ms = next_token(in);
    if (ws.empty() || hs.empty() || ms.empty()) {
        throw std::runtime_error("malformed PPM header in " + path);
    }
    int64_t w, h, maxval;
    try {
        w = std::stoll(ws);
        h = std::stoll(hs);
        maxval = std::stoll(ms);
    } catch (const std::exception&) {
        throw std::runtime_error("malformed PPM header in " + path);
    }
    if (w < 1 || h < 1 || w > kMaxExtent || h > kMaxExtent) {
        throw std::runtime_error("PPM dimensions out of range in " + path);
    }
    if (maxval != 255) throw std::runtime_error("unsupported PPM maxval in " + path);

    Image img(h, w, 3);
    std::vector<unsigned char> bytes(static_cast<size_t>(h * w * 3));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw std::runtime_error("truncated PPM payload in " + path);
    }
    for (size_t i = 0; i < bytes.size(); ++i) {
        img.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
    return img;
}

Image tile_images(std::span<const Image> images, int64_t columns) {
    if (images.empty()) throw std::invalid_argument("no images to tile");
    if (columns < 1) throw std::invalid_argument("columns must be >= 1");
    const int64_t h = images[0].height, w = images[0].width, c = images[0].channels;
    for (const Image& img : images) {
        if (img.height != h || img.width != w || img.channels != c) {
            throw std::invalid_argument("tile_images: images differ in extent");
        }
    }
    const int64_t rows = (static_cast<int64_t>(images.size()) + columns - 1) / columns;
    Image out(rows * h, columns * w, c);
    for (size_t i = 0; i < images.size(); ++i) {
        const int64_t ty = (static_cast<int64_t>(i) / columns) * h;
        const int64_t tx = (static_cast<int64_t>(i) % columns) * w;
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                for (int64_t ch = 0; ch < c; ++ch) {
                    out.at(ty + y, tx + x, ch) = images[i].at(y, x, ch);
                }
            }
        }
    }
    return out;
}

}  // namespace gptx
