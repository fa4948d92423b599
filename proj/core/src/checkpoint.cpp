#include "gptx/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace gptx {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace {

constexpr char kMagic[4] = {'G', 'P', 'T', 'X'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

struct Reader {
    std::ifstream in;
    std::string path;
    uint64_t offset = 0;

    void read(void* dst, size_t len, const char* what) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(len));
        if (in.gcount() != static_cast<std::streamsize>(len)) {
            throw std::runtime_error("truncated checkpoint " + path + " at byte " +
                                     std::to_string(offset) + " while reading " + what);
        }
        offset += len;
    }
    uint32_t u32(const char* what) {
        uint32_t v;
        read(&v, sizeof(v), what);
        return v;
    }
    uint8_t u8(const char* what) {
        uint8_t v;
        read(&v, sizeof(v), what);
        return v;
    }
    std::string str(const char* what) {
        const uint32_t len = u32(what);
        if (len > (1u << 20)) {
            throw std::runtime_error("implausible string length in " + path + " at byte " +
                                     std::to_string(offset));
        }
        std::string s(len, '\0');
        read(s.data(), len, what);
        return s;
    }
};

struct Writer {
    std::ofstream out;
    void write(const void* src, size_t len) { out.write(static_cast<const char*>(src), static_cast<std::streamsize>(len)); }
    void u32(uint32_t v) { write(&v, sizeof(v)); }
    void u8(uint8_t v) { write(&v, sizeof(v)); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        write(s.data(), s.size());
    }
};

}  // namespace

uint32_t crc32_bytes(const void* data, size_t len) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t c = 0xFFFFFFFFu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

const CheckpointTensor* Checkpoint::find(std::string_view name) const {
    for (const CheckpointTensor& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::string Checkpoint::meta(std::string_view key, std::string fallback) const {
    for (const auto& [k, v] : metadata) {
        if (k == key) return v;
    }
    return fallback;
}

int64_t Checkpoint::meta_int(std::string_view key, int64_t fallback) const {
    const std::string v = meta(key);
    if (v.empty()) return fallback;
    return std::stoll(v);
}

void Checkpoint::set_meta(std::string key, std::string value) {
    for (auto& [k, v] : metadata) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    metadata.emplace_back(std::move(key), std::move(value));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    {
        std::unordered_set<std::string> names;
        for (const CheckpointTensor& t : ckpt.tensors) {
            if (!names.insert(t.name).second) {
                throw std::invalid_argument("duplicate tensor name: " + t.name);
            }
            if (numel(t.shape) != static_cast<int64_t>(t.data.size())) {
                throw std::invalid_argument("tensor " + t.name + " data does not match its shape");
            }
        }
    }
    Writer w;
    w.out.open(path, std::ios::binary);
    if (!w.out) throw std::runtime_error("cannot open for writing: " + path);

    w.write(kMagic, sizeof(kMagic));
    w.u32(ckpt.version);
    w.u32(static_cast<uint32_t>(ckpt.tensors.size()));
    for (const CheckpointTensor& t : ckpt.tensors) {
        w.str(t.name);
        w.u8(kDtypeF32);
        w.u8(t.trainable ? 1 : 0);
        w.u8(static_cast<uint8_t>(t.shape.size()));
        for (int64_t d : t.shape) w.u32(static_cast<uint32_t>(d));
        const size_t bytes = t.data.size() * sizeof(float);
        w.u32(crc32_bytes(t.data.data(), bytes));
        w.write(t.data.data(), bytes);
    }
    w.u32(static_cast<uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
        w.str(k);
        w.str(v);
    }
    if (!w.out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r;
    r.path = path;
    r.in.open(path, std::ios::binary);
    if (!r.in) throw std::runtime_error("cannot open for reading: " + path);

    char magic[4];
    r.read(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("bad magic in " + path + " (not a GPTX checkpoint)");
    }
    Checkpoint ckpt;
    ckpt.version = r.u32("version");
    if (ckpt.version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(ckpt.version) +
                                 " in " + path);
    }
    const uint32_t n_tensors = r.u32("tensor count");
    std::unordered_set<std::string> names;
    for (uint32_t i = 0; i < n_tensors; ++i) {
        CheckpointTensor t;
        t.name = r.str("tensor name");
        if (!names.insert(t.name).second) {
            throw std::runtime_error("duplicate tensor name '" + t.name + "' in " + path);
        }
        const uint8_t dtype = r.u8("dtype");
        if (dtype != kDtypeF32) throw std::runtime_error("unsupported dtype in tensor " + t.name);
        t.trainable = r.u8("trainable flag") != 0;
        const uint8_t rank = r.u8("rank");
        int64_t count = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            const uint32_t extent = r.u32("dim");
            if (extent == 0 || extent > (1u << 28)) {
                throw std::runtime_error("implausible extent in tensor " + t.name);
            }
            t.shape.push_back(static_cast<int64_t>(extent));
            count *= extent;
        }
        const uint32_t stored_crc = r.u32("crc");
        t.data.resize(static_cast<size_t>(count));
        r.read(t.data.data(), t.data.size() * sizeof(float), ("payload of " + t.name).c_str());
        const uint32_t actual = crc32_bytes(t.data.data(), t.data.size() * sizeof(float));
        if (actual != stored_crc) {
            throw std::runtime_error("payload corrupt in tensor '" + t.name + "' of " + path);
        }
        ckpt.tensors.push_back(std::move(t));
    }
    const uint32_t n_meta = r.u32("metadata count");
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str("metadata key");
        std::string v = r.str("metadata value");
        ckpt.metadata.emplace_back(std::move(k), std::move(v));
    }
    return ckpt;
}

}  // namespace gptx
