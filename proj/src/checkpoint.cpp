#include "dblf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dblf {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'L', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace

void save_checkpoint(const std::string& path, const NamedArrays& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, arr] : entries) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(arr->shape.size()));
        for (int d : arr->shape) put_u32(os, static_cast<std::uint32_t>(d));
        for (double v : arr->data) put_f64(os, v);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

NamedArrays load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("not a DBLF checkpoint: " + path);
    }
    const std::uint32_t version = get_u32(is);
    if (version != kVersion) {
        throw std::runtime_error("unsupported DBLF version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(is);
    NamedArrays out;
    out.reserve(count);
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t ndim = get_u32(is);
        std::vector<int> shape(ndim);
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        auto arr = DArray::zeros(shape);
        for (auto& v : arr->data) v = get_f64(is);
        if (!is) throw std::runtime_error("truncated DBLF file: " + path);
        out.emplace_back(std::move(name), std::move(arr));
    }
    return out;
}

ArrayPtr checkpoint_get(const NamedArrays& entries, const std::string& name) {
    for (const auto& [n, a] : entries) {
        if (n == name) return a;
    }
    throw std::runtime_error("checkpoint entry missing: " + name);
}

}  // namespace dblf
