#include "cfmlab/io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cfmlab::io {
namespace {

constexpr char kMagic[4] = {'C', 'F', 'M', 'W'};
constexpr uint32_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    std::ifstream in;
    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw std::runtime_error("cannot open file: " + path);
    }
    void bytes(void* dst, size_t n) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw std::runtime_error("truncated file: unexpected end of data");
    }
    uint16_t u16() {
        unsigned char b[2];
        bytes(b, 2);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
};

}  // namespace

void write_tensors(const std::string& path,
                   const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw std::runtime_error("tensor name too long");
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf.append(name);
        buf.push_back(static_cast<char>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) put_u32(buf, static_cast<uint32_t>(t.dim(i)));
        const size_t bytes = t.numel() * sizeof(float);
        const size_t off = buf.size();
        buf.resize(off + bytes);
        std::memcpy(buf.data() + off, t.data(), bytes);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> read_tensors(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bad magic: not a CFMW file");
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("version mismatch: expected 1, got " + std::to_string(version));
    const uint32_t count = r.u32();
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        unsigned char rank;
        r.bytes(&rank, 1);
        Shape shape(rank);
        for (unsigned j = 0; j < rank; ++j) {
            const uint32_t d = r.u32();
            if (d == 0 || d > (1u << 28)) throw std::runtime_error("corrupt dimension in file");
            shape[j] = static_cast<int>(d);
        }
        std::vector<float> data(shape_numel(shape));
        r.bytes(data.data(), data.size() * sizeof(float));
        out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace cfmlab::io
