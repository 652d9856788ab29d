#include "trifuse/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>

#include "trifuse/common.hpp"

namespace trifuse {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, size_t n) {
    require(std::fwrite(p, 1, n, f) == n, "checkpoint: short write");
}

void write_u16(std::FILE* f, uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff)};
    write_bytes(f, b, 2);
}

void write_u32(std::FILE* f, uint32_t v) {
    const unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff)};
    write_bytes(f, b, 4);
}

void write_f32(std::FILE* f, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(f, bits);
}

void read_bytes(std::FILE* f, void* p, size_t n) {
    require(std::fread(p, 1, n, f) == n, "checkpoint: truncated file");
}

uint16_t read_u16(std::FILE* f) {
    unsigned char b[2];
    read_bytes(f, b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::FILE* f) {
    unsigned char b[4];
    read_bytes(f, b, 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

float read_f32(std::FILE* f) {
    const uint32_t bits = read_u32(f);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_container(const std::string& path, const ContainerEntries& entries) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    require(f != nullptr, "cannot open for writing: " + path);
    write_bytes(f.get(), "TRIF", 4);
    write_u32(f.get(), kContainerVersion);
    write_u32(f.get(), static_cast<uint32_t>(entries.size()));
    for (const auto& [name, e] : entries) {
        require(name.size() <= std::numeric_limits<uint16_t>::max(),
                "checkpoint: entry name too long");
        require(e.dims.size() <= 255, "checkpoint: rank too large");
        size_t expect = 1;
        for (uint32_t d : e.dims) expect *= d;
        require(expect == e.data.size(), "checkpoint: dims do not match payload for " + name);
        write_u16(f.get(), static_cast<uint16_t>(name.size()));
        write_bytes(f.get(), name.data(), name.size());
        const unsigned char rank = static_cast<unsigned char>(e.dims.size());
        write_bytes(f.get(), &rank, 1);
        for (uint32_t d : e.dims) write_u32(f.get(), d);
        for (float v : e.data) write_f32(f.get(), v);
    }
    require(std::fflush(f.get()) == 0, "checkpoint: flush failed for " + path);
}

ContainerEntries load_container(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    require(f != nullptr, "cannot open: " + path);
    char magic[4];
    read_bytes(f.get(), magic, 4);
    require(std::memcmp(magic, "TRIF", 4) == 0, "not a TRIF container: " + path);
    const uint32_t version = read_u32(f.get());
    require(version == kContainerVersion, "unsupported container version in " + path);
    const uint32_t count = read_u32(f.get());
    ContainerEntries out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = read_u16(f.get());
        std::string name(name_len, '\0');
        if (name_len > 0) read_bytes(f.get(), name.data(), name_len);
        unsigned char rank;
        read_bytes(f.get(), &rank, 1);
        ContainerEntry e;
        e.dims.resize(rank);
        size_t total = 1;
        for (int d = 0; d < rank; ++d) {
            e.dims[static_cast<size_t>(d)] = read_u32(f.get());
            total *= e.dims[static_cast<size_t>(d)];
            require(total <= (1u << 30), "checkpoint: entry too large in " + path);
        }
        e.data.resize(total);
        for (size_t j = 0; j < total; ++j) e.data[j] = read_f32(f.get());
        out.emplace_back(std::move(name), std::move(e));
    }
    char extra;
    require(std::fread(&extra, 1, 1, f.get()) == 0 && std::feof(f.get()),
            "checkpoint: trailing bytes after last entry in " + path);
    return out;
}

ContainerEntry string_entry(const std::string& s) {
    ContainerEntry e;
    e.dims = {static_cast<uint32_t>(s.size())};
    e.data.reserve(s.size());
    for (unsigned char c : s) e.data.push_back(static_cast<float>(c));
    return e;
}

std::string entry_string(const ContainerEntry& e) {
    std::string s;
    s.reserve(e.data.size());
    for (float v : e.data) {
        const int c = static_cast<int>(v);
        require(c >= 0 && c <= 255, "checkpoint: invalid string entry byte");
        s.push_back(static_cast<char>(c));
    }
    return s;
}

}  // namespace trifuse
