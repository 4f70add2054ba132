#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "dcl/error.hpp"

namespace dcl {

/// Little-endian writer used by the FMAT / KMNS / DCKP formats.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw Error("cannot write " + path.string());
    }

    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        bytes(b, 4);
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void close() {
        out_.close();
        if (!out_) throw Error("failed writing " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw DataError("cannot open " + path.string());
    }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) throw DataError(path_.string() + ": truncated file");
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
               (std::uint32_t{b[3]} << 24);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        std::string s(u32(), '\0');
        bytes(s.data(), s.size());
        return s;
    }
    void expect_magic(const char (&magic)[5]) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, magic, 4) != 0) {
            throw DataError(path_.string() + ": bad magic (expected \"" + std::string(magic) + "\")");
        }
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace dcl
