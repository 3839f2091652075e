#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>

#include "errors.hpp"

namespace mmtsvit::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Append-only little-endian byte buffer.
class Writer {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        char raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        bytes_.append(raw, sizeof(T));
    }

    void put_bytes(std::string_view s) { bytes_.append(s); }

    std::size_t size() const { return bytes_.size(); }
    const std::string& bytes() const { return bytes_; }
    std::string take() { return std::move(bytes_); }

private:
    std::string bytes_;
};

/// Bounds-checked little-endian reader; every failure reports its offset.
class Reader {
public:
    Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get(const char* field) {
        need(sizeof(T), field);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string_view get_bytes(std::size_t n, const char* field) {
        need(n, field);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void expect_magic(std::string_view magic) {
        const std::size_t at = pos_;
        if (bytes_.size() - pos_ < magic.size() || bytes_.substr(pos_, magic.size()) != magic) {
            throw ParseError(what_ + ": bad magic, expected \"" + std::string(magic) + "\"", at);
        }
        pos_ += magic.size();
    }

    [[noreturn]] void fail(const std::string& msg, std::size_t at) const { throw ParseError(what_ + ": " + msg, at); }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void expect_end() const {
        if (pos_ != bytes_.size()) fail(std::to_string(remaining()) + " trailing bytes", pos_);
    }

private:
    void need(std::size_t n, const char* field) const {
        if (bytes_.size() - pos_ < n) {
            fail(std::string("truncated while reading ") + field + " (" + std::to_string(n) + " bytes needed, " +
                     std::to_string(bytes_.size() - pos_) + " left)",
                 pos_);
        }
    }

    std::string_view bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw DataError("cannot move '" + tmp.string() + "' into place: " + ec.message());
    }
}

}  // namespace mmtsvit::io
