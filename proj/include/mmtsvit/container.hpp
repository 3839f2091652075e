#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "sits.hpp"

namespace mmtsvit {

inline constexpr std::string_view kContainerMagic = "MSIT";
inline constexpr std::uint32_t kContainerVersion = 1;

/// Serializes a co-registered set in the MSIT layout:
///
///   "MSIT" | u32 version | u32 M | u32 K
///   per modality: u8 id length, id bytes, u32 T, H, W, C, T x u16 day,
///                 T*H*W*C x f32 (row-major T, H, W, C)
///   u32 H | u32 W | H*W x u16 class index
///
/// Sample values are narrowed to float32.
inline std::string encode_container(const CoRegisteredSet& set) {
    set.validate();
    io::Writer w;
    w.put_bytes(kContainerMagic);
    w.put<std::uint32_t>(kContainerVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(set.samples.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(set.num_classes));
    for (const auto& s : set.samples) {
        if (s.modality_id.size() > 255) throw DataError("modality id longer than 255 bytes: '" + s.modality_id + "'");
        w.put<std::uint8_t>(static_cast<std::uint8_t>(s.modality_id.size()));
        w.put_bytes(s.modality_id);
        for (auto extent : s.x.shape()) {
            if (extent > std::numeric_limits<std::uint32_t>::max()) throw DataError("extent does not fit u32");
            w.put<std::uint32_t>(static_cast<std::uint32_t>(extent));
        }
        for (int d : s.dates) w.put<std::uint16_t>(static_cast<std::uint16_t>(d));
        for (double v : s.x.data()) w.put<float>(static_cast<float>(v));
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(set.labels.height));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(set.labels.width));
    for (auto c : set.labels.classes) w.put<std::uint16_t>(c);
    return w.take();
}

inline CoRegisteredSet decode_container(std::string_view bytes, const std::string& source = "MSIT container") {
    io::Reader r(bytes, source);
    r.expect_magic(kContainerMagic);
    const std::size_t version_at = r.offset();
    const auto version = r.get<std::uint32_t>("version");
    if (version != kContainerVersion) {
        r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kContainerVersion) + ")",
               version_at);
    }
    CoRegisteredSet set;
    const auto m = r.get<std::uint32_t>("modality count");
    set.num_classes = r.get<std::uint32_t>("class count");
    for (std::uint32_t j = 0; j < m; ++j) {
        SITSSample s;
        const auto len = r.get<std::uint8_t>("modality id length");
        s.modality_id = std::string(r.get_bytes(len, "modality id"));
        Shape shape(4);
        for (auto& e : shape) e = r.get<std::uint32_t>("series extent");
        const std::size_t n = numel_of(shape);
        // Guard the allocation below against corrupted extents.
        if (n > r.remaining() / sizeof(float)) r.fail("series extents " + shape_str(shape) + " exceed the file size", r.offset());
        for (std::size_t t = 0; t < shape[0]; ++t) s.dates.push_back(r.get<std::uint16_t>("acquisition date"));
        std::vector<double> values(n);
        for (auto& v : values) v = r.get<float>("series value");
        s.x = Tensor(shape, std::move(values));
        set.samples.push_back(std::move(s));
    }
    set.labels.height = r.get<std::uint32_t>("label height");
    set.labels.width = r.get<std::uint32_t>("label width");
    const std::size_t pixels = set.labels.height * set.labels.width;
    if (pixels > r.remaining() / sizeof(std::uint16_t)) r.fail("label extent exceeds the file size", r.offset());
    set.labels.classes.resize(pixels);
    for (auto& c : set.labels.classes) c = r.get<std::uint16_t>("label class");
    r.expect_end();
    try {
        set.validate();
    } catch (const DataError& e) {
        throw ParseError(source + ": " + e.what(), bytes.size());
    }
    return set;
}

inline void write_container(const CoRegisteredSet& set, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_container(set));
}

inline CoRegisteredSet read_container(const std::filesystem::path& path) {
    return decode_container(io::read_file(path), path.string());
}

}  // namespace mmtsvit
