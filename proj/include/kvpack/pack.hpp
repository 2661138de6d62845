// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "kvpack/config.hpp"
#include "kvpack/detail/bytes.hpp"
#include "kvpack/embedding.hpp"
#include "kvpack/error.hpp"
#include "kvpack/kv_cache.hpp"

namespace kvpack {

struct PackMetadata {
    bool use_template = true;
    // Set by compose_naive: rows were concatenated without position correction.
    bool naive = false;
    // Facts per system message, in render order. Empty for a cache-free pack.
    std::vector<std::uint32_t> segments;

    friend bool operator==(const PackMetadata&, const PackMetadata&) = default;
};

struct KnowledgePack {
    ModelConfig config;
    KvCache cache;
    std::vector<std::string> facts;
    std::vector<Embedding> embeddings;
    std::string dialect;
    PackMetadata meta;

    const Fingerprint& fingerprint() const noexcept { return cache.fingerprint(); }
};

/*
 * Pack file layout (little-endian, version 1):
 *
 *   off  size  field
 *     0     4  magic "KVPK"
 *     4     2  format version (u16)
 *     6    16  model fingerprint, ASCII hex
 *    22    40  config echo: n_layers n_heads d_model d_head vocab_size max_position (u32),
 *              rope_theta (f64), weight_seed (u64)
 *    62    16  dialect id, NUL-padded
 *    78     1  flags: bit0 templated, bit1 naive composition, bit2 value shift present
 *    79     4  layer count
 *    83     4  T (rows per layer)
 *    87     4  position offset
 *    91     4  fact count
 *    95     4  embedding dim
 *    99     4  segment count
 *   103        payload:
 *              per layer: K[T*d_model] f32, V[T*d_model] f32, shift[T*d_model] f64 (if bit2)
 *              per fact: u32 length + bytes
 *              per fact: embedding[dim] f32
 *              per segment: u32 fact count
 */
inline constexpr char kPackMagic[4] = {'K', 'V', 'P', 'K'};
inline constexpr std::uint16_t kPackVersion = 1;
inline constexpr std::size_t kPackHeaderBytes = 103;

namespace detail {

inline constexpr std::uint8_t kFlagTemplated = 1U << 0;
inline constexpr std::uint8_t kFlagNaive = 1U << 1;
inline constexpr std::uint8_t kFlagShift = 1U << 2;

inline void check_magic(ByteReader& r, const char (&magic)[4], const char* what) {
    const std::string m = r.raw(4);
    if (std::memcmp(m.data(), magic, 4) != 0) {
        throw FormatError(FormatError::Kind::BadMagic, std::string("not a ") + what + " file");
    }
}

inline void check_version(ByteReader& r, std::uint16_t supported) {
    const auto v = r.u16();
    if (v != supported) {
        throw FormatError(FormatError::Kind::UnsupportedVersion,
                          "version " + std::to_string(v) + " (supported: " + std::to_string(supported) + ")");
    }
}

/// Reads fingerprint + config echo and checks they agree.
inline ModelConfig read_model_identity(ByteReader& r) {
    const std::string fp = r.raw(16);
    if (!Fingerprint::well_formed(fp)) throw FormatError(FormatError::Kind::Malformed, "fingerprint field");
    const ModelConfig c = ModelConfig::read_echo(r);
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("config echo: ") + e.what());
    }
    if (c.fingerprint().hex != fp) {
        throw FormatError(FormatError::Kind::Malformed, "fingerprint " + fp + " does not match config echo");
    }
    return c;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_pack(const KnowledgePack& p) {
    p.cache.check_invariants();
    if (p.embeddings.size() != p.facts.size()) throw ConfigError("embedding count must equal fact count");
    if (p.dialect.size() > 16) throw ConfigError("dialect id longer than 16 bytes");
    const std::uint32_t dim = p.embeddings.empty() ? 0 : static_cast<std::uint32_t>(p.embeddings.front().size());
    for (const auto& e : p.embeddings) {
        if (e.size() != dim) throw ConfigError("embeddings must share one dimension");
    }

    detail::ByteWriter w;
    w.raw(std::string_view(kPackMagic, 4));
    w.u16(kPackVersion);
    w.raw(p.cache.fingerprint().hex);
    p.config.write_echo(w);
    w.fixed(p.dialect, 16);
    std::uint8_t flags = 0;
    if (p.meta.use_template) flags |= detail::kFlagTemplated;
    if (p.meta.naive) flags |= detail::kFlagNaive;
    const bool shifted = p.cache.steered();
    if (shifted) flags |= detail::kFlagShift;
    w.u8(flags);
    w.u32(p.cache.n_layers());
    w.u32(static_cast<std::uint32_t>(p.cache.length()));
    w.u32(p.cache.position_offset());
    w.u32(static_cast<std::uint32_t>(p.facts.size()));
    w.u32(dim);
    w.u32(static_cast<std::uint32_t>(p.meta.segments.size()));

    const std::size_t n = p.cache.length() * p.cache.width();
    for (std::size_t l = 0; l < p.cache.n_layers(); ++l) {
        const auto& L = p.cache.layer(l);
        w.f32s(L.keys);
        w.f32s(L.values);
        if (shifted) {
            if (L.value_shift.empty()) {
                for (std::size_t i = 0; i < n; ++i) w.f64(0.0);
            } else {
                w.f64s(L.value_shift);
            }
        }
    }
    for (const auto& f : p.facts) w.str(f);
    for (const auto& e : p.embeddings) w.f32s(e);
    for (auto s : p.meta.segments) w.u32(s);
    return std::move(w).take();
}

inline KnowledgePack deserialize_pack(std::span<const std::uint8_t> bytes) {
    using Kind = FormatError::Kind;
    detail::ByteReader r(bytes);
    detail::check_magic(r, kPackMagic, "knowledge pack");
    detail::check_version(r, kPackVersion);
    KnowledgePack p;
    p.config = detail::read_model_identity(r);
    p.dialect = r.fixed(16);
    const std::uint8_t flags = r.u8();
    if (flags & ~(detail::kFlagTemplated | detail::kFlagNaive | detail::kFlagShift)) {
        throw FormatError(Kind::Malformed, "unknown flag bits");
    }
    p.meta.use_template = flags & detail::kFlagTemplated;
    p.meta.naive = flags & detail::kFlagNaive;
    const std::uint32_t layers = r.u32();
    const std::uint32_t T = r.u32();
    const std::uint32_t offset = r.u32();
    const std::uint32_t n_facts = r.u32();
    const std::uint32_t dim = r.u32();
    const std::uint32_t n_segments = r.u32();

    if (layers != p.config.n_layers) {
        throw FormatError(Kind::SizeMismatch, "layer count " + std::to_string(layers) + " vs config " +
                                                  std::to_string(p.config.n_layers));
    }
    if (static_cast<std::uint64_t>(T) + offset > p.config.max_position) {
        throw FormatError(Kind::SizeMismatch, "offset + T exceeds max_position");
    }

    p.cache = KvCache(p.config.fingerprint(), layers, p.config.n_heads, p.config.d_head, offset);
    const std::size_t n = static_cast<std::size_t>(T) * p.config.d_model;
    for (std::size_t l = 0; l < layers; ++l) {
        auto& L = p.cache.layer_mut(l);
        L.keys = r.f32s(n);
        L.values = r.f32s(n);
        if (flags & detail::kFlagShift) L.value_shift = r.f64s(n);
    }
    r.need_elems(n_facts, 4);
    p.facts.reserve(n_facts);
    for (std::uint32_t i = 0; i < n_facts; ++i) p.facts.push_back(r.str());
    for (std::uint32_t i = 0; i < n_facts; ++i) p.embeddings.push_back(r.f32s(dim));
    r.need_elems(n_segments, 4);
    for (std::uint32_t i = 0; i < n_segments; ++i) p.meta.segments.push_back(r.u32());
    r.expect_end();

    const std::uint64_t seg_total = std::accumulate(p.meta.segments.begin(), p.meta.segments.end(), std::uint64_t{0});
    if (seg_total != n_facts) {
        throw FormatError(Kind::SizeMismatch, "segments cover " + std::to_string(seg_total) + " facts, pack has " +
                                                  std::to_string(n_facts));
    }
    return p;
}

inline void save_pack(const KnowledgePack& p, const std::string& path) { detail::write_file(path, serialize_pack(p)); }

inline KnowledgePack load_pack(const std::string& path) { return deserialize_pack(detail::read_file(path)); }

}  // namespace kvpack
