// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>

#include "kvpack/detail/bytes.hpp"
#include "kvpack/error.hpp"

namespace kvpack {

/// 16 lowercase hex characters identifying a (config, seed) pair.
struct Fingerprint {
    std::string hex;

    friend bool operator==(const Fingerprint&, const Fingerprint&) = default;

    static bool well_formed(std::string_view s) {
        if (s.size() != 16) return false;
        for (char c : s) {
            if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
        }
        return true;
    }
};

inline constexpr std::uint32_t kByteVocab = 256;
// 256 bytes plus the seven specials registered by the two built-in dialects.
inline constexpr std::uint32_t kDefaultVocabSize = kByteVocab + 7;

struct ModelConfig {
    std::uint32_t n_layers = 4;
    std::uint32_t n_heads = 4;
    std::uint32_t d_model = 64;
    std::uint32_t d_head = 16;
    std::uint32_t vocab_size = kDefaultVocabSize;
    std::uint32_t max_position = 2048;
    double rope_theta = 10000.0;
    std::uint64_t weight_seed = 0x6b7670616b2d3031ULL;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

    std::uint32_t ffn_dim() const noexcept { return 4 * d_model; }

    void validate() const {
        if (n_layers == 0 || n_heads == 0 || d_head == 0) throw ConfigError("n_layers, n_heads, d_head must be > 0");
        if (d_model != n_heads * d_head) {
            throw ConfigError("d_model (" + std::to_string(d_model) + ") must equal n_heads * d_head (" +
                              std::to_string(n_heads * d_head) + ")");
        }
        if (d_head % 2 != 0) throw ConfigError("d_head must be even for rotary embedding");
        if (vocab_size <= kByteVocab) throw ConfigError("vocab_size must exceed 256");
        if (max_position == 0) throw ConfigError("max_position must be > 0");
        if (!(rope_theta > 0.0)) throw ConfigError("rope_theta must be positive");
    }

    /// The config echo as stored in every file header (40 bytes).
    void write_echo(detail::ByteWriter& w) const {
        w.u32(n_layers);
        w.u32(n_heads);
        w.u32(d_model);
        w.u32(d_head);
        w.u32(vocab_size);
        w.u32(max_position);
        w.f64(rope_theta);
        w.u64(weight_seed);
    }

    static ModelConfig read_echo(detail::ByteReader& r) {
        ModelConfig c;
        c.n_layers = r.u32();
        c.n_heads = r.u32();
        c.d_model = r.u32();
        c.d_head = r.u32();
        c.vocab_size = r.u32();
        c.max_position = r.u32();
        c.rope_theta = r.f64();
        c.weight_seed = r.u64();
        return c;
    }

    Fingerprint fingerprint() const {
        detail::ByteWriter w;
        write_echo(w);
        return {detail::hex16(detail::fnv1a64(w.bytes()))};
    }
};

inline constexpr std::size_t kConfigEchoBytes = 40;

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError("bad value for '" + std::string(key) + "': '" + std::string(v) + "'");
    }
    return out;
}

}  // namespace detail

/// Applies one `key = value` setting. Returns false for keys that are not model fields.
inline bool set_config_field(ModelConfig& c, std::string_view key, std::string_view value) {
    using detail::parse_number;
    if (key == "n_layers") c.n_layers = parse_number<std::uint32_t>(key, value);
    else if (key == "n_heads") c.n_heads = parse_number<std::uint32_t>(key, value);
    else if (key == "d_model") c.d_model = parse_number<std::uint32_t>(key, value);
    else if (key == "d_head") c.d_head = parse_number<std::uint32_t>(key, value);
    else if (key == "vocab_size") c.vocab_size = parse_number<std::uint32_t>(key, value);
    else if (key == "max_position") c.max_position = parse_number<std::uint32_t>(key, value);
    else if (key == "rope_theta") c.rope_theta = parse_number<double>(key, value);
    else if (key == "weight_seed" || key == "seed") c.weight_seed = parse_number<std::uint64_t>(key, value);
    else return false;
    return true;
}

}  // namespace kvpack
