// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/detail/bytes.hpp"

namespace kvpack {

using Embedding = std::vector<float>;

inline constexpr std::uint32_t kEmbeddingDim = 64;
inline constexpr std::uint64_t kEmbeddingHashSeed = 0x9e3779b97f4a7c15ULL;

/// Lowercased alphanumeric runs; bytes >= 0x80 count as word characters.
inline std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u) || u >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// Signed feature hashing of the bag of words, L2-normalized. Bucket = h mod dim,
/// sign from bit 32 of h, h = FNV-1a 64 with basis kEmbeddingHashSeed.
/// Empty (or wordless) text maps to the zero vector.
inline Embedding embed_text(std::string_view text, std::uint32_t dim = kEmbeddingDim) {
    std::vector<double> acc(dim, 0.0);
    for (const auto& w : word_tokens(text)) {
        const std::uint64_t h = detail::fnv1a64(w, kEmbeddingHashSeed);
        acc[h % dim] += ((h >> 32) & 1U) ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    Embedding out(dim, 0.0f);
    if (norm == 0.0) return out;
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / norm);
    return out;
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

inline double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

/// 0 when either side is the zero vector.
inline double cosine(std::span<const float> a, std::span<const float> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

}  // namespace kvpack
