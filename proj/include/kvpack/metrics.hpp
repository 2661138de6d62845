// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/tokenizer.hpp"

namespace kvpack {

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation
/// from each word, drop words that become empty.
inline std::vector<std::string> normalized_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        std::size_t b = 0, e = cur.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
        if (e > b) out.push_back(cur.substr(b, e - b));
        cur.clear();
    };
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isspace(u)) {
            flush();
        } else {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    flush();
    return out;
}

inline std::string normalize_answer(std::string_view text) {
    std::string out;
    for (const auto& w : normalized_words(text)) {
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

/// Normalized gold is a substring of normalized prediction. An empty gold never matches.
inline bool exact_match(std::string_view prediction, std::string_view gold) {
    const std::string g = normalize_answer(gold);
    if (g.empty()) return false;
    return normalize_answer(prediction).find(g) != std::string::npos;
}

struct F1Score {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline F1Score token_prf(std::string_view prediction, std::string_view gold) {
    const auto p = normalized_words(prediction);
    const auto g = normalized_words(gold);
    if (p.empty() && g.empty()) return {1.0, 1.0, 1.0};
    if (p.empty() || g.empty()) return {};
    std::map<std::string, int> counts;
    for (const auto& w : g) ++counts[w];
    int common = 0;
    for (const auto& w : p) {
        if (auto it = counts.find(w); it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return {};
    F1Score s;
    s.precision = static_cast<double>(common) / static_cast<double>(p.size());
    s.recall = static_cast<double>(common) / static_cast<double>(g.size());
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

inline double token_f1(std::string_view prediction, std::string_view gold) { return token_prf(prediction, gold).f1; }

/// Distinct 4-grams over total 4-grams; sequences shorter than 4 score 1.
inline double degeneracy_score(std::span<const TokenId> tokens) {
    if (tokens.size() < 4) return 1.0;
    std::set<std::array<TokenId, 4>> seen;
    const std::size_t total = tokens.size() - 3;
    for (std::size_t i = 0; i < total; ++i) seen.insert({tokens[i], tokens[i + 1], tokens[i + 2], tokens[i + 3]});
    return static_cast<double>(seen.size()) / static_cast<double>(total);
}

}  // namespace kvpack
