// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "kvpack/kvpack.hpp"

namespace kvpack::testing {

// Shared engine for the default desk-scale config.
inline const Engine& engine() {
    static const Engine e;
    return e;
}

inline std::string random_words(std::mt19937_64& rng, std::size_t n) {
    static const std::vector<std::string> kWords = {"red",   "river", "stone", "quiet", "seven", "lamp", "north",
                                                    "paper", "crane", "salt",  "ember", "oak",   "Vega", "tin"};
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + kWords[rng() % kWords.size()];
    return s;
}

inline std::vector<std::string> random_facts(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_words(rng, 3 + rng() % 5) + ".");
    return out;
}

inline TokenSequence concat(TokenSequence a, const TokenSequence& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

inline bool bit_equal(const KvCache& a, const KvCache& b) { return caches_equal(a, b, 0.0).equal; }

}  // namespace kvpack::testing
