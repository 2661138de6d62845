// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/config.hpp"
#include "kvpack/error.hpp"

namespace kvpack {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr std::string_view kEndOfText = "<|endoftext|>";

// Byte-level tokenizer: bytes are ids 0..255, registered special-token
// spellings take ids 256, 257, ... in registration order.
class Tokenizer {
public:
    Tokenizer() = default;

    explicit Tokenizer(std::vector<std::string> specials) {
        for (auto& s : specials) add_special(std::move(s));
    }

    TokenId add_special(std::string spelling) {
        if (spelling.empty()) throw TemplateError("empty special-token spelling");
        if (auto id = special_id(spelling)) return *id;
        specials_.push_back(std::move(spelling));
        by_length_.resize(specials_.size());
        for (std::size_t i = 0; i < specials_.size(); ++i) by_length_[i] = i;
        // Longest match wins; registration order breaks ties.
        std::stable_sort(by_length_.begin(), by_length_.end(), [&](std::size_t a, std::size_t b) {
            return specials_[a].size() > specials_[b].size();
        });
        return static_cast<TokenId>(kByteVocab + specials_.size() - 1);
    }

    TokenSequence tokenize(std::string_view text, bool template_specials) const {
        TokenSequence out;
        out.reserve(text.size());
        std::size_t i = 0;
        while (i < text.size()) {
            if (template_specials) {
                if (auto hit = match_special(text.substr(i))) {
                    out.push_back(static_cast<TokenId>(kByteVocab + *hit));
                    i += specials_[*hit].size();
                    continue;
                }
            }
            out.push_back(static_cast<unsigned char>(text[i]));
            ++i;
        }
        return out;
    }

    std::string detokenize(std::span<const TokenId> tokens) const {
        std::string out;
        for (TokenId t : tokens) {
            if (t < kByteVocab) {
                out.push_back(static_cast<char>(t));
            } else if (t - kByteVocab < specials_.size()) {
                out += specials_[t - kByteVocab];
            } else {
                out += "<|unk:" + std::to_string(t) + "|>";
            }
        }
        return out;
    }

    std::optional<TokenId> special_id(std::string_view spelling) const {
        for (std::size_t i = 0; i < specials_.size(); ++i) {
            if (specials_[i] == spelling) return static_cast<TokenId>(kByteVocab + i);
        }
        return std::nullopt;
    }

    bool is_special(TokenId t) const noexcept { return t >= kByteVocab && t - kByteVocab < specials_.size(); }

    std::string_view spelling(TokenId t) const {
        if (!is_special(t)) throw ConfigError("token " + std::to_string(t) + " is not a special token");
        return specials_[t - kByteVocab];
    }

    std::uint32_t vocab_size() const noexcept { return kByteVocab + static_cast<std::uint32_t>(specials_.size()); }
    const std::vector<std::string>& specials() const noexcept { return specials_; }

private:
    std::optional<std::size_t> match_special(std::string_view rest) const {
        for (std::size_t idx : by_length_) {
            if (rest.starts_with(specials_[idx])) return idx;
        }
        return std::nullopt;
    }

    std::vector<std::string> specials_;
    std::vector<std::size_t> by_length_;
};

}  // namespace kvpack
