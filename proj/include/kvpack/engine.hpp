// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>

#include "kvpack/chat_template.hpp"
#include "kvpack/model.hpp"
#include "kvpack/tokenizer.hpp"

namespace kvpack {

/// A model together with the dialects (and therefore the tokenizer) it is
/// driven with. Immutable after construction; safe for concurrent reads.
class Engine {
public:
    explicit Engine(ModelConfig config = {}, TemplateSet templates = TemplateSet::builtin())
        : model_(config), templates_(std::move(templates)) {
        if (model_.config().vocab_size < templates_.tokenizer().vocab_size()) {
            throw ConfigError("vocab_size " + std::to_string(model_.config().vocab_size) + " < " +
                              std::to_string(templates_.tokenizer().vocab_size()) +
                              " (256 bytes + registered special tokens)");
        }
    }

    const Model& model() const noexcept { return model_; }
    const ModelConfig& config() const noexcept { return model_.config(); }
    const Fingerprint& fingerprint() const noexcept { return model_.fingerprint(); }
    const TemplateSet& templates() const noexcept { return templates_; }
    const Tokenizer& tokenizer() const noexcept { return templates_.tokenizer(); }
    const ChatTemplate& dialect(std::string_view id) const { return templates_.get(id); }

    TokenSequence tokenize(std::string_view text, bool template_specials = true) const {
        return tokenizer().tokenize(text, template_specials);
    }
    std::string detokenize(std::span<const TokenId> tokens) const { return tokenizer().detokenize(tokens); }

    TokenId end_of_text() const { return *tokenizer().special_id(kEndOfText); }

    TokenSequence generate(std::span<const TokenId> prompt, const KvCache& past, std::size_t max_new) const {
        return model_.generate_greedy(prompt, past, max_new, end_of_text());
    }
    TokenSequence generate(std::span<const TokenId> prompt, std::size_t max_new) const {
        return generate(prompt, model_.empty_cache(), max_new);
    }

private:
    Model model_;
    TemplateSet templates_;
};

}  // namespace kvpack
