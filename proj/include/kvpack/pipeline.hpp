// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/chat_template.hpp"
#include "kvpack/embedding.hpp"
#include "kvpack/engine.hpp"
#include "kvpack/pack.hpp"

namespace kvpack {

struct BuildRequest {
    std::vector<std::string> facts;
    std::string dialect = "chatml";
    // false builds from raw concatenated text with no special tokens (the no-template ablation).
    bool use_template = true;
};

inline constexpr std::string_view kFactSeparator = " ";

inline std::string join_facts(std::span<const std::string> facts, std::string_view sep = kFactSeparator) {
    std::string out;
    for (std::size_t i = 0; i < facts.size(); ++i) {
        if (i) out += sep;
        out += facts[i];
    }
    return out;
}

/// Prompt-side token counts. KV tokens are what the read phase actually feeds;
/// RAG tokens are what the equivalent single-pass prompt would have cost.
struct TokenAccounting {
    std::size_t kv_prompt_tokens = 0;   // user turn incl. generation prompt
    std::size_t rag_prompt_tokens = 0;  // pack prefix + user turn
    std::size_t pack_tokens = 0;        // rows in the cache

    std::size_t kv_tokens_without_question() const noexcept { return 0; }
    std::size_t rag_tokens_without_question() const noexcept { return rag_prompt_tokens - kv_prompt_tokens; }
};

struct QueryResult {
    TokenSequence tokens;
    std::string answer;
    TokenAccounting accounting;
};

/// The single-pass conversation a pack stands in for, split at the user turn.
struct PromptSplit {
    std::string prefix;  // what the pack's cache covers
    std::string suffix;  // user turn + generation prompt
    bool prefix_specials = true;
};

namespace detail {

inline std::vector<std::string> segment_texts(const KnowledgePack& p) {
    std::vector<std::string> out;
    std::size_t at = 0;
    for (auto n : p.meta.segments) {
        out.push_back(join_facts(std::span(p.facts).subspan(at, n)));
        at += n;
    }
    return out;
}

inline std::vector<Message> system_turns(std::span<const std::string> groups) {
    std::vector<Message> msgs;
    for (const auto& g : groups) msgs.push_back({"system", g});
    return msgs;
}

// Renders every system turn plus the user turn in one call and returns the
// byte offsets where each system turn and the user turn begin.
inline RenderedConversation render_with_user(const ChatTemplate& t, std::span<const std::string> groups,
                                             std::string_view question) {
    auto msgs = system_turns(groups);
    msgs.push_back({"user", std::string(question)});
    return render_conversation(msgs, t, {.single_pass = true, .add_generation_prompt = true});
}

}  // namespace detail

/// Single-pass rendering for a pack's fact groups and a question, split at the
/// user-turn boundary.
inline PromptSplit split_prompt(const Engine& engine, const KnowledgePack& pack, std::string_view question) {
    const ChatTemplate& t = engine.dialect(pack.dialect);
    PromptSplit out;
    if (!pack.meta.use_template) {
        out.prefix = join_facts(pack.facts);
        out.prefix_specials = false;
        const Message user{"user", std::string(question)};
        out.suffix = render_conversation(std::span(&user, 1), t, {.single_pass = true, .add_generation_prompt = true}).text;
        return out;
    }
    const auto groups = detail::segment_texts(pack);
    const auto r = detail::render_with_user(t, groups, question);
    const std::size_t boundary = r.spans.back().begin;
    out.prefix = r.text.substr(0, boundary);
    out.suffix = r.text.substr(boundary);
    return out;
}

inline TokenSequence prefix_tokens(const Engine& engine, const PromptSplit& s) {
    return engine.tokenize(s.prefix, s.prefix_specials);
}

namespace detail {

inline void check_engine(const Engine& engine, const KnowledgePack& p) {
    if (p.fingerprint() != engine.fingerprint()) {
        throw FingerprintMismatch("pack built for model " + p.fingerprint().hex + ", engine is " +
                                  engine.fingerprint().hex);
    }
}

inline void check_request(const KnowledgePack& base, const BuildRequest& req) {
    if (req.dialect != base.dialect) {
        throw ConfigError("request dialect '" + req.dialect + "' differs from pack dialect '" + base.dialect + "'");
    }
    if (req.use_template != base.meta.use_template) throw ConfigError("cannot mix templated and raw segments");
}

}  // namespace detail

/// A pack with no cache rows and no facts: querying it is the no-knowledge baseline.
inline KnowledgePack empty_pack(const Engine& engine, std::string_view dialect, bool use_template = true) {
    engine.dialect(dialect);
    KnowledgePack p;
    p.config = engine.config();
    p.cache = engine.model().empty_cache();
    p.dialect = std::string(dialect);
    p.meta.use_template = use_template;
    return p;
}

/// Appends the given fact groups to `base` as new system turns, running them
/// with base's cache as prefix so their positions continue from |base|.
/// Requests without facts are skipped.
inline KnowledgePack compose_sequential(const Engine& engine, const KnowledgePack& base,
                                        std::span<const BuildRequest> requests) {
    detail::check_engine(engine, base);
    std::vector<const BuildRequest*> parts;
    for (const auto& r : requests) {
        detail::check_request(base, r);
        if (!r.facts.empty()) parts.push_back(&r);
    }
    if (parts.empty()) return base;

    std::string text;
    bool specials = true;
    if (base.meta.use_template) {
        const ChatTemplate& t = engine.dialect(base.dialect);
        auto groups = detail::segment_texts(base);
        const std::size_t first_new = groups.size();
        for (const auto* r : parts) groups.push_back(join_facts(r->facts));
        const auto rendered = detail::render_with_user(t, groups, "");
        const std::size_t begin = first_new == 0 ? 0 : rendered.spans[first_new].begin;
        const std::size_t end = rendered.spans.back().begin;
        if (!base.meta.naive && first_new > 0 &&
            engine.tokenize(rendered.text.substr(0, begin)).size() != base.cache.length()) {
            throw RenderingMismatch("base pack cache does not cover its own rendered segments");
        }
        text = rendered.text.substr(begin, end - begin);
    } else {
        specials = false;
        for (const auto* r : parts) {
            if (!base.facts.empty() || !text.empty()) text += kFactSeparator;
            text += join_facts(r->facts);
        }
    }

    const TokenSequence tokens = engine.tokenize(text, specials);
    KnowledgePack out = base;
    out.cache = engine.model().forward(tokens, base.cache).cache;
    for (const auto* r : parts) {
        for (const auto& f : r->facts) {
            out.facts.push_back(f);
            out.embeddings.push_back(embed_text(f));
        }
        if (base.meta.use_template) {
            out.meta.segments.push_back(static_cast<std::uint32_t>(r->facts.size()));
        }
    }
    if (!base.meta.use_template) out.meta.segments = {static_cast<std::uint32_t>(out.facts.size())};
    return out;
}

inline KnowledgePack compose_sequential(const Engine& engine, const KnowledgePack& base, const BuildRequest& request) {
    return compose_sequential(engine, base, std::span(&request, 1));
}

/// Write phase. With use_template, facts are joined with a single space into one
/// system turn; the cache covers everything the single-pass prompt places before
/// the user turn. Without it, the raw joined text is cached with no specials.
inline KnowledgePack build_pack(const Engine& engine, const BuildRequest& req) {
    KnowledgePack base = empty_pack(engine, req.dialect, req.use_template);
    if (req.use_template && req.facts.empty()) {
        // Frame-only pack: one system turn with empty content.
        const ChatTemplate& t = engine.dialect(req.dialect);
        const std::string none;
        const auto rendered = detail::render_with_user(t, std::span(&none, 1), "");
        const TokenSequence tokens = engine.tokenize(rendered.text.substr(0, rendered.spans.back().begin));
        base.cache = engine.model().forward(tokens).cache;
        base.meta.segments = {0};
        return base;
    }
    return compose_sequential(engine, base, req);
}

/// Multi-segment write phase: one system turn per request, all in one forward pass.
inline KnowledgePack build_pack(const Engine& engine, std::span<const BuildRequest> requests) {
    if (requests.empty()) throw ConfigError("build_pack needs at least one request");
    return compose_sequential(engine, empty_pack(engine, requests.front().dialect, requests.front().use_template),
                              requests);
}

/// Read phase: feeds only the user turn, with the pack's cache as prefix.
inline QueryResult query_with_pack(const Engine& engine, const KnowledgePack& pack, std::string_view question,
                                   std::size_t max_new) {
    detail::check_engine(engine, pack);
    const PromptSplit split = split_prompt(engine, pack, question);
    const std::size_t prefix_len = prefix_tokens(engine, split).size();
    if (!pack.meta.naive && prefix_len != pack.cache.length()) {
        throw RenderingMismatch("pack cache has " + std::to_string(pack.cache.length()) +
                                " rows but its rendered prefix is " + std::to_string(prefix_len) + " tokens");
    }
    const TokenSequence prompt = engine.tokenize(split.suffix);
    QueryResult out;
    out.tokens = engine.generate(prompt, pack.cache, max_new);
    out.answer = engine.detokenize(out.tokens);
    out.accounting.kv_prompt_tokens = prompt.size();
    out.accounting.rag_prompt_tokens = prefix_len + prompt.size();
    out.accounting.pack_tokens = pack.cache.length();
    return out;
}

/// Raw row concatenation of two independently built caches. Known-broken:
/// b's keys keep rotations from position 0. Exists only as a contrast arm.
inline KnowledgePack compose_naive(const KnowledgePack& a, const KnowledgePack& b) {
    if (a.fingerprint() != b.fingerprint()) {
        throw FingerprintMismatch("packs come from models " + a.fingerprint().hex + " and " + b.fingerprint().hex);
    }
    if (b.cache.empty()) return a;
    if (a.dialect != b.dialect || a.meta.use_template != b.meta.use_template) {
        throw ConfigError("naive composition needs packs of the same dialect and build mode");
    }
    KnowledgePack out = a;
    out.cache = concat_rows(a.cache, b.cache);
    out.facts.insert(out.facts.end(), b.facts.begin(), b.facts.end());
    out.embeddings.insert(out.embeddings.end(), b.embeddings.begin(), b.embeddings.end());
    if (a.meta.use_template) {
        out.meta.segments.insert(out.meta.segments.end(), b.meta.segments.begin(), b.meta.segments.end());
    } else {
        out.meta.segments = {static_cast<std::uint32_t>(out.facts.size())};
    }
    out.meta.naive = true;
    return out;
}

}  // namespace kvpack
