// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/chat_template.hpp"
#include "kvpack/engine.hpp"
#include "kvpack/kv_cache.hpp"
#include "kvpack/metrics.hpp"
#include "kvpack/pipeline.hpp"

namespace kvpack {

// ---------------------------------------------------------------------------
// Equivalence: pack path vs. single-pass path

struct EquivalenceCase {
    std::vector<std::string> facts;
    std::string question;
    std::optional<std::string> gold;
    // Separator the single-pass arm joins facts with. The pack arm always uses
    // kFactSeparator; anything else is a deliberately broken harness.
    std::string rag_separator = std::string(kFactSeparator);
};

struct EquivalenceOptions {
    std::string dialect = "chatml";
    bool use_template = true;
    std::size_t max_new = 32;
};

struct CaseResult {
    bool rendering_mismatch = false;
    std::size_t pack_rows = 0;
    bool cache_equal = false;
    double max_key_diff = 0.0;
    double max_value_diff = 0.0;
    bool output_equal = false;
    bool bytes_equal = false;
    std::optional<std::size_t> first_divergence;  // token index
    TokenSequence pack_tokens;
    TokenSequence joint_tokens;
    std::string pack_answer;
    std::string joint_answer;
    std::optional<bool> pack_correct;
    std::optional<bool> joint_correct;
};

struct EquivalenceReport {
    std::size_t cases = 0;
    std::size_t rendering_mismatches = 0;  // excluded from everything below
    std::size_t cache_divergences = 0;
    std::size_t output_divergences = 0;
    std::size_t both_correct = 0;
    std::size_t both_wrong = 0;
    std::size_t disagree = 0;
    std::vector<CaseResult> results;

    std::size_t evaluated() const noexcept { return cases - rendering_mismatches; }
    bool clean() const noexcept { return rendering_mismatches == 0 && cache_divergences == 0 && output_divergences == 0; }
};

namespace detail {

// The concatenated prompt a RAG baseline would feed, tokenized in one go.
inline TokenSequence joint_prompt(const Engine& engine, const EquivalenceCase& c, const EquivalenceOptions& o) {
    const ChatTemplate& t = engine.dialect(o.dialect);
    const std::string joined = join_facts(c.facts, c.rag_separator);
    if (o.use_template) {
        const std::vector<Message> msgs = {{"system", joined}, {"user", c.question}};
        return engine.tokenize(render_conversation(msgs, t, {.single_pass = true, .add_generation_prompt = true}).text);
    }
    const Message user{"user", c.question};
    TokenSequence out = engine.tokenize(joined, false);
    const TokenSequence tail = engine.tokenize(
        render_conversation(std::span(&user, 1), t, {.single_pass = true, .add_generation_prompt = true}).text);
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
}

}  // namespace detail

inline CaseResult check_case(const Engine& engine, const EquivalenceCase& c, const EquivalenceOptions& o = {}) {
    CaseResult r;
    const KnowledgePack pack = build_pack(engine, BuildRequest{c.facts, o.dialect, o.use_template});
    const PromptSplit split = split_prompt(engine, pack, c.question);
    TokenSequence pack_stream = prefix_tokens(engine, split);
    const TokenSequence suffix = engine.tokenize(split.suffix);
    pack_stream.insert(pack_stream.end(), suffix.begin(), suffix.end());
    const TokenSequence joint = detail::joint_prompt(engine, c, o);
    r.pack_rows = pack.cache.length();
    if (pack_stream != joint) {
        r.rendering_mismatch = true;
        return r;
    }

    const ForwardResult full = engine.model().forward(joint);
    const CacheComparison cmp = caches_equal(pack.cache, slice_prefix(full.cache, pack.cache.length()), 0.0);
    r.cache_equal = cmp.equal;
    r.max_key_diff = cmp.max_key_diff();
    r.max_value_diff = cmp.max_value_diff();

    const QueryResult q = query_with_pack(engine, pack, c.question, o.max_new);
    r.pack_tokens = q.tokens;
    r.pack_answer = q.answer;
    r.joint_tokens = engine.generate(joint, o.max_new);
    r.joint_answer = engine.detokenize(r.joint_tokens);
    r.output_equal = r.pack_tokens == r.joint_tokens;
    r.bytes_equal = r.pack_answer == r.joint_answer;
    if (!r.output_equal) {
        const auto [a, b] = std::mismatch(r.pack_tokens.begin(), r.pack_tokens.end(), r.joint_tokens.begin(),
                                          r.joint_tokens.end());
        r.first_divergence = static_cast<std::size_t>(a - r.pack_tokens.begin());
    }
    if (c.gold) {
        r.pack_correct = exact_match(r.pack_answer, *c.gold);
        r.joint_correct = exact_match(r.joint_answer, *c.gold);
    }
    return r;
}

/// Runs both arms per case and tallies divergences in case order.
inline EquivalenceReport check_equivalence(const Engine& engine, std::span<const EquivalenceCase> cases,
                                           const EquivalenceOptions& o = {}) {
    if (cases.empty()) throw ConfigError("equivalence check needs at least one case");
    EquivalenceReport rep;
    rep.cases = cases.size();
    for (const auto& c : cases) {
        CaseResult r = check_case(engine, c, o);
        if (r.rendering_mismatch) {
            ++rep.rendering_mismatches;
        } else {
            if (!r.cache_equal) ++rep.cache_divergences;
            if (!r.output_equal || !r.bytes_equal) ++rep.output_divergences;
            if (r.pack_correct && r.joint_correct) {
                if (*r.pack_correct && *r.joint_correct) {
                    ++rep.both_correct;
                } else if (!*r.pack_correct && !*r.joint_correct) {
                    ++rep.both_wrong;
                } else {
                    ++rep.disagree;
                }
            }
        }
        rep.results.push_back(std::move(r));
    }
    return rep;
}

/// Deterministic synthetic cases: 1-5 short attribute facts about made-up
/// entities and a question about one of them, with the attribute value as gold.
inline std::vector<EquivalenceCase> random_equivalence_cases(std::size_t n, std::uint64_t seed) {
    static constexpr std::array<std::string_view, 8> kNames = {"Avery", "Brenna", "Corin", "Dalia",
                                                               "Emrys", "Falk",   "Gwen",  "Hollis"};
    static constexpr std::array<std::string_view, 6> kAttrs = {"city", "color", "pet", "number", "tool", "song"};
    static constexpr std::array<std::string_view, 12> kValues = {"Quelm",  "teal",   "ferret", "41",
                                                                 "chisel", "Aurora", "Brisk",  "amber",
                                                                 "otter",  "7",      "lathe",  "Nocturne"};
    std::mt19937_64 rng(seed);
    std::vector<EquivalenceCase> out;
    for (std::size_t i = 0; i < n; ++i) {
        EquivalenceCase c;
        const std::size_t n_facts = 1 + rng() % 5;
        std::vector<std::array<std::string_view, 3>> parts;
        for (std::size_t f = 0; f < n_facts; ++f) {
            parts.push_back({kAttrs[rng() % kAttrs.size()], kNames[rng() % kNames.size()],
                             kValues[rng() % kValues.size()]});
            c.facts.push_back("The " + std::string(parts[f][0]) + " of " + std::string(parts[f][1]) + " is " +
                              std::string(parts[f][2]) + ".");
        }
        const auto& target = parts[rng() % n_facts];
        c.question = "What is the " + std::string(target[0]) + " of " + std::string(target[1]) + "?";
        c.gold = std::string(target[2]);
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Template-split lint

struct LintFinding {
    enum class Kind { DuplicatedSpecial, SpuriousSpecial, SpuriousText, MissingTokens };
    Kind kind;
    std::size_t position = 0;  // index into the split stream (missing: into the single-pass stream)
    TokenSequence tokens;
    std::string text;

    std::string describe() const {
        switch (kind) {
            case Kind::DuplicatedSpecial: return "duplicated special token " + text + " at " + std::to_string(position);
            case Kind::SpuriousSpecial: return "spurious special token " + text + " at " + std::to_string(position);
            case Kind::SpuriousText:
                return "spurious text (" + std::to_string(tokens.size()) + " tokens) at " + std::to_string(position);
            case Kind::MissingTokens:
                return "missing " + std::to_string(tokens.size()) + " tokens at " + std::to_string(position);
        }
        return {};
    }
};

struct LintReport {
    TokenSequence split;
    TokenSequence single;
    std::vector<LintFinding> findings;

    bool clean() const noexcept { return findings.empty(); }
};

namespace detail {

enum class EditOp { Keep, Extra, Missing };

// Longest-common-subsequence alignment of a (split) against b (single).
// Backtracks from the end and matches equal tokens eagerly, which keeps an
// inserted block contiguous instead of interleaving it with the kept stream.
inline std::vector<EditOp> lcs_script(std::span<const TokenId> a, std::span<const TokenId> b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::uint32_t> dp((n + 1) * (m + 1), 0);
    auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return dp[i * (m + 1) + j]; };
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            at(i, j) = a[i - 1] == b[j - 1] ? at(i - 1, j - 1) + 1 : std::max(at(i - 1, j), at(i, j - 1));
        }
    }
    std::vector<EditOp> ops;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && a[i - 1] == b[j - 1]) {
            ops.push_back(EditOp::Keep);
            --i, --j;
        } else if (i > 0 && (j == 0 || at(i - 1, j) >= at(i, j - 1))) {
            ops.push_back(EditOp::Extra);
            --i;
        } else {
            ops.push_back(EditOp::Missing);
            --j;
        }
    }
    std::reverse(ops.begin(), ops.end());
    return ops;
}

}  // namespace detail

/// Renders system and user turns once as two template calls (concatenated) and
/// once in a single call, then token-diffs the two streams.
inline LintReport lint_template_split(const Engine& engine, std::string_view system_text, std::string_view user_text,
                                      std::string_view dialect) {
    const ChatTemplate& t = engine.dialect(dialect);
    const std::vector<Message> msgs = {{"system", std::string(system_text)}, {"user", std::string(user_text)}};
    LintReport rep;
    rep.split = engine.tokenize(render_conversation(msgs, t, {.single_pass = false, .add_generation_prompt = true}).text);
    rep.single = engine.tokenize(render_conversation(msgs, t, {.single_pass = true, .add_generation_prompt = true}).text);

    const Tokenizer& tok = engine.tokenizer();
    const auto ops = detail::lcs_script(rep.split, rep.single);
    std::size_t i = 0, j = 0;
    LintFinding* open = nullptr;
    for (auto op : ops) {
        if (op == detail::EditOp::Keep) {
            ++i, ++j;
            open = nullptr;
            continue;
        }
        if (op == detail::EditOp::Extra) {
            const TokenId id = rep.split[i];
            if (tok.is_special(id)) {
                const bool dup = std::find(rep.single.begin(), rep.single.end(), id) != rep.single.end();
                rep.findings.push_back({dup ? LintFinding::Kind::DuplicatedSpecial : LintFinding::Kind::SpuriousSpecial,
                                        i, {id}, std::string(tok.spelling(id))});
                open = nullptr;
            } else {
                if (!open || open->kind != LintFinding::Kind::SpuriousText) {
                    rep.findings.push_back({LintFinding::Kind::SpuriousText, i, {}, {}});
                    open = &rep.findings.back();
                }
                open->tokens.push_back(id);
                open->text += tok.detokenize(std::span(&id, 1));
            }
            ++i;
        } else {
            const TokenId id = rep.single[j];
            if (!open || open->kind != LintFinding::Kind::MissingTokens) {
                rep.findings.push_back({LintFinding::Kind::MissingTokens, j, {}, {}});
                open = &rep.findings.back();
            }
            open->tokens.push_back(id);
            open->text += tok.detokenize(std::span(&id, 1));
            ++j;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Token cost accounting

struct TokenCostStep {
    std::size_t step = 0;  // 1-based
    std::size_t kv_tokens = 0;
    std::size_t rag_tokens = 0;
    std::size_t savings = 0;
    std::uint32_t percent = 0;
    std::size_t kv_tokens_without_question = 0;
    std::size_t rag_tokens_without_question = 0;
};

struct TokenCostReport {
    std::vector<TokenCostStep> steps;
};

/// round(100 * savings / rag) to the nearest integer, halves up; 0 when rag is 0.
inline std::uint32_t savings_percent(std::size_t savings, std::size_t rag) {
    if (rag == 0) return 0;
    return static_cast<std::uint32_t>((200 * savings + rag) / (2 * rag));
}

/// KV cost is the question alone at every step; RAG cost at step s is the
/// question plus the frame plus all fact tokens retrieved through step s.
inline TokenCostReport token_cost_report(std::size_t steps, std::size_t question_tokens,
                                         std::span<const std::size_t> per_step_fact_tokens,
                                         std::size_t fixed_frame_tokens) {
    if (per_step_fact_tokens.size() != steps) {
        throw ConfigError("per-step fact token list has " + std::to_string(per_step_fact_tokens.size()) +
                          " entries for " + std::to_string(steps) + " steps");
    }
    TokenCostReport rep;
    std::size_t facts = 0;
    for (std::size_t s = 0; s < steps; ++s) {
        facts += per_step_fact_tokens[s];
        TokenCostStep st;
        st.step = s + 1;
        st.kv_tokens = question_tokens;
        st.rag_tokens = question_tokens + fixed_frame_tokens + facts;
        st.savings = st.rag_tokens - st.kv_tokens;
        st.percent = savings_percent(st.savings, st.rag_tokens);
        st.kv_tokens_without_question = 0;
        st.rag_tokens_without_question = fixed_frame_tokens + facts;
        rep.steps.push_back(st);
    }
    return rep;
}

/// Token costs measured on real renderings: step s retrieves facts[0..s) into
/// one system turn. KV is the user turn the read phase feeds; RAG adds the
/// rendered prefix (frame plus facts) a single-pass prompt would carry.
inline TokenCostReport measured_token_costs(const Engine& engine, std::span<const std::string> facts,
                                            std::string_view question, std::string_view dialect) {
    TokenCostReport rep;
    for (std::size_t s = 1; s <= facts.size(); ++s) {
        KnowledgePack shape;
        shape.dialect = std::string(dialect);
        shape.facts.assign(facts.begin(), facts.begin() + static_cast<std::ptrdiff_t>(s));
        shape.meta.segments = {static_cast<std::uint32_t>(s)};
        const PromptSplit split = split_prompt(engine, shape, question);
        TokenCostStep st;
        st.step = s;
        st.kv_tokens = engine.tokenize(split.suffix).size();
        st.rag_tokens_without_question = prefix_tokens(engine, split).size();
        st.rag_tokens = st.kv_tokens + st.rag_tokens_without_question;
        st.savings = st.rag_tokens - st.kv_tokens;
        st.percent = savings_percent(st.savings, st.rag_tokens);
        rep.steps.push_back(st);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Cases files

struct LintCase {
    std::string system_text;
    std::string user_text;
};

struct TokenCase {
    std::size_t question_tokens = 0;
    std::vector<std::size_t> per_step_fact_tokens;
    std::size_t frame_tokens = 0;
};

struct CasesFile {
    std::vector<EquivalenceCase> equivalence;
    std::vector<LintCase> lint;
    std::vector<TokenCase> tokens;
};

/*
 * Tab-separated records, one per line; blank lines and lines starting with '#'
 * are skipped. Text fields accept the escapes \n \t \s \\.
 *
 *   fact    <id>   <text>
 *   case    <fact ids, comma separated>   <question>   [<gold>]
 *   lint    <system text>   <user text>
 *   tokens  <question tokens>   <fact tokens per step, comma separated>   [<frame tokens>]
 */
inline CasesFile parse_cases_file(std::string_view text) {
    CasesFile out;
    std::map<std::string, std::string> facts;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) -> void {
        throw ConfigError("cases file line " + std::to_string(line_no) + ": " + why);
    };
    auto field = [&](std::string_view v) {
        try {
            return detail::unescape(v, line_no);
        } catch (const TemplateError& e) {
            fail(e.what());
        }
        return std::string();
    };
    auto count = [&](std::string_view v) {
        std::size_t n = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
        if (v.empty() || ec != std::errc{} || p != v.data() + v.size()) fail("bad count '" + std::string(v) + "'");
        return n;
    };
    auto split = [](std::string_view v, char sep) {
        std::vector<std::string_view> parts;
        std::size_t at = 0;
        for (;;) {
            const auto next = v.find(sep, at);
            parts.push_back(v.substr(at, next == std::string_view::npos ? std::string_view::npos : next - at));
            if (next == std::string_view::npos) break;
            at = next + 1;
        }
        return parts;
    };

    for (auto line : split(text, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        const auto cols = split(line, '\t');
        const auto kind = cols[0];
        if (kind == "fact") {
            if (cols.size() != 3) fail("fact needs <id> <text>");
            if (!facts.emplace(std::string(cols[1]), field(cols[2])).second) {
                fail("duplicate fact id '" + std::string(cols[1]) + "'");
            }
        } else if (kind == "case") {
            if (cols.size() != 3 && cols.size() != 4) fail("case needs <fact ids> <question> [<gold>]");
            EquivalenceCase c;
            if (!cols[1].empty()) {
                for (auto id : split(cols[1], ',')) {
                    const auto it = facts.find(std::string(id));
                    if (it == facts.end()) fail("unknown fact id '" + std::string(id) + "'");
                    c.facts.push_back(it->second);
                }
            }
            c.question = field(cols[2]);
            if (cols.size() == 4) c.gold = field(cols[3]);
            out.equivalence.push_back(std::move(c));
        } else if (kind == "lint") {
            if (cols.size() != 3) fail("lint needs <system text> <user text>");
            out.lint.push_back({field(cols[1]), field(cols[2])});
        } else if (kind == "tokens") {
            if (cols.size() != 3 && cols.size() != 4) fail("tokens needs <question> <per-step facts> [<frame>]");
            TokenCase t;
            t.question_tokens = count(cols[1]);
            for (auto v : split(cols[2], ',')) t.per_step_fact_tokens.push_back(count(v));
            if (cols.size() == 4) t.frame_tokens = count(cols[3]);
            out.tokens.push_back(std::move(t));
        } else {
            fail("unknown record type '" + std::string(kind) + "'");
        }
    }
    return out;
}

}  // namespace kvpack
