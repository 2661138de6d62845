// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

// Prints one PASS/FAIL line per acceptance criterion.
//
//   acceptance [--only N] [--expect-fail N[,N...]]
//
// Exit status is 0 when every criterion passes, except those listed with
// --expect-fail, which must fail. An expected failure that starts passing
// also makes the run exit 1 so the list gets updated.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kvpack/kvpack.hpp"

namespace {

using namespace kvpack;

struct Outcome {
    bool pass;
    std::string detail;
};

const Engine& engine() {
    static const Engine e;
    return e;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<std::string> random_facts(std::mt19937_64& rng, std::size_t n) {
    static const std::vector<std::string> kWords = {"amber", "river", "stone", "quiet", "seven", "lamp",  "north",
                                                    "paper", "crane", "salt",  "ember", "oak",   "Vega",  "tin",
                                                    "moss",  "harbor", "fern", "copper", "Ilsa", "drum"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string s;
        const std::size_t len = 3 + rng() % 6;
        for (std::size_t w = 0; w < len; ++w) s += (w ? " " : "") + kWords[rng() % kWords.size()];
        out.push_back(s + ".");
    }
    return out;
}

// Rendered single-pass conversation: one system turn per group, then the user turn.
std::string render(const std::vector<std::string>& groups, const std::string& question) {
    std::vector<Message> m;
    for (const auto& g : groups) m.push_back({"system", g});
    m.push_back({"user", question});
    return apply_template(m, engine().dialect("chatml"), true, true);
}

// 1 and 2 share one run.
const EquivalenceReport& equivalence_run() {
    static const EquivalenceReport rep = [] {
        const auto cases = random_equivalence_cases(200, 2026);
        return check_equivalence(engine(), cases, {.dialect = "chatml", .use_template = true, .max_new = 32});
    }();
    return rep;
}

Outcome c1() {
    const auto& r = equivalence_run();
    return {r.cache_divergences == 0 && r.rendering_mismatches == 0 && r.evaluated() == 200,
            "cache divergences " + std::to_string(r.cache_divergences) + "/" + std::to_string(r.evaluated()) +
                " at tolerance 0"};
}

Outcome c2() {
    const auto& r = equivalence_run();
    return {r.output_divergences == 0 && r.evaluated() == 200,
            "output divergences " + std::to_string(r.output_divergences) + "/" + std::to_string(r.evaluated()) +
                " over 32 greedy tokens (both correct " + std::to_string(r.both_correct) + ", both wrong " +
                std::to_string(r.both_wrong) + ", disagree " + std::to_string(r.disagree) + ")"};
}

Outcome c3() {
    std::mt19937_64 rng(3);
    int exact = 0, naive_diverges = 0;
    for (int i = 0; i < 100; ++i) {
        const auto fa = random_facts(rng, 1 + rng() % 3);
        const auto fb = random_facts(rng, 1 + rng() % 3);
        const std::string q = random_facts(rng, 1).front() + "?";
        const auto a = build_pack(engine(), BuildRequest{fa});
        const auto b = build_pack(engine(), BuildRequest{fb});
        const auto seq = compose_sequential(engine(), a, BuildRequest{fb});
        const auto joint = engine().model().forward(engine().tokenize(render({join_facts(fa), join_facts(fb)}, q)));
        exact += caches_equal(seq.cache, slice_prefix(joint.cache, seq.cache.length()), 0.0).equal;
        const auto ys = query_with_pack(engine(), seq, q, 32).tokens;
        const auto yn = query_with_pack(engine(), compose_naive(a, b), q, 32).tokens;
        naive_diverges += ys != yn;
    }
    return {exact == 100 && naive_diverges >= 50, "sequential = joint cache " + std::to_string(exact) +
                                                      "/100; naive diverges from sequential " +
                                                      std::to_string(naive_diverges) + "/100"};
}

Outcome c4() {
    struct Row {
        std::size_t kv, rag;
        std::uint32_t percent;
    };
    const std::vector<Row> rows = {{35, 176, 80}, {31, 188, 84}, {35, 299, 88}, {31, 305, 90},
                                   {35, 438, 92}, {31, 437, 93}, {35, 739, 95}, {31, 724, 96}};
    int hits = 0;
    std::string got;
    for (const auto& r : rows) {
        const std::vector<std::size_t> facts = {r.rag - r.kv};
        const auto rep = token_cost_report(1, r.kv, facts, 0);
        hits += rep.steps[0].percent == r.percent;
        got += (got.empty() ? "" : ",") + std::to_string(rep.steps[0].percent);
    }
    std::mt19937_64 rng(4);
    const auto facts = random_facts(rng, 5);
    const auto m = measured_token_costs(engine(), facts, "Which lamp is amber?", "chatml");
    bool kv_const = true, rag_up = true;
    for (std::size_t s = 1; s < m.steps.size(); ++s) {
        kv_const &= m.steps[s].kv_tokens == m.steps[0].kv_tokens;
        rag_up &= m.steps[s].rag_tokens > m.steps[s - 1].rag_tokens;
    }
    std::string rag;
    for (const auto& s : m.steps) rag += (rag.empty() ? "" : ",") + std::to_string(s.rag_tokens);
    return {hits == 8 && kv_const && rag_up, "published rows " + std::to_string(hits) + "/8 (" + got +
                                                 "%); measured kv " + std::to_string(m.steps[0].kv_tokens) +
                                                 " constant, rag " + rag};
}

Outcome c5() {
    const auto a = lint_template_split(engine(), "You are a helpful assistant.", "Hello.", "chatml");
    const auto b = lint_template_split(engine(), "You are a helpful assistant.", "Hello.", "llama3");
    bool dup_bos = false;
    for (const auto& f : b.findings) {
        dup_bos |= f.kind == LintFinding::Kind::DuplicatedSpecial && f.text == "<|begin_of_text|>";
    }
    return {a.findings.empty() && a.split == a.single && b.findings.size() >= 2 && dup_bos && b.split != b.single,
            "chatml " + std::to_string(a.findings.size()) + " findings; llama3 " + std::to_string(b.findings.size()) +
                " findings, duplicated begin-of-text " + (dup_bos ? "yes" : "no")};
}

Outcome c6() {
    std::mt19937_64 rng(6);
    int differ = 0;
    for (int i = 0; i < 50; ++i) {
        const auto facts = random_facts(rng, 1 + rng() % 5);
        const auto t = build_pack(engine(), BuildRequest{facts, "chatml", true});
        const auto r = build_pack(engine(), BuildRequest{facts, "chatml", false});
        differ += t.cache.length() != r.cache.length();
    }
    return {differ == 50, "raw and templated lengths differ in " + std::to_string(differ) + "/50"};
}

// Fixed-width examples give every delta the same source length, so composed
// deltas are never truncated relative to their terms.
std::vector<std::string> fixed_width_examples(std::mt19937_64& rng, std::size_t n) {
    std::vector<std::string> out;
    for (const auto& f : random_facts(rng, n)) {
        std::string s = f.substr(0, 24);
        s.resize(24, '.');
        out.push_back(s);
    }
    return out;
}

Outcome c7() {
    std::mt19937_64 rng(7);
    const std::vector<double> alphas = {-2.0, -1.5, -1.0, -0.5, -0.25, -0.125, 0.125, 0.25, 0.375, 0.5, 0.75, 1.0,
                                        1.25, 1.5,  2.0,  3.0};
    const std::uint32_t L = engine().config().n_layers;
    int ok[5] = {0, 0, 0, 0, 0};
    for (int i = 0; i < 100; ++i) {
        const auto cache = build_pack(engine(), BuildRequest{random_facts(rng, 1 + rng() % 4)}).cache;
        const std::size_t pairs = std::size_t{1} << (rng() % 3);
        const auto da = build_delta(engine(), fixed_width_examples(rng, pairs), fixed_width_examples(rng, pairs));
        const auto db = build_delta(engine(), fixed_width_examples(rng, pairs), fixed_width_examples(rng, pairs));
        const double a1 = alphas[rng() % alphas.size()];
        const double a2 = alphas[rng() % alphas.size()];
        const std::vector<LayerRange> ranges = {LayerRange::all(L), LayerRange::early(L), LayerRange::mid(L),
                                                LayerRange::late(L), LayerRange::parse("0,2-3", L)};
        const LayerRange& r = ranges[rng() % ranges.size()];
        auto same = [](const KvCache& x, const KvCache& y) { return caches_equal(x, y, 0.0).equal; };

        ok[0] += same(apply_delta(cache, da, 0.0, r), cache);
        ok[1] += caches_equal(apply_delta(cache, da, a1, r), cache, 0.0).max_key_diff() == 0.0;
        ok[2] += same(apply_delta(apply_delta(cache, da, a1, r), da, a2, r), apply_delta(cache, da, a1 + a2, r));
        const std::vector<std::pair<SteeringDelta, double>> terms = {{da, a1}, {db, a2}};
        ok[3] += same(apply_delta(cache, compose_deltas(terms), 1.0, r),
                      apply_delta(apply_delta(cache, da, a1, r), db, a2, r));
        KvCache step = cache;
        for (const auto& t : {LayerRange::early(L), LayerRange::mid(L), LayerRange::late(L)}) {
            step = apply_delta(step, da, a1, t);
        }
        ok[4] += same(step, apply_delta(cache, da, a1, LayerRange::all(L)));
    }
    const bool pass = ok[0] == 100 && ok[1] == 100 && ok[2] == 100 && ok[3] == 100 && ok[4] == 100;
    return {pass, "alpha0 " + std::to_string(ok[0]) + ", keys " + std::to_string(ok[1]) + ", linearity " +
                      std::to_string(ok[2]) + ", compose " + std::to_string(ok[3]) + ", partition " +
                      std::to_string(ok[4]) + " (of 100)"};
}

Outcome c8() {
    std::mt19937_64 rng(8);
    const Model& m = engine().model();
    const std::size_t w = m.config().d_model;
    int v_same = 0, k_differ = 0;
    double min_k = INFINITY;
    for (int i = 0; i < 50; ++i) {
        const TokenSequence t = {static_cast<TokenId>(rng() % 256)};
        const auto pi = static_cast<std::uint32_t>(rng() % 2000);
        auto pj = static_cast<std::uint32_t>(rng() % 2000);
        if (pj == pi) pj = pi + 1;
        const auto a = m.forward(t, m.empty_cache(pi)).cache;
        const auto b = m.forward(t, m.empty_cache(pj)).cache;
        bool vs = true, kd = true;
        for (std::uint32_t l = 0; l < a.n_layers(); ++l) {
            vs &= a.layer(l).values == b.layer(l).values;
            double d = 0;
            for (std::size_t x = 0; x < w; ++x) {
                const double e = double(a.layer(l).keys[x]) - double(b.layer(l).keys[x]);
                d += e * e;
            }
            min_k = std::min(min_k, std::sqrt(d));
            kd &= std::sqrt(d) > 1e-6;
        }
        v_same += vs;
        k_differ += kd;
    }
    return {v_same == 50 && k_differ == 50, "V identical " + std::to_string(v_same) + "/50, K differ " +
                                                std::to_string(k_differ) + "/50 (min distance " +
                                                fmt("%.3g", min_k) + ")"};
}

Outcome c9() {
    const auto pack = build_pack(engine(), BuildRequest{{"The capital of Zorbia is Quelm.",
                                                         "Quelm has 3 rivers and a harbor.",
                                                         "The harbor opens at dawn."}});
    const std::vector<std::string> good = {"def f(x):\n  if x is None: raise ValueError\n  return x",
                                           "def g(s):\n  if not s: return ''\n  return s.strip()"};
    const std::vector<std::string> bad = {"def f(x):\n  return x", "def g(s):\n  return s.strip()"};
    const auto dv = build_delta(engine(), good, bad, "chatml", DeltaChannel::Values);
    const auto dk = build_delta(engine(), good, bad, "chatml", DeltaChannel::Keys);
    const std::vector<std::string> base = {"Write a function.", "What is the capital of Zorbia?", "hello",
                                           "Explain rivers.",   "Count to ten",                   "a",
                                           "Who?",              "List three colors.",             "Describe Quelm.",
                                           "Why is the sky blue?"};
    const double alpha = 1.0;
    const LayerRange range = LayerRange::all(engine().config().n_layers);
    double sv = 0, sk = 0;
    for (int i = 0; i < 20; ++i) {
        const std::string q = base[i % 10] + (i >= 10 ? " Please answer." : "");
        sv += degeneracy_score(dual_channel_query(engine(), pack, dv, alpha, range, q, 32).tokens);
        sk += degeneracy_score(dual_channel_query(engine(), pack, dk, alpha, range, q, 32).tokens);
    }
    sv /= 20;
    sk /= 20;
    return {sv - sk >= 0.2, "alpha 1, all layers, 20 prompts: mean degeneracy values " + fmt("%.3f", sv) +
                                ", keys " + fmt("%.3f", sk) + ", gap " + fmt("%.3f", sv - sk) + " (need >= 0.2)"};
}

Outcome c10() {
    bool pass = true;
    std::string detail;
    for (std::size_t n : {100u, 1000u, 5000u}) {
        const auto c = make_synthetic_corpus(n);
        const auto idx = build_bank_index(c.facts);
        std::size_t bank_ok = 0, top_ok = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = route_query(idx, c.queries[i]);
            bank_ok += r.bank == idx.assignments[i];
            top_ok += r.ranked.front() == i;
        }
        double recompute = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            recompute += answer_via_banks(engine(), idx, c.queries[i * n / 5], "chatml", 8).recompute_ms;
        }
        const double per_fact = storage_bytes_per_fact(idx);
        pass &= bank_ok == n && top_ok == n && idx.k() == default_bank_count(n) && per_fact < 1024.0;
        detail += (detail.empty() ? "" : "; ") + std::string("N=") + std::to_string(n) + " k=" +
                  std::to_string(idx.k()) + " bank " + std::to_string(bank_ok) + "/" + std::to_string(n) + " top1 " +
                  std::to_string(top_ok) + "/" + std::to_string(n) + " " + fmt("%.0f", per_fact) + " B/fact" +
                  " recompute " + fmt("%.2f", recompute / 5) + " ms";
    }
    return {pass, detail};
}

template <class F>
bool truncation_rejected(const std::vector<std::uint8_t>& bytes, F&& parse) {
    try {
        parse(std::span(bytes).first(bytes.size() - 1));
    } catch (const FormatError& e) {
        return e.kind() == FormatError::Kind::Truncated;
    }
    return false;
}

Outcome c11() {
    std::mt19937_64 rng(11);
    int packs = 0, deltas = 0, indexes = 0, truncs = 0;
    for (int i = 0; i < 50; ++i) {
        KnowledgePack p = build_pack(engine(), BuildRequest{random_facts(rng, rng() % 4), "chatml", rng() % 2 == 0});
        if (rng() % 2) {
            const auto d = build_delta(engine(), random_facts(rng, 1), random_facts(rng, 1));
            p.cache = apply_delta(p.cache, d, 0.1 * double(rng() % 20), LayerRange::mid(4));
        }
        const auto pb = serialize_pack(p);
        const auto pq = deserialize_pack(pb);
        bool same = serialize_pack(pq) == pb && caches_equal(pq.cache, p.cache, 0.0).equal && pq.facts == p.facts &&
                    pq.embeddings == p.embeddings && pq.meta == p.meta;
        for (std::uint32_t l = 0; l < 4; ++l) same &= pq.cache.effective_values(l) == p.cache.effective_values(l);
        packs += same;

        const auto d = build_delta(engine(), random_facts(rng, 2), random_facts(rng, 2), "chatml",
                                   rng() % 2 ? DeltaChannel::Keys : DeltaChannel::Values);
        const auto db = serialize_delta(d);
        const auto dq = deserialize_delta(db);
        deltas += serialize_delta(dq) == db && dq.diffs == d.diffs && dq.layers == d.layers;

        const auto idx = build_bank_index(make_synthetic_corpus(20 + rng() % 60, std::nullopt, rng()).facts);
        const auto ib = serialize_index(idx);
        indexes += deserialize_index(ib) == idx;

        truncs += truncation_rejected(pb, [](auto s) { deserialize_pack(s); }) &&
                  truncation_rejected(db, [](auto s) { deserialize_delta(s); }) &&
                  truncation_rejected(ib, [](auto s) { deserialize_index(s); });
    }
    return {packs == 50 && deltas == 50 && indexes == 50 && truncs == 50,
            "round trips packs " + std::to_string(packs) + "/50, deltas " + std::to_string(deltas) + "/50, indexes " +
                std::to_string(indexes) + "/50; 1-byte truncation rejected as Truncated " + std::to_string(truncs) +
                "/50"};
}

Outcome c12() {
    struct Row {
        const char* prediction;
        const char* gold;
        bool em;
        double f1;
    };
    const std::vector<Row> rows = {
        {"The answer is Paris.", "Paris", true, 0.4}, {"parisian", "Paris", true, 0.0},
        {"London", "Paris", false, 0.0},              {"Paris", "Paris", true, 1.0},
        {"  PARIS!! ", "paris", true, 1.0},           {"a b c", "a b d", false, 2.0 / 3.0},
        {"", "", false, 1.0},                         {"x", "", false, 0.0},
        {"", "x", false, 0.0},                        {"the the cat", "the cat", true, 0.8},
        {"New   York\tcity", "new york", true, 0.8},  {"(Paris)", "Paris,", true, 1.0},
    };
    int ok = 0;
    for (const auto& r : rows) {
        ok += exact_match(r.prediction, r.gold) == r.em && std::abs(token_f1(r.prediction, r.gold) - r.f1) < 1e-12;
    }
    return {ok == 12, std::to_string(ok) + "/12 golden rows"};
}

std::set<int> parse_list(const std::string& s) {
    std::set<int> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) out.insert(std::stoi(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> expect_fail, only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if ((a == "--expect-fail" || a == "--only") && i + 1 < argc) {
            (a == "--only" ? only : expect_fail) = parse_list(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: acceptance [--only N,...] [--expect-fail N,...]\n");
            return 2;
        }
    }

    const std::vector<std::function<Outcome()>> criteria = {c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12};
    int unexpected = 0;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(n)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i]();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool expected_fail = expect_fail.count(n) > 0;
        std::printf("%s criterion %d: %s [%.1fs]%s\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str(), s,
                    expected_fail ? (o.pass ? " (expected to fail, now passes)" : " (known failure)") : "");
        std::fflush(stdout);
        if (o.pass == expected_fail) ++unexpected;
    }
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("total %.1fs, unexpected results: %d\n", total, unexpected);
    return unexpected == 0 ? 0 : 1;
}
