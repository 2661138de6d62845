// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end over pack, delta and index files.
//
// Exit codes: 0 success, 1 verification failure or lint finding,
// 2 usage or configuration error (including fingerprint mismatch),
// 3 I/O or file-format error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kvpack/kvpack.hpp"

namespace {

using namespace kvpack;

enum Exit : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kIo = 3 };

struct Globals {
    std::string config_path;
    std::string template_path;
    std::string dialect = "chatml";
    std::string format = "text";
    bool no_timing = false;
    std::size_t max_new = 32;
};

// Key/value output. Text mode prints "key: value"; records mode prints
// "key<TAB>value". Values are escaped so every record stays on one line.
class Printer {
public:
    explicit Printer(const Globals& g) : records_(g.format == "records"), timing_(!g.no_timing) {}

    static std::string escape(std::string_view s) {
        std::string out;
        for (unsigned char ch : s) {
            if (ch == '\n') {
                out += "\\n";
            } else if (ch == '\t') {
                out += "\\t";
            } else if (ch == '\\') {
                out += "\\\\";
            } else if (ch < 0x20 || ch >= 0x7f) {
                char buf[5];
                std::snprintf(buf, sizeof buf, "\\x%02x", ch);
                out += buf;
            } else {
                out.push_back(static_cast<char>(ch));
            }
        }
        return out;
    }

    template <class T>
    void field(std::string_view key, const T& value) const {
        std::ostringstream os;
        os << value;
        emit(key, os.str());
    }
    void text(std::string_view key, std::string_view value) const { emit(key, escape(value)); }
    void ms(std::string_view key, double v) const {
        if (!timing_) return;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        emit(key, buf);
    }

private:
    void emit(std::string_view key, std::string_view value) const {
        std::cout << key << (records_ ? "\t" : ": ") << value << '\n';
    }

    bool records_;
    bool timing_;
};

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::vector<std::string> read_lines(const std::string& path) {
    std::istringstream in(read_text(path));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!detail::trim(line).empty()) out.push_back(line);
    }
    return out;
}

ModelConfig load_config(const Globals& g) {
    ModelConfig c;
    if (!g.config_path.empty()) {
        std::istringstream in(read_text(g.config_path));
        std::size_t line_no = 0;
        for (std::string raw; std::getline(in, raw);) {
            ++line_no;
            const auto line = detail::trim(std::string_view(raw).substr(0, raw.find('#')));
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ConfigError(g.config_path + ":" + std::to_string(line_no) + ": expected key = value");
            }
            const auto key = detail::trim(line.substr(0, eq));
            if (!set_config_field(c, key, detail::trim(line.substr(eq + 1)))) {
                throw ConfigError(g.config_path + ":" + std::to_string(line_no) + ": unknown key '" +
                                  std::string(key) + "'");
            }
        }
    }
    if (const char* seed = std::getenv("KVPACK_SEED"); seed && *seed) set_config_field(c, "seed", seed);
    c.validate();
    return c;
}

Engine make_engine(const Globals& g) {
    TemplateSet templates = TemplateSet::builtin();
    if (!g.template_path.empty()) templates.add(load_template_file(g.template_path));
    Engine e(load_config(g), std::move(templates));
    e.dialect(g.dialect);
    return e;
}

void require_model(const Engine& e, const Fingerprint& fp, const std::string& what) {
    if (fp != e.fingerprint()) {
        throw FingerprintMismatch(what + " was built for model " + fp.hex + " but the configured model is " +
                                  e.fingerprint().hex);
    }
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::string join_ids(const std::vector<std::uint32_t>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
    return s;
}

void print_steps(const Printer& out, const TokenCostReport& rep) {
    for (const auto& st : rep.steps) {
        const std::string p = "step " + std::to_string(st.step) + " ";
        out.field(p + "kv_tokens", st.kv_tokens);
        out.field(p + "rag_tokens", st.rag_tokens);
        out.field(p + "savings", std::to_string(st.savings) + " (" + std::to_string(st.percent) + "%)");
        out.field(p + "kv_tokens_without_question", st.kv_tokens_without_question);
        out.field(p + "rag_tokens_without_question", st.rag_tokens_without_question);
    }
}

// ---------------------------------------------------------------------------

struct BuildArgs {
    std::string facts_file, out;
    bool raw = false;
};

int cmd_build(const Globals& g, const BuildArgs& a) {
    const Engine e = make_engine(g);
    const Printer out(g);
    BuildRequest req{read_lines(a.facts_file), g.dialect, !a.raw};
    if (req.facts.empty()) std::cerr << "warning: no facts in '" << a.facts_file << "'; writing a frame-only pack\n";
    const auto t0 = std::chrono::steady_clock::now();
    const KnowledgePack p = build_pack(e, req);
    const double ms = elapsed_ms(t0);
    save_pack(p, a.out);
    out.field("fingerprint", p.fingerprint().hex);
    out.field("dialect", p.dialect);
    out.field("templated", p.meta.use_template ? "yes" : "no");
    out.field("facts", p.facts.size());
    out.field("tokens", p.cache.length());
    out.ms("build_ms", ms);
    return kOk;
}

struct QueryArgs {
    std::string pack, question, delta, layers = "mid";
    double alpha = 1.0;
};

int cmd_query(const Globals& g, const QueryArgs& a) {
    const Engine e = make_engine(g);
    const Printer out(g);
    const KnowledgePack p = load_pack(a.pack);
    require_model(e, p.fingerprint(), "pack '" + a.pack + "'");
    const auto t0 = std::chrono::steady_clock::now();
    QueryResult r;
    if (!a.delta.empty()) {
        const SteeringDelta d = load_delta(a.delta);
        require_model(e, d.fingerprint(), "delta '" + a.delta + "'");
        const LayerRange range = LayerRange::parse(a.layers, e.config().n_layers);
        r = dual_channel_query(e, p, d, a.alpha, range, a.question, g.max_new);
        out.field("alpha", a.alpha);
        out.field("layers", range.describe());
        out.field("channel", d.channel == DeltaChannel::Keys ? "keys" : "values");
    } else {
        r = query_with_pack(e, p, a.question, g.max_new);
    }
    const double ms = elapsed_ms(t0);
    out.text("answer", r.answer);
    out.field("answer_tokens", r.tokens.size());
    out.field("prompt_tokens", r.accounting.kv_prompt_tokens);
    out.field("rag_prompt_tokens", r.accounting.rag_prompt_tokens);
    out.field("pack_tokens", r.accounting.pack_tokens);
    char deg[16];
    std::snprintf(deg, sizeof deg, "%.4f", degeneracy_score(r.tokens));
    out.field("degeneracy", deg);
    out.ms("query_ms", ms);
    return kOk;
}

struct ComposeArgs {
    std::vector<std::string> packs;
    std::string out;
    bool sequential = false, naive = false;
};

int cmd_compose(const Globals& g, const ComposeArgs& a) {
    if (a.sequential && a.naive) throw CLI::ValidationError("--sequential and --naive are exclusive");
    const Engine e = make_engine(g);
    const Printer out(g);
    std::vector<KnowledgePack> packs;
    for (const auto& path : a.packs) {
        packs.push_back(load_pack(path));
        require_model(e, packs.back().fingerprint(), "pack '" + path + "'");
    }
    KnowledgePack acc = packs.front();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 1; i < packs.size(); ++i) {
        const KnowledgePack& next = packs[i];
        if (a.naive) {
            acc = compose_naive(acc, next);
            continue;
        }
        std::vector<BuildRequest> reqs;
        if (next.meta.use_template) {
            std::size_t at = 0;
            for (auto n : next.meta.segments) {
                reqs.push_back({{next.facts.begin() + static_cast<std::ptrdiff_t>(at),
                                 next.facts.begin() + static_cast<std::ptrdiff_t>(at + n)},
                                next.dialect,
                                true});
                at += n;
            }
        } else {
            reqs.push_back({next.facts, next.dialect, false});
        }
        acc = compose_sequential(e, acc, reqs);
    }
    const double ms = elapsed_ms(t0);
    save_pack(acc, a.out);
    out.field("mode", a.naive ? "naive" : "sequential");
    out.field("facts", acc.facts.size());
    out.field("tokens", acc.cache.length());
    out.field("segments", acc.meta.segments.size());
    out.ms("compose_ms", ms);
    return kOk;
}

struct SteerArgs {
    std::string good, bad, out, pack, delta, delta2, layers = "mid";
    double alpha = 1.0;
    bool keys = false;
};

int cmd_steer_build(const Globals& g, const SteerArgs& a) {
    const Engine e = make_engine(g);
    const Printer out(g);
    const auto good = read_lines(a.good);
    const auto bad = read_lines(a.bad);
    if (a.keys) std::cerr << "warning: --steer-keys builds a key-channel delta (debug path)\n";
    const SteeringDelta d = build_delta(e, good, bad, g.dialect, a.keys ? DeltaChannel::Keys : DeltaChannel::Values);
    save_delta(d, a.out);
    out.field("channel", a.keys ? "keys" : "values");
    out.field("pairs", good.size());
    out.field("length", d.length);
    out.field("layers", d.layers.size());
    out.field("truncated_pairs", d.truncated_pairs);
    return kOk;
}

int cmd_steer_apply(const Globals& g, const SteerArgs& a) {
    const Engine e = make_engine(g);
    const Printer out(g);
    KnowledgePack p = load_pack(a.pack);
    require_model(e, p.fingerprint(), "pack '" + a.pack + "'");
    const SteeringDelta d = load_delta(a.delta);
    require_model(e, d.fingerprint(), "delta '" + a.delta + "'");
    const LayerRange range = LayerRange::parse(a.layers, e.config().n_layers);
    p.cache = apply_delta(p.cache, d, a.alpha, range);
    save_pack(p, a.out);
    out.field("alpha", a.alpha);
    out.field("layers", range.describe());
    out.field("tokens", p.cache.length());
    return kOk;
}

int cmd_steer_cosine(const Globals& g, const SteerArgs& a) {
    const Printer out(g);
    const SteeringDelta x = load_delta(a.delta);
    const SteeringDelta y = load_delta(a.delta2);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", delta_cosine(x, y));
    out.field("cosine", buf);
    return kOk;
}

struct RouteArgs {
    std::string index, build, save, question;
    std::uint32_t k = 0, top_m = 1;
    std::uint64_t seed = kDefaultRoutingSeed;
};

int cmd_route(const Globals& g, const RouteArgs& a) {
    const Printer out(g);
    if (a.index.empty() == a.build.empty()) throw CLI::ValidationError("give exactly one of INDEX or --build");
    BankIndex idx;
    const auto t0 = std::chrono::steady_clock::now();
    if (!a.build.empty()) {
        const auto facts = read_lines(a.build);
        idx = build_bank_index(facts, a.k ? std::optional<std::uint32_t>(a.k) : std::nullopt, a.seed);
        out.ms("index_ms", elapsed_ms(t0));
        if (!a.save.empty()) save_index(idx, a.save);
    } else {
        idx = load_index(a.index);
    }
    out.field("facts", idx.size());
    out.field("banks", idx.k());
    char per[32];
    std::snprintf(per, sizeof per, "%.1f", storage_bytes_per_fact(idx));
    out.field("storage_bytes_per_fact", per);
    if (a.question.empty()) return kOk;

    const Engine e = make_engine(g);
    const RoutedAnswer r = answer_via_banks(e, idx, a.question, g.dialect, g.max_new, a.top_m);
    if (r.route.warning) std::cerr << "warning: " << *r.route.warning << '\n';
    out.field("bank", r.route.bank);
    out.field("ranked", join_ids(r.route.ranked));
    for (std::size_t i = 0; i < r.route.ranked.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", r.route.scores[i]);
        out.field("score " + std::to_string(r.route.ranked[i]), buf);
    }
    out.text("top_fact", idx.facts[r.route.ranked.front()]);
    out.text("answer", r.result.answer);
    out.ms("route_ms", r.route_ms);
    out.ms("recompute_ms", r.recompute_ms);
    out.ms("read_ms", r.read_ms);
    return kOk;
}

struct VerifyArgs {
    std::string cases_file, mode = "equivalence";
    std::size_t random = 0;
    std::uint64_t seed = 1;
};

int cmd_verify(const Globals& g, const VerifyArgs& a) {
    const Printer out(g);
    CasesFile cases;
    if (!a.cases_file.empty()) cases = parse_cases_file(read_text(a.cases_file));

    if (a.mode == "tokens") {
        if (cases.tokens.empty()) throw ConfigError("no tokens records in the cases file");
        for (std::size_t i = 0; i < cases.tokens.size(); ++i) {
            const auto& t = cases.tokens[i];
            out.field("report", i + 1);
            print_steps(out, token_cost_report(t.per_step_fact_tokens.size(), t.question_tokens,
                                               t.per_step_fact_tokens, t.frame_tokens));
        }
        return kOk;
    }

    const Engine e = make_engine(g);
    if (a.mode == "lint") {
        if (cases.lint.empty()) cases.lint.push_back({"You are a helpful assistant.", "Hello."});
        std::size_t findings = 0;
        for (std::size_t i = 0; i < cases.lint.size(); ++i) {
            const LintReport r = lint_template_split(e, cases.lint[i].system_text, cases.lint[i].user_text, g.dialect);
            out.field("case " + std::to_string(i + 1) + " findings", r.findings.size());
            for (const auto& f : r.findings) out.text("finding", f.describe());
            findings += r.findings.size();
        }
        out.field("dialect", g.dialect);
        out.field("findings", findings);
        return findings == 0 ? kOk : kVerifyFailed;
    }

    if (a.mode != "equivalence") throw CLI::ValidationError("--mode must be equivalence, lint or tokens");
    std::vector<EquivalenceCase> eq = cases.equivalence;
    if (a.random) {
        auto extra = random_equivalence_cases(a.random, a.seed);
        eq.insert(eq.end(), extra.begin(), extra.end());
    }
    if (eq.empty()) throw ConfigError("no equivalence cases (give a cases file or --random N)");
    EquivalenceOptions opts;
    opts.dialect = g.dialect;
    opts.max_new = g.max_new;
    const auto t0 = std::chrono::steady_clock::now();
    const EquivalenceReport rep = check_equivalence(e, eq, opts);
    const double ms = elapsed_ms(t0);
    for (std::size_t i = 0; i < rep.results.size(); ++i) {
        const auto& r = rep.results[i];
        if (r.rendering_mismatch) {
            out.field("case " + std::to_string(i + 1), "rendering mismatch (harness)");
        } else if (!r.cache_equal || !r.output_equal || !r.bytes_equal) {
            out.field("case " + std::to_string(i + 1),
                      std::string("divergence cache=") + (r.cache_equal ? "same" : "differs") + " first_token=" +
                          (r.first_divergence ? std::to_string(*r.first_divergence) : "-"));
        }
    }
    const std::string n = std::to_string(rep.evaluated());
    out.field("cases", rep.cases);
    out.field("rendering_mismatches", rep.rendering_mismatches);
    out.field("cache_divergences", std::to_string(rep.cache_divergences) + "/" + n);
    out.field("output_divergences", std::to_string(rep.output_divergences) + "/" + n);
    out.field("divergences",
              std::to_string(std::max(rep.cache_divergences, rep.output_divergences)) + "/" + n);
    out.field("both_correct", rep.both_correct);
    out.field("both_wrong", rep.both_wrong);
    out.field("disagree", rep.disagree);
    out.ms("verify_ms", ms);
    return rep.clean() ? kOk : kVerifyFailed;
}

struct ReportArgs {
    std::size_t question_tokens = 0, frame = 0;
    std::vector<std::size_t> step_facts;
    std::string facts_file, question;
};

int cmd_report_tokens(const Globals& g, const ReportArgs& a) {
    const Printer out(g);
    if (!a.facts_file.empty()) {
        if (a.question.empty()) throw CLI::ValidationError("--facts needs --question");
        const Engine e = make_engine(g);
        print_steps(out, measured_token_costs(e, read_lines(a.facts_file), a.question, g.dialect));
        return kOk;
    }
    if (a.step_facts.empty()) throw CLI::ValidationError("give --step-facts or --facts");
    print_steps(out, token_cost_report(a.step_facts.size(), a.question_tokens, a.step_facts, a.frame));
    return kOk;
}

int cmd_inspect(const Globals& g, const std::string& path) {
    const Printer out(g);
    const auto bytes = detail::read_file(path);
    if (bytes.size() < 4) throw FormatError(FormatError::Kind::Truncated, "file shorter than its magic");
    const std::string magic(bytes.begin(), bytes.begin() + 4);
    if (magic == "KVPK") {
        const KnowledgePack p = deserialize_pack(bytes);
        out.field("kind", "pack");
        out.field("fingerprint", p.fingerprint().hex);
        out.field("dialect", p.dialect);
        out.field("templated", p.meta.use_template ? "yes" : "no");
        out.field("naive", p.meta.naive ? "yes" : "no");
        out.field("steered", p.cache.steered() ? "yes" : "no");
        out.field("layers", p.cache.n_layers());
        out.field("tokens", p.cache.length());
        out.field("position_offset", p.cache.position_offset());
        out.field("facts", p.facts.size());
        out.field("segments", p.meta.segments.size());
        for (std::size_t i = 0; i < p.facts.size(); ++i) out.text("fact " + std::to_string(i), p.facts[i]);
    } else if (magic == "KVSD") {
        const SteeringDelta d = deserialize_delta(bytes);
        out.field("kind", "delta");
        out.field("fingerprint", d.fingerprint().hex);
        out.field("channel", d.channel == DeltaChannel::Keys ? "keys" : "values");
        out.field("length", d.length);
        out.field("layers", join_ids(d.layers));
        out.field("labels", d.labels.size());
        out.field("truncated_pairs", d.truncated_pairs);
    } else if (magic == "KVBI") {
        const BankIndex idx = deserialize_index(bytes);
        out.field("kind", "index");
        out.field("facts", idx.size());
        out.field("banks", idx.k());
        out.field("dim", idx.dim);
        out.field("seed", idx.seed);
    } else {
        throw FormatError(FormatError::Kind::BadMagic, "'" + path + "' is not a pack, delta or index file");
    }
    out.field("bytes", bytes.size());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kvpack: knowledge packs, steering deltas and banked routing over a toy decoder"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "flat key = value model config file");
    app.add_option("--template", g.template_path, "extra dialect definition file");
    app.add_option("--dialect", g.dialect, "chat template dialect id");
    app.add_option("--format", g.format, "output format")->check(CLI::IsMember({"text", "records"}));
    app.add_flag("--no-timing", g.no_timing, "omit timing lines");
    app.add_option("--max-new", g.max_new, "tokens to generate");

    std::function<int()> run;

    BuildArgs ba;
    auto* build = app.add_subcommand("build", "build a pack from a facts file (one fact per line)");
    build->add_option("facts", ba.facts_file)->required();
    build->add_option("--out,-o", ba.out)->required();
    build->add_flag("--raw", ba.raw, "cache raw text without the chat template");
    build->callback([&] { run = [&] { return cmd_build(g, ba); }; });

    QueryArgs qa;
    auto* query = app.add_subcommand("query", "answer a question from a pack");
    query->add_option("pack", qa.pack)->required();
    query->add_option("--question,-q", qa.question)->required();
    query->add_option("--delta", qa.delta, "steering delta file");
    query->add_option("--alpha", qa.alpha);
    query->add_option("--layers", qa.layers, "all | early | mid | late | list");
    query->callback([&] { run = [&] { return cmd_query(g, qa); }; });

    ComposeArgs ca;
    auto* compose = app.add_subcommand("compose", "compose packs left to right");
    compose->add_option("packs", ca.packs)->required()->expected(2, -1);
    compose->add_option("--out,-o", ca.out)->required();
    compose->add_flag("--sequential", ca.sequential, "recompute later packs at continued positions (default)");
    compose->add_flag("--naive", ca.naive, "concatenate rows without position correction");
    compose->callback([&] { run = [&] { return cmd_compose(g, ca); }; });

    SteerArgs sa;
    auto* steer = app.add_subcommand("steer", "value-steering deltas");
    steer->require_subcommand(1);
    auto* sb = steer->add_subcommand("build-delta", "mean good-minus-bad delta over line-paired examples");
    sb->add_option("--good", sa.good)->required();
    sb->add_option("--bad", sa.bad)->required();
    sb->add_option("--out,-o", sa.out)->required();
    sb->add_flag("--steer-keys", sa.keys, "debug: take the delta from keys instead of values");
    sb->callback([&] { run = [&] { return cmd_steer_build(g, sa); }; });
    auto* sp = steer->add_subcommand("apply", "apply a delta to a pack");
    sp->add_option("pack", sa.pack)->required();
    sp->add_option("delta", sa.delta)->required();
    sp->add_option("--alpha", sa.alpha);
    sp->add_option("--layers", sa.layers);
    sp->add_option("--out,-o", sa.out)->required();
    sp->callback([&] { run = [&] { return cmd_steer_apply(g, sa); }; });
    auto* sc = steer->add_subcommand("cosine", "cosine between two deltas");
    sc->add_option("a", sa.delta)->required();
    sc->add_option("b", sa.delta2)->required();
    sc->callback([&] { run = [&] { return cmd_steer_cosine(g, sa); }; });

    RouteArgs ra;
    auto* route = app.add_subcommand("route", "banked routing over an index");
    route->add_option("index", ra.index, "index file");
    route->add_option("--build", ra.build, "facts file to index");
    route->add_option("--k", ra.k, "bank count (default ceil(N/20))");
    route->add_option("--seed", ra.seed, "k-means seed");
    route->add_option("--save", ra.save, "write the built index");
    route->add_option("--question,-q", ra.question);
    route->add_option("--top-m", ra.top_m)->check(CLI::PositiveNumber);
    route->callback([&] { run = [&] { return cmd_route(g, ra); }; });

    VerifyArgs va;
    auto* verify = app.add_subcommand("verify", "equivalence, template lint or token accounting");
    verify->add_option("cases", va.cases_file, "cases file");
    verify->add_option("--mode", va.mode)->check(CLI::IsMember({"equivalence", "lint", "tokens"}));
    verify->add_option("--random", va.random, "add N generated equivalence cases");
    verify->add_option("--seed", va.seed, "seed for generated cases");
    verify->callback([&] { run = [&] { return cmd_verify(g, va); }; });

    ReportArgs rta;
    auto* report = app.add_subcommand("report-tokens", "KV vs. RAG prompt token accounting");
    report->add_option("--question-tokens", rta.question_tokens);
    report->add_option("--step-facts", rta.step_facts, "fact tokens retrieved per step")->delimiter(',');
    report->add_option("--frame", rta.frame, "fixed template tokens on the RAG side");
    report->add_option("--facts", rta.facts_file, "measure on a facts file (one retrieval step per line)");
    report->add_option("--question,-q", rta.question);
    report->callback([&] { run = [&] { return cmd_report_tokens(g, rta); }; });

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "print the header of a pack, delta or index file");
    inspect->add_option("file", inspect_path)->required();
    inspect->callback([&] { run = [&] { return cmd_inspect(g, inspect_path); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        return run();
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const RenderingMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
}
