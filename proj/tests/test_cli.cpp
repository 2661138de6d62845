// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "test_util.hpp"

namespace kvpack {
namespace {

namespace fs = std::filesystem;

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;

    // Parses "key: value" lines; later keys win.
    std::map<std::string, std::string> fields() const {
        std::map<std::string, std::string> m;
        std::istringstream in(out);
        for (std::string line; std::getline(in, line);) {
            const auto c = line.find(": ");
            if (c != std::string::npos) m[line.substr(0, c)] = line.substr(c + 2);
        }
        return m;
    }
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("kvpack_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(path(name), std::ios::binary) << content;
        return path(name);
    }

    CliRun run(const std::string& args, const std::string& env = "") const {
        const std::string err = path("stderr.txt");
        const std::string cmd = env + " " + KVPACK_CLI + " " + args + " 2>" + err;
        CliRun r;
        FILE* p = popen(cmd.c_str(), "r");
        char buf[4096];
        for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
        const int status = pclose(p);
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        std::ifstream e(err);
        r.err.assign(std::istreambuf_iterator<char>(e), {});
        return r;
    }

    fs::path dir_;
};

const std::string kFacts = "Ada keeps bees.\nBo keeps goats.\nCy keeps owls.\n";

TEST_F(Cli, BuildReportsFactsAndTokens) {
    const auto facts = write("f.txt", kFacts);
    const auto r = run("build " + facts + " --out " + path("a.kvp") + " --no-timing");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto f = r.fields();
    EXPECT_EQ(f.at("facts"), "3");
    EXPECT_EQ(f.at("fingerprint"), ModelConfig{}.fingerprint().hex);
    EXPECT_EQ(f.count("build_ms"), 0u);
    const auto p = load_pack(path("a.kvp"));
    EXPECT_EQ(std::to_string(p.cache.length()), f.at("tokens"));
}

TEST_F(Cli, RawBuildHasDifferentLength) {
    const auto facts = write("f.txt", kFacts);
    const auto a = run("build " + facts + " --out " + path("a.kvp"));
    const auto b = run("build " + facts + " --raw --out " + path("b.kvp"));
    ASSERT_EQ(a.code, 0);
    ASSERT_EQ(b.code, 0);
    EXPECT_NE(a.fields().at("tokens"), b.fields().at("tokens"));
    EXPECT_EQ(b.fields().at("tokens"), std::to_string(kFacts.size() - 1));  // newlines become single spaces
}

TEST_F(Cli, EmptyFactsFileWarns) {
    const auto facts = write("f.txt", "\n\n");
    const auto r = run("build " + facts + " --out " + path("a.kvp"));
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("warning"), std::string::npos);
    EXPECT_EQ(r.fields().at("facts"), "0");
}

TEST_F(Cli, QueryMatchesLibraryAndAlphaZero) {
    const auto facts = write("f.txt", kFacts);
    ASSERT_EQ(run("build " + facts + " --out " + path("a.kvp")).code, 0);
    const auto q = run("query " + path("a.kvp") + " -q 'Who keeps owls?' --no-timing --max-new 12");
    ASSERT_EQ(q.code, 0) << q.err;
    const auto& e = testing::engine();
    const auto want = query_with_pack(e, load_pack(path("a.kvp")), "Who keeps owls?", 12);
    EXPECT_EQ(q.fields().at("answer_tokens"), std::to_string(want.tokens.size()));
    EXPECT_EQ(q.fields().at("prompt_tokens"), std::to_string(want.accounting.kv_prompt_tokens));
    EXPECT_EQ(q.fields().at("rag_prompt_tokens"), std::to_string(want.accounting.rag_prompt_tokens));

    write("good.txt", "Be kind.\nBe warm.\n");
    write("bad.txt", "Be cold.\nBe mean.\n");
    ASSERT_EQ(run("steer build-delta --good " + path("good.txt") + " --bad " + path("bad.txt") + " --out " +
                  path("d.kvd"))
                  .code,
              0);
    const auto z = run("query " + path("a.kvp") + " -q 'Who keeps owls?' --delta " + path("d.kvd") +
                       " --alpha 0 --no-timing --max-new 12");
    ASSERT_EQ(z.code, 0) << z.err;
    EXPECT_EQ(z.fields().at("answer"), q.fields().at("answer"));
    EXPECT_EQ(z.fields().at("layers"), "mid [1]");
}

TEST_F(Cli, PromptTokensConstantAcrossPackSizes) {
    std::string many;
    for (int i = 0; i < 50; ++i) many += "Item " + std::to_string(i) + " is stored in bin " + std::to_string(i * 7) + ".\n";
    write("one.txt", "Item 0 is stored in bin 0.\n");
    write("many.txt", many);
    ASSERT_EQ(run("build " + path("one.txt") + " --out " + path("one.kvp")).code, 0);
    ASSERT_EQ(run("build " + path("many.txt") + " --out " + path("many.kvp")).code, 0);
    const auto a = run("query " + path("one.kvp") + " -q 'Where is item 3?' --max-new 1").fields();
    const auto b = run("query " + path("many.kvp") + " -q 'Where is item 3?' --max-new 1").fields();
    EXPECT_EQ(a.at("prompt_tokens"), b.at("prompt_tokens"));
    EXPECT_LT(std::stoul(a.at("rag_prompt_tokens")), std::stoul(b.at("rag_prompt_tokens")));
}

TEST_F(Cli, MidLayersOnThirtySixLayerConfig) {
    const auto cfg = write("deep.cfg", "# deep toy\nn_layers = 36\n");
    const auto facts = write("f.txt", "Ada keeps bees.\n");
    write("good.txt", "Be kind.\n");
    write("bad.txt", "Be cold.\n");
    const std::string c = " --config " + cfg;
    ASSERT_EQ(run("build " + facts + " --out " + path("a.kvp") + c).code, 0);
    ASSERT_EQ(run("steer build-delta --good " + path("good.txt") + " --bad " + path("bad.txt") + " --out " +
                  path("d.kvd") + c)
                  .code,
              0);
    const auto r = run("query " + path("a.kvp") + " -q hi --delta " + path("d.kvd") + " --layers mid --max-new 2" + c);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.fields().at("layers"), "mid [12,13,14,15,16,17,18,19,20,21,22,23]");
}

TEST_F(Cli, FingerprintMismatchIsUsageError) {
    const auto facts = write("f.txt", kFacts);
    ASSERT_EQ(run("build " + facts + " --out " + path("a.kvp")).code, 0);
    const auto r = run("query " + path("a.kvp") + " -q hi", "KVPACK_SEED=99");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("model"), std::string::npos);
}

TEST_F(Cli, SeedOverrideChangesFingerprint) {
    const auto facts = write("f.txt", kFacts);
    const auto a = run("build " + facts + " --out " + path("a.kvp"), "KVPACK_SEED=99");
    ModelConfig c;
    c.weight_seed = 99;
    EXPECT_EQ(a.fields().at("fingerprint"), c.fingerprint().hex);
}

TEST_F(Cli, IoAndFormatErrorsExitThree) {
    EXPECT_EQ(run("query " + path("missing.kvp") + " -q hi").code, 3);
    write("junk.kvp", "not a pack at all");
    EXPECT_EQ(run("query " + path("junk.kvp") + " -q hi").code, 3);
    EXPECT_EQ(run("inspect " + path("junk.kvp")).code, 3);
}

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("build").code, 2);
    EXPECT_EQ(run("verify --random 1 --format yaml").code, 2);
    EXPECT_EQ(run("verify --random 1 --dialect nope").code, 2);
    const auto cfg = write("bad.cfg", "colour = blue\n");
    const auto r = run("verify --random 1 --config " + cfg);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("colour"), std::string::npos);
}

TEST_F(Cli, ComposeSequentialMatchesJointBuild) {
    write("a.txt", "Ada keeps bees.\n");
    write("b.txt", "Bo keeps goats.\n");
    ASSERT_EQ(run("build " + path("a.txt") + " --out " + path("a.kvp")).code, 0);
    ASSERT_EQ(run("build " + path("b.txt") + " --out " + path("b.kvp")).code, 0);
    const auto s = run("compose " + path("a.kvp") + " " + path("b.kvp") + " --sequential --out " + path("s.kvp"));
    ASSERT_EQ(s.code, 0) << s.err;
    const auto n = run("compose " + path("a.kvp") + " " + path("b.kvp") + " --naive --out " + path("n.kvp"));
    ASSERT_EQ(n.code, 0) << n.err;
    const std::vector<BuildRequest> both = {{{"Ada keeps bees."}}, {{"Bo keeps goats."}}};
    const auto joint = build_pack(testing::engine(), both);
    EXPECT_TRUE(testing::bit_equal(load_pack(path("s.kvp")).cache, joint.cache));
    EXPECT_FALSE(caches_equal(load_pack(path("n.kvp")).cache, joint.cache).equal);
    EXPECT_EQ(s.fields().at("segments"), "2");
    EXPECT_EQ(run("compose " + path("a.kvp") + " " + path("b.kvp") + " --naive --sequential --out " + path("x.kvp")).code, 2);
}

TEST_F(Cli, SteerApplyAndCosine) {
    const auto facts = write("f.txt", kFacts);
    write("good.txt", "Be kind.\nBe warm.\n");
    write("bad.txt", "Be cold.\nBe mean.\n");
    ASSERT_EQ(run("build " + facts + " --out " + path("a.kvp")).code, 0);
    ASSERT_EQ(run("steer build-delta --good " + path("good.txt") + " --bad " + path("bad.txt") + " --out " + path("d.kvd")).code, 0);
    const auto c = run("steer cosine " + path("d.kvd") + " " + path("d.kvd"));
    EXPECT_EQ(c.fields().at("cosine"), "1.000000");
    const auto a = run("steer apply " + path("a.kvp") + " " + path("d.kvd") + " --alpha 0.5 --layers all --out " + path("s.kvp"));
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(run("inspect " + path("s.kvp")).fields().at("steered"), "yes");
    const auto k = run("steer build-delta --steer-keys --good " + path("good.txt") + " --bad " + path("bad.txt") +
                       " --out " + path("k.kvd"));
    EXPECT_NE(k.err.find("debug"), std::string::npos);
    EXPECT_EQ(run("inspect " + path("k.kvd")).fields().at("channel"), "keys");
}

TEST_F(Cli, VerifyEquivalenceRandom) {
    const auto r = run("verify --random 20 --no-timing --max-new 8");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.fields().at("divergences"), "0/20");
}

TEST_F(Cli, VerifyCasesFileAndParseError) {
    const auto cases = write("c.tsv", "fact\ta\tAda keeps bees.\ncase\ta\tWho keeps bees?\tAda\n");
    const auto r = run("verify " + cases + " --max-new 4");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.fields().at("divergences"), "0/1");
    const auto bad = write("bad.tsv", "fact\ta\tx\ncase\tq\tWho?\n");
    const auto e = run("verify " + bad);
    EXPECT_EQ(e.code, 2);
    EXPECT_NE(e.err.find("line 2"), std::string::npos);
}

TEST_F(Cli, LintExitCodes) {
    const auto a = run("verify --mode lint --dialect chatml");
    EXPECT_EQ(a.code, 0);
    EXPECT_EQ(a.fields().at("findings"), "0");
    const auto b = run("verify --mode lint --dialect llama3");
    EXPECT_EQ(b.code, 1);
    EXPECT_NE(b.out.find("duplicated special token <|begin_of_text|>"), std::string::npos);
}

TEST_F(Cli, TokensModeAndReportTokens) {
    const auto cases = write("t.tsv", "tokens\t35\t704\n");
    const auto r = run("verify " + cases + " --mode tokens");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("step 1 savings: 704 (95%)"), std::string::npos);
    const auto t = run("report-tokens --question-tokens 31 --step-facts 157");
    EXPECT_NE(t.out.find("step 1 savings: 157 (84%)"), std::string::npos);
    const auto rec = run("report-tokens --question-tokens 31 --step-facts 157 --format records");
    EXPECT_NE(rec.out.find("step 1 savings\t157 (84%)"), std::string::npos);
    const auto facts = write("f.txt", kFacts);
    const auto m = run("report-tokens --facts " + facts + " -q 'Who keeps owls?'");
    EXPECT_EQ(m.code, 0) << m.err;
    const auto f = m.fields();
    EXPECT_EQ(f.at("step 1 kv_tokens"), f.at("step 3 kv_tokens"));
}

TEST_F(Cli, RouteBuildSaveAndAnswer) {
    const auto corpus = make_synthetic_corpus(100);
    std::string text;
    for (const auto& f : corpus.facts) text += f + "\n";
    const auto facts = write("facts.txt", text);
    const auto r = run("route --build " + facts + " --save " + path("i.kvbi") + " -q '" + corpus.queries[4] +
                       "' --no-timing --max-new 8");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto f = r.fields();
    EXPECT_EQ(f.at("banks"), "5");
    EXPECT_LT(std::stod(f.at("storage_bytes_per_fact")), 1024.0);
    EXPECT_EQ(f.at("top_fact"), corpus.facts[4]);
    EXPECT_EQ(f.count("recompute_ms"), 0u);

    // Same answer as building and querying the top fact by hand.
    write("top.txt", corpus.facts[4] + "\n");
    ASSERT_EQ(run("build " + path("top.txt") + " --out " + path("top.kvp")).code, 0);
    const auto q = run("query " + path("top.kvp") + " -q '" + corpus.queries[4] + "' --max-new 8");
    EXPECT_EQ(q.fields().at("answer"), f.at("answer"));

    const auto again = run("route " + path("i.kvbi") + " -q '" + corpus.queries[4] + "' --no-timing --max-new 8");
    EXPECT_EQ(again.out, r.out.substr(r.out.find("facts:")));
    EXPECT_EQ(run("route").code, 2);
}

TEST_F(Cli, OutputIsDeterministicWithoutTiming) {
    const auto facts = write("f.txt", kFacts);
    const auto a = run("build " + facts + " --out " + path("a.kvp") + " --no-timing");
    const auto b = run("build " + facts + " --out " + path("b.kvp") + " --no-timing");
    EXPECT_EQ(a.out, b.out);
    const auto qa = run("query " + path("a.kvp") + " -q hi --no-timing");
    const auto qb = run("query " + path("b.kvp") + " -q hi --no-timing");
    EXPECT_EQ(qa.out, qb.out);
    EXPECT_EQ(run("inspect " + path("a.kvp")).out, run("inspect " + path("b.kvp")).out);
}

TEST_F(Cli, TemplateFileAddsDialect) {
    const auto t = write("x.tmpl",
                         "dialect = plain\nsystem.begin = [S]\nsystem.end = \\n\nuser.begin = [U]\nuser.end = \\n\n"
                         "assistant.begin = [A]\nassistant.end = \\n\ngeneration = [A]\n");
    const auto facts = write("f.txt", kFacts);
    const auto r = run("build " + facts + " --out " + path("a.kvp") + " --template " + t + " --dialect plain");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.fields().at("dialect"), "plain");
    const auto q = run("query " + path("a.kvp") + " -q hi --template " + t + " --dialect plain --max-new 2");
    EXPECT_EQ(q.code, 0) << q.err;
}

}  // namespace
}  // namespace kvpack
