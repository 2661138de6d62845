// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/detail/bytes.hpp"
#include "kvpack/embedding.hpp"
#include "kvpack/engine.hpp"
#include "kvpack/error.hpp"
#include "kvpack/pack.hpp"
#include "kvpack/pipeline.hpp"

namespace kvpack {

struct KMeansResult {
    std::vector<Embedding> centroids;
    std::vector<std::uint32_t> assignments;
    // Sum over points of (1 - cos(point, its centroid)), one entry per assignment step.
    std::vector<double> distortion;
    std::uint32_t iterations = 0;
    bool converged = false;
};

inline constexpr std::uint32_t kMaxKMeansIterations = 100;
inline constexpr std::uint64_t kDefaultRoutingSeed = 20;

namespace detail {

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return s;
}

// Uniform double in [0, 1) from the top 53 bits; std distributions are not
// pinned across standard libraries.
inline double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::uint32_t nearest_centroid(std::span<const float> x, const std::vector<Embedding>& centroids,
                                      double* best_cos = nullptr) {
    std::uint32_t best = 0;
    double best_c = -std::numeric_limits<double>::infinity();
    for (std::uint32_t c = 0; c < centroids.size(); ++c) {
        const double v = cosine(x, centroids[c]);
        if (v > best_c) {
            best_c = v;
            best = c;
        }
    }
    if (best_cos) *best_cos = best_c;
    return best;
}

inline std::vector<Embedding> kmeans_pp_seeds(const std::vector<Embedding>& xs, std::uint32_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = xs.size();
    std::vector<bool> chosen(n, false);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<Embedding> out;
    std::size_t pick = static_cast<std::size_t>(rng() % n);
    for (;;) {
        chosen[pick] = true;
        out.push_back(xs[pick]);
        if (out.size() == k) break;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(xs[i], xs[pick]));
            if (!chosen[i]) total += d2[i];
        }
        if (total == 0.0) {
            pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
            continue;
        }
        const double target = unit_draw(rng) * total;
        double acc = 0.0;
        std::size_t last = n;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i] || d2[i] == 0.0) continue;
            last = i;
            acc += d2[i];
            if (acc > target) {
                pick = i;
                break;
            }
        }
        if (pick == n) pick = last;
    }
    return out;
}

}  // namespace detail

/// Lloyd's algorithm with cosine assignment and arithmetic-mean update.
/// k-means++ seeding (squared Euclidean) from `seed`; nearest-centroid ties go
/// to the lowest index; an empty cluster is re-seeded with the point farthest
/// from its current centroid. Stops at an assignment fixpoint or after 100 steps.
inline KMeansResult kmeans(const std::vector<Embedding>& xs, std::uint32_t k, std::uint64_t seed) {
    if (xs.empty()) throw RangeError("kmeans needs at least one vector");
    if (k < 1 || k > xs.size()) {
        throw RangeError("k = " + std::to_string(k) + " out of range [1, " + std::to_string(xs.size()) + "]");
    }
    const std::size_t dim = xs.front().size();
    for (const auto& x : xs) {
        if (x.size() != dim) throw ConfigError("kmeans vectors must share one dimension");
    }

    KMeansResult r;
    r.centroids = detail::kmeans_pp_seeds(xs, k, seed);
    std::vector<double> cos_to(xs.size());
    std::vector<std::uint32_t> prev;
    for (std::uint32_t it = 0; it < kMaxKMeansIterations; ++it) {
        r.assignments.assign(xs.size(), 0);
        double distortion = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            r.assignments[i] = detail::nearest_centroid(xs[i], r.centroids, &cos_to[i]);
            distortion += 1.0 - cos_to[i];
        }
        r.distortion.push_back(distortion);
        r.iterations = it + 1;
        if (r.assignments == prev) {
            r.converged = true;
            break;
        }
        prev = r.assignments;

        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            auto& s = sums[r.assignments[i]];
            for (std::size_t d = 0; d < dim; ++d) s[d] += xs[i][d];
            ++counts[r.assignments[i]];
        }
        for (std::uint32_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t d = 0; d < dim; ++d) {
                r.centroids[c][d] = static_cast<float>(sums[c][d] / static_cast<double>(counts[c]));
            }
        }
        for (std::uint32_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            for (std::size_t i = 1; i < xs.size(); ++i) {
                if (cos_to[i] < cos_to[far]) far = i;
            }
            r.centroids[c] = xs[far];
            cos_to[far] = 1.0;  // not reused for another empty cluster
            prev.clear();       // force another assignment step
        }
    }
    return r;
}

inline std::uint32_t default_bank_count(std::size_t n_facts) {
    return static_cast<std::uint32_t>((n_facts + 19) / 20);
}

/// Facts partitioned into banks. Only texts and embeddings are kept; caches are
/// rebuilt on demand.
struct BankIndex {
    std::uint32_t dim = kEmbeddingDim;
    std::uint64_t seed = kDefaultRoutingSeed;
    std::vector<Embedding> centroids;
    std::vector<std::uint32_t> assignments;
    std::vector<std::string> facts;
    std::vector<Embedding> embeddings;

    std::uint32_t k() const noexcept { return static_cast<std::uint32_t>(centroids.size()); }
    std::size_t size() const noexcept { return facts.size(); }

    std::vector<std::uint32_t> members(std::uint32_t bank) const {
        std::vector<std::uint32_t> out;
        for (std::uint32_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] == bank) out.push_back(i);
        }
        return out;
    }

    friend bool operator==(const BankIndex&, const BankIndex&) = default;
};

inline BankIndex build_bank_index(std::span<const std::string> facts, std::optional<std::uint32_t> k = std::nullopt,
                                  std::uint64_t seed = kDefaultRoutingSeed) {
    if (facts.empty()) throw ConfigError("cannot index an empty fact list");
    BankIndex idx;
    idx.seed = seed;
    idx.facts.assign(facts.begin(), facts.end());
    for (const auto& f : facts) idx.embeddings.push_back(embed_text(f, idx.dim));
    auto km = kmeans(idx.embeddings, k.value_or(default_bank_count(facts.size())), seed);
    idx.centroids = std::move(km.centroids);
    idx.assignments = std::move(km.assignments);
    return idx;
}

struct RouteResult {
    std::uint32_t bank = 0;
    double bank_score = 0.0;
    std::vector<std::uint32_t> ranked;  // fact ids, best first
    std::vector<double> scores;         // cosine to the query, parallel to ranked
    std::optional<std::string> warning;
};

/// Nearest non-empty bank by cosine (ties to the lowest bank id), then facts in
/// that bank ranked by cosine (ties to the lowest fact id), truncated to top_m.
inline RouteResult route_query(const BankIndex& index, std::string_view query, std::uint32_t top_m = 1) {
    if (top_m < 1) throw RangeError("top_m must be at least 1");
    if (index.facts.empty() || index.centroids.empty()) throw ConfigError("routing over an empty index");
    const Embedding q = embed_text(query, index.dim);
    RouteResult r;
    if (l2_norm(q) == 0.0) r.warning = "query has no words; routed by tie-break";

    std::vector<std::size_t> counts(index.k(), 0);
    for (auto a : index.assignments) ++counts[a];
    double best = -std::numeric_limits<double>::infinity();
    for (std::uint32_t b = 0; b < index.k(); ++b) {
        if (counts[b] == 0) continue;
        const double c = cosine(q, index.centroids[b]);
        if (c > best) {
            best = c;
            r.bank = b;
        }
    }
    r.bank_score = best;

    std::vector<std::pair<double, std::uint32_t>> scored;
    for (auto id : index.members(r.bank)) scored.emplace_back(cosine(q, index.embeddings[id]), id);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < scored.size() && i < top_m; ++i) {
        r.scores.push_back(scored[i].first);
        r.ranked.push_back(scored[i].second);
    }
    return r;
}

struct RoutedAnswer {
    RouteResult route;
    QueryResult result;
    double route_ms = 0.0;
    double recompute_ms = 0.0;
    double read_ms = 0.0;
};

/// Routes, rebuilds a pack from the ranked facts, and runs the read phase.
inline RoutedAnswer answer_via_banks(const Engine& engine, const BankIndex& index, std::string_view query,
                                     std::string_view dialect, std::size_t max_new, std::uint32_t top_m = 1) {
    using Clock = std::chrono::steady_clock;
    auto ms = [](Clock::time_point a, Clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };
    RoutedAnswer out;
    const auto t0 = Clock::now();
    out.route = route_query(index, query, top_m);
    const auto t1 = Clock::now();
    BuildRequest req;
    req.dialect = std::string(dialect);
    for (auto id : out.route.ranked) req.facts.push_back(index.facts[id]);
    const KnowledgePack pack = build_pack(engine, req);
    const auto t2 = Clock::now();
    out.result = query_with_pack(engine, pack, query, max_new);
    const auto t3 = Clock::now();
    out.route_ms = ms(t0, t1);
    out.recompute_ms = ms(t1, t2);
    out.read_ms = ms(t2, t3);
    return out;
}

/*
 * Index file layout (little-endian, version 1):
 *
 *   off  size  field
 *     0     4  magic "KVBI"
 *     4     2  format version (u16)
 *     6     4  embedding dim
 *    10     4  k
 *    14     4  N (facts)
 *    18     8  k-means seed
 *    26        payload: centroids k*dim f32, assignments N u32,
 *              facts (u32 length + bytes), embeddings N*dim f32
 */
inline constexpr char kIndexMagic[4] = {'K', 'V', 'B', 'I'};
inline constexpr std::uint16_t kIndexVersion = 1;
inline constexpr std::size_t kIndexHeaderBytes = 26;

inline std::vector<std::uint8_t> serialize_index(const BankIndex& idx) {
    if (idx.embeddings.size() != idx.facts.size() || idx.assignments.size() != idx.facts.size()) {
        throw ConfigError("index facts, embeddings and assignments must align");
    }
    detail::ByteWriter w;
    w.raw(std::string_view(kIndexMagic, 4));
    w.u16(kIndexVersion);
    w.u32(idx.dim);
    w.u32(idx.k());
    w.u32(static_cast<std::uint32_t>(idx.size()));
    w.u64(idx.seed);
    for (const auto& c : idx.centroids) {
        if (c.size() != idx.dim) throw ConfigError("centroid dimension mismatch");
        w.f32s(c);
    }
    for (auto a : idx.assignments) w.u32(a);
    for (const auto& f : idx.facts) w.str(f);
    for (const auto& e : idx.embeddings) {
        if (e.size() != idx.dim) throw ConfigError("embedding dimension mismatch");
        w.f32s(e);
    }
    return std::move(w).take();
}

inline BankIndex deserialize_index(std::span<const std::uint8_t> bytes) {
    using K = FormatError::Kind;
    detail::ByteReader r(bytes);
    detail::check_magic(r, kIndexMagic, "bank index");
    detail::check_version(r, kIndexVersion);
    BankIndex idx;
    idx.dim = r.u32();
    const auto k = r.u32();
    const auto n = r.u32();
    idx.seed = r.u64();
    if (idx.dim == 0) throw FormatError(K::Malformed, "embedding dim 0");
    if (n == 0 || k == 0 || k > n) throw FormatError(K::Malformed, "k must be in [1, N] with N >= 1");
    r.need_elems(static_cast<std::size_t>(k) * idx.dim, 4);
    for (std::uint32_t c = 0; c < k; ++c) idx.centroids.push_back(r.f32s(idx.dim));
    r.need_elems(n, 4);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto a = r.u32();
        if (a >= k) throw FormatError(K::Malformed, "assignment " + std::to_string(a) + " >= k");
        idx.assignments.push_back(a);
    }
    r.need_elems(n, 4);
    for (std::uint32_t i = 0; i < n; ++i) idx.facts.push_back(r.str());
    r.need_elems(static_cast<std::size_t>(n) * idx.dim, 4);
    for (std::uint32_t i = 0; i < n; ++i) idx.embeddings.push_back(r.f32s(idx.dim));
    r.expect_end();
    return idx;
}

inline void save_index(const BankIndex& idx, const std::string& path) { detail::write_file(path, serialize_index(idx)); }
inline BankIndex load_index(const std::string& path) { return deserialize_index(detail::read_file(path)); }

/// Serialized index size divided by fact count.
inline double storage_bytes_per_fact(const BankIndex& idx) {
    return static_cast<double>(serialize_index(idx).size()) / static_cast<double>(idx.size());
}

/// Facts in well-separated topics. Each fact repeats its topic's three words so
/// the topic dominates the embedding. Words are drawn by rejection on their hash
/// slot (bucket and sign): two topics share at most one slot, and inside a topic
/// every entity has its own slot while all value words share one slot that no
/// entity, topic word or filler word uses. Queries are the fact text without the code value.
struct SyntheticCorpus {
    std::vector<std::string> facts;
    std::vector<std::string> queries;
    std::vector<std::string> answers;
    std::vector<std::uint32_t> topics;
};

namespace detail {

inline std::string pseudo_word(std::mt19937_64& rng, int syllables) {
    static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
    static constexpr std::string_view kVowels = "aeiou";
    std::string w;
    for (int i = 0; i < syllables; ++i) {
        w += kOnsets[rng() % kOnsets.size()];
        w += kVowels[rng() % kVowels.size()];
    }
    return w;
}

// Bucket * 2 + sign bit, as used by embed_text.
inline std::uint32_t hash_slot(std::string_view word, std::uint32_t dim = kEmbeddingDim) {
    const std::uint64_t h = fnv1a64(word, kEmbeddingHashSeed);
    return static_cast<std::uint32_t>((h % dim) * 2 + ((h >> 32) & 1U));
}

template <class Accept>
std::string draw_word(std::mt19937_64& rng, int syllables, std::string_view suffix, Accept accept) {
    for (;;) {
        std::string w = pseudo_word(rng, syllables);
        w += suffix;
        if (accept(hash_slot(w))) return w;
    }
}

}  // namespace detail

inline SyntheticCorpus make_synthetic_corpus(std::size_t n, std::optional<std::uint32_t> n_topics = std::nullopt,
                                             std::uint64_t seed = 7) {
    if (n == 0) throw ConfigError("corpus size must be positive");
    std::mt19937_64 rng(seed);
    const std::uint32_t topics = n_topics.value_or(default_bank_count(n));

    std::vector<std::array<std::uint32_t, 3>> topic_slots;
    std::vector<std::string> phrases;
    for (std::uint32_t t = 0; t < topics; ++t) {
        for (;;) {
            std::array<std::string, 3> words;
            std::array<std::uint32_t, 3> slots{};
            for (int i = 0; i < 3; ++i) {
                words[i] = detail::draw_word(rng, 3, "", [&](std::uint32_t s) {
                    for (int j = 0; j < i; ++j) {
                        if (slots[j] / 2 == s / 2) return false;
                    }
                    return true;
                });
                slots[i] = detail::hash_slot(words[i]);
            }
            const bool separated = std::all_of(topic_slots.begin(), topic_slots.end(), [&](const auto& other) {
                int shared = 0;
                for (auto a : slots) shared += static_cast<int>(std::count(other.begin(), other.end(), a));
                return shared <= 1;
            });
            if (!separated) continue;
            topic_slots.push_back(slots);
            phrases.push_back(words[0] + " " + words[1] + " " + words[2]);
            break;
        }
    }

    const std::uint32_t filler = detail::hash_slot("code") / 2;
    std::vector<std::vector<std::uint32_t>> entity_slots(topics);
    std::vector<std::vector<std::uint32_t>> value_buckets(topics);
    SyntheticCorpus c;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<std::uint32_t>(i % topics);
        const auto& ts = topic_slots[t];
        auto& ents = entity_slots[t];
        auto& vals = value_buckets[t];
        auto free_bucket = [&](std::uint32_t s) {
            return s / 2 != filler && std::none_of(ts.begin(), ts.end(), [&](auto x) { return x / 2 == s / 2; });
        };
        const std::string entity = detail::draw_word(rng, 2, "", [&](std::uint32_t s) {
            return free_bucket(s) && std::find(ents.begin(), ents.end(), s) == ents.end() &&
                   (vals.empty() || vals.front() / 2 != s / 2);
        });
        ents.push_back(detail::hash_slot(entity));
        const std::string value = detail::draw_word(rng, 2, std::to_string(rng() % 1000), [&](std::uint32_t s) {
            if (!vals.empty()) return s == vals.front();
            return free_bucket(s) && std::none_of(ents.begin(), ents.end(), [&](auto x) { return x / 2 == s / 2; });
        });
        vals.push_back(detail::hash_slot(value));
        const std::string& p = phrases[t];
        const std::string body = entity + ": " + p + ", " + p + ", " + p + ", " + p + ";";
        c.facts.push_back(body + " code " + value + ".");
        c.queries.push_back(body + " code?");
        c.answers.push_back(value);
        c.topics.push_back(t);
    }
    return c;
}

}  // namespace kvpack
