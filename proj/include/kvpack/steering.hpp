// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kvpack/detail/bytes.hpp"
#include "kvpack/engine.hpp"
#include "kvpack/kv_cache.hpp"
#include "kvpack/pack.hpp"
#include "kvpack/pipeline.hpp"

namespace kvpack {

/// Which cache tensor a delta was taken from and is applied to. Keys exist only
/// as a debug arm: rotated keys do not tolerate arithmetic.
enum class DeltaChannel : std::uint8_t { Values = 0, Keys = 1 };

struct SteeringDelta {
    ModelConfig config;
    DeltaChannel channel = DeltaChannel::Values;
    std::uint32_t length = 0;              // source rows T_d
    std::vector<std::uint32_t> layers;     // covered layers, ascending
    std::vector<std::vector<double>> diffs;  // parallel to layers, T_d x d_model each
    std::vector<std::string> labels;       // provenance, e.g. pair ids
    std::uint32_t truncated_pairs = 0;

    Fingerprint fingerprint() const { return config.fingerprint(); }

    const std::vector<double>* diff_for(std::uint32_t layer) const {
        const auto it = std::lower_bound(layers.begin(), layers.end(), layer);
        if (it == layers.end() || *it != layer) return nullptr;
        return &diffs[static_cast<std::size_t>(it - layers.begin())];
    }

    bool all_zero() const {
        for (const auto& d : diffs) {
            for (double x : d) {
                if (x != 0.0) return false;
            }
        }
        return true;
    }
};

/// Named or explicit set of layer indices. Terciles: early = [0, L/3),
/// mid = [L/3, 2L/3), late = [2L/3, L) with floor division.
struct LayerRange {
    std::string name;
    std::vector<std::uint32_t> indices;

    static LayerRange span_of(std::string name, std::uint32_t begin, std::uint32_t end) {
        LayerRange r{std::move(name), {}};
        for (auto l = begin; l < end; ++l) r.indices.push_back(l);
        return r;
    }

    static LayerRange all(std::uint32_t n) { return span_of("all", 0, n); }
    static LayerRange early(std::uint32_t n) { return span_of("early", 0, n / 3); }
    static LayerRange mid(std::uint32_t n) { return span_of("mid", n / 3, 2 * n / 3); }
    static LayerRange late(std::uint32_t n) { return span_of("late", 2 * n / 3, n); }

    /// Accepts all | early | mid | late | a comma list of indices and a-b ranges (inclusive).
    static LayerRange parse(std::string_view spec, std::uint32_t n_layers) {
        if (spec == "all") return all(n_layers);
        if (spec == "early") return early(n_layers);
        if (spec == "mid") return mid(n_layers);
        if (spec == "late") return late(n_layers);
        LayerRange r{std::string(spec), {}};
        auto num = [&](std::string_view s) {
            std::uint32_t v = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
                throw RangeError("bad layer range '" + std::string(spec) + "'");
            }
            if (v >= n_layers) {
                throw RangeError("layer " + std::to_string(v) + " out of range for " + std::to_string(n_layers) +
                                 " layers");
            }
            return v;
        };
        std::size_t at = 0;
        while (at <= spec.size()) {
            const auto comma = std::min(spec.find(',', at), spec.size());
            const auto item = spec.substr(at, comma - at);
            if (const auto dash = item.find('-'); dash != std::string_view::npos) {
                const auto lo = num(item.substr(0, dash));
                const auto hi = num(item.substr(dash + 1));
                if (lo > hi) throw RangeError("empty layer range '" + std::string(item) + "'");
                for (auto l = lo; l <= hi; ++l) r.indices.push_back(l);
            } else {
                r.indices.push_back(num(item));
            }
            at = comma + 1;
        }
        std::sort(r.indices.begin(), r.indices.end());
        r.indices.erase(std::unique(r.indices.begin(), r.indices.end()), r.indices.end());
        return r;
    }

    std::string describe() const {
        std::string s = name + " [";
        for (std::size_t i = 0; i < indices.size(); ++i) s += (i ? "," : "") + std::to_string(indices[i]);
        return s + "]";
    }
};

namespace detail {

// The cache a single steering example produces: the example as a lone system turn.
inline KvCache example_cache(const Engine& engine, const std::string& text, const std::string& dialect) {
    return build_pack(engine, BuildRequest{{text}, dialect, true}).cache;
}

inline void check_same_model(const Fingerprint& a, const Fingerprint& b) {
    if (a != b) throw FingerprintMismatch("fingerprints differ: " + a.hex + " vs " + b.hex);
}

}  // namespace detail

/// Mean over pairs of (good - bad) cache tensors on every layer. Pairs are
/// aligned by truncation to the shortest row count among all pairs; the number
/// of pairs that lost rows is recorded.
inline SteeringDelta build_delta(const Engine& engine, std::span<const std::string> good,
                                 std::span<const std::string> bad, const std::string& dialect = "chatml",
                                 DeltaChannel channel = DeltaChannel::Values) {
    if (good.empty() || bad.empty()) throw ConfigError("build_delta needs at least one good/bad pair");
    if (good.size() != bad.size()) {
        throw ConfigError("good/bad count mismatch: " + std::to_string(good.size()) + " vs " +
                          std::to_string(bad.size()));
    }
    const auto& cfg = engine.config();
    std::vector<std::pair<KvCache, KvCache>> caches;
    std::size_t rows = SIZE_MAX;
    for (std::size_t i = 0; i < good.size(); ++i) {
        caches.emplace_back(detail::example_cache(engine, good[i], dialect),
                            detail::example_cache(engine, bad[i], dialect));
        rows = std::min({rows, caches.back().first.length(), caches.back().second.length()});
    }

    SteeringDelta d;
    d.config = cfg;
    d.channel = channel;
    d.length = static_cast<std::uint32_t>(rows);
    const std::size_t n = rows * cfg.d_model;
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        std::vector<double> acc(n, 0.0);
        for (const auto& [g, b] : caches) {
            const auto& gs = channel == DeltaChannel::Values ? g.layer(l).values : g.layer(l).keys;
            const auto& bs = channel == DeltaChannel::Values ? b.layer(l).values : b.layer(l).keys;
            for (std::size_t i = 0; i < n; ++i) acc[i] += static_cast<double>(gs[i]) - static_cast<double>(bs[i]);
        }
        for (auto& x : acc) x /= static_cast<double>(caches.size());
        d.layers.push_back(l);
        d.diffs.push_back(std::move(acc));
    }
    for (std::size_t i = 0; i < caches.size(); ++i) {
        d.labels.push_back("pair-" + std::to_string(i));
        if (caches[i].first.length() != rows || caches[i].second.length() != rows) ++d.truncated_pairs;
    }
    return d;
}

/// V[l] += alpha * delta over the first min(T, T_d) rows for l in range; keys
/// and all other layers are left bit-identical. A Keys-channel delta adds to K
/// instead (debug path).
inline KvCache apply_delta(const KvCache& cache, const SteeringDelta& delta, double alpha, const LayerRange& range) {
    detail::check_same_model(cache.fingerprint(), delta.fingerprint());
    for (auto l : range.indices) {
        if (!delta.diff_for(l)) {
            throw RangeError("delta does not cover layer " + std::to_string(l) + " of range " + range.describe());
        }
    }
    if (alpha == 0.0) return cache;
    KvCache out = cache;
    const std::size_t n = std::min<std::size_t>(cache.length(), delta.length) * cache.width();
    for (auto l : range.indices) {
        const auto& diff = *delta.diff_for(l);
        if (delta.channel == DeltaChannel::Values) {
            auto& shift = out.value_shift_mut(l);
            for (std::size_t i = 0; i < n; ++i) shift[i] += alpha * diff[i];
        } else {
            auto& keys = out.layer_mut(l).keys;
            for (std::size_t i = 0; i < n; ++i) {
                keys[i] = static_cast<float>(static_cast<double>(keys[i]) + alpha * diff[i]);
            }
        }
    }
    return out;
}

/// Weighted sum over the union of covered layers, accumulated in ascending term
/// order; uncovered layers contribute zero. Source length is the minimum.
inline SteeringDelta compose_deltas(std::span<const std::pair<SteeringDelta, double>> terms) {
    if (terms.empty()) throw ConfigError("compose_deltas needs at least one term");
    const auto& first = terms.front().first;
    SteeringDelta out;
    out.config = first.config;
    out.channel = first.channel;
    out.length = first.length;
    for (const auto& [d, alpha] : terms) {
        detail::check_same_model(first.fingerprint(), d.fingerprint());
        if (d.channel != first.channel) throw ConfigError("cannot compose key and value deltas");
        out.length = std::min(out.length, d.length);
        out.layers.insert(out.layers.end(), d.layers.begin(), d.layers.end());
        for (const auto& lab : d.labels) out.labels.push_back(lab);
        out.truncated_pairs += d.truncated_pairs;
    }
    std::sort(out.layers.begin(), out.layers.end());
    out.layers.erase(std::unique(out.layers.begin(), out.layers.end()), out.layers.end());
    const std::size_t n = static_cast<std::size_t>(out.length) * out.config.d_model;
    for (auto l : out.layers) {
        std::vector<double> acc(n, 0.0);
        for (const auto& [d, alpha] : terms) {
            const auto* diff = d.diff_for(l);
            if (!diff) continue;
            for (std::size_t i = 0; i < n; ++i) acc[i] += alpha * (*diff)[i];
        }
        out.diffs.push_back(std::move(acc));
    }
    return out;
}

/// Cosine of the flattened deltas over shared layers, truncated to the shorter
/// source length. 0 when either side is all zero.
inline double delta_cosine(const SteeringDelta& a, const SteeringDelta& b) {
    detail::check_same_model(a.fingerprint(), b.fingerprint());
    const std::size_t n = static_cast<std::size_t>(std::min(a.length, b.length)) * a.config.d_model;
    double ab = 0.0, aa = 0.0, bb = 0.0;
    bool shared = false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const auto* db = b.diff_for(a.layers[i]);
        if (!db) continue;
        shared = true;
        const auto& da = a.diffs[i];
        for (std::size_t j = 0; j < n; ++j) {
            ab += da[j] * (*db)[j];
            aa += da[j] * da[j];
            bb += (*db)[j] * (*db)[j];
        }
    }
    if (!shared) throw RangeError("deltas share no layers");
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Knowledge through the pack's full cache, steering through a delta on the
/// same cache. alpha = 0 is exactly the knowledge-only read phase.
inline QueryResult dual_channel_query(const Engine& engine, const KnowledgePack& pack, const SteeringDelta& delta,
                                      double alpha, const LayerRange& range, std::string_view question,
                                      std::size_t max_new) {
    KnowledgePack steered = pack;
    steered.cache = apply_delta(pack.cache, delta, alpha, range);
    return query_with_pack(engine, steered, question, max_new);
}

/*
 * Delta file layout (little-endian, version 1):
 *
 *   off  size  field
 *     0     4  magic "KVSD"
 *     4     2  format version (u16)
 *     6    16  model fingerprint, ASCII hex
 *    22    40  config echo (as in pack files)
 *    62     1  channel: 0 values, 1 keys
 *    63     4  T_d
 *    67     4  covered layer count n
 *    71     4  label count
 *    75     4  truncated pair count
 *    79        payload: n layer indices (u32, ascending), n tensors of T_d*d_model f64,
 *              labels (u32 length + bytes)
 */
inline constexpr char kDeltaMagic[4] = {'K', 'V', 'S', 'D'};
inline constexpr std::uint16_t kDeltaVersion = 1;
inline constexpr std::size_t kDeltaHeaderBytes = 79;

inline std::vector<std::uint8_t> serialize_delta(const SteeringDelta& d) {
    if (d.diffs.size() != d.layers.size()) throw ConfigError("delta tensors do not match covered layers");
    detail::ByteWriter w;
    w.raw(std::string_view(kDeltaMagic, 4));
    w.u16(kDeltaVersion);
    w.raw(d.fingerprint().hex);
    d.config.write_echo(w);
    w.u8(static_cast<std::uint8_t>(d.channel));
    w.u32(d.length);
    w.u32(static_cast<std::uint32_t>(d.layers.size()));
    w.u32(static_cast<std::uint32_t>(d.labels.size()));
    w.u32(d.truncated_pairs);
    for (auto l : d.layers) w.u32(l);
    for (const auto& t : d.diffs) w.f64s(t);
    for (const auto& s : d.labels) w.str(s);
    return std::move(w).take();
}

inline SteeringDelta deserialize_delta(std::span<const std::uint8_t> bytes) {
    using Kind = FormatError::Kind;
    detail::ByteReader r(bytes);
    detail::check_magic(r, kDeltaMagic, "steering delta");
    detail::check_version(r, kDeltaVersion);
    SteeringDelta d;
    d.config = detail::read_model_identity(r);
    const auto channel = r.u8();
    if (channel > 1) throw FormatError(Kind::Malformed, "channel " + std::to_string(channel));
    d.channel = static_cast<DeltaChannel>(channel);
    d.length = r.u32();
    const std::uint32_t n_layers = r.u32();
    const std::uint32_t n_labels = r.u32();
    d.truncated_pairs = r.u32();
    if (n_layers > d.config.n_layers) throw FormatError(Kind::SizeMismatch, "more covered layers than the model has");
    if (d.length > d.config.max_position) throw FormatError(Kind::SizeMismatch, "delta longer than max_position");
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const auto l = r.u32();
        if (l >= d.config.n_layers || (!d.layers.empty() && l <= d.layers.back())) {
            throw FormatError(Kind::Malformed, "covered layer list not ascending within model");
        }
        d.layers.push_back(l);
    }
    const std::size_t n = static_cast<std::size_t>(d.length) * d.config.d_model;
    for (std::uint32_t i = 0; i < n_layers; ++i) d.diffs.push_back(r.f64s(n));
    r.need_elems(n_labels, 4);
    for (std::uint32_t i = 0; i < n_labels; ++i) d.labels.push_back(r.str());
    r.expect_end();
    return d;
}

inline void save_delta(const SteeringDelta& d, const std::string& path) { detail::write_file(path, serialize_delta(d)); }
inline SteeringDelta load_delta(const std::string& path) { return deserialize_delta(detail::read_file(path)); }

}  // namespace kvpack
