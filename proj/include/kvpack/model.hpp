// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "kvpack/config.hpp"
#include "kvpack/error.hpp"
#include "kvpack/kv_cache.hpp"
#include "kvpack/tokenizer.hpp"

namespace kvpack {

/// Rotates consecutive pairs (2i, 2i+1) of a head vector by position * theta^(-2i/d).
/// Angles are evaluated in double and rounded to float once, so every caller
/// sees the same rotation for a given (position, theta).
inline void rope_rotate_inplace(std::span<float> v, std::uint32_t position, double theta) {
    if (v.size() % 2 != 0) throw ConfigError("rotary vector length must be even");
    if (position == 0) return;
    const double d = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size() / 2; ++i) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / d);
        const double angle = static_cast<double>(position) * freq;
        const float c = static_cast<float>(std::cos(angle));
        const float s = static_cast<float>(std::sin(angle));
        const float x0 = v[2 * i];
        const float x1 = v[2 * i + 1];
        v[2 * i] = x0 * c - x1 * s;
        v[2 * i + 1] = x0 * s + x1 * c;
    }
}

inline std::vector<float> rope_rotate(std::span<const float> v, std::uint32_t position, const ModelConfig& c) {
    if (v.size() != c.d_head) {
        throw ConfigError("rope_rotate: vector length " + std::to_string(v.size()) + " != d_head " +
                          std::to_string(c.d_head));
    }
    std::vector<float> out(v.begin(), v.end());
    rope_rotate_inplace(out, position, c.rope_theta);
    return out;
}

struct ModelWeights {
    struct Block {
        std::vector<float> attn_norm, wq, wk, wv, wo;
        std::vector<float> ffn_norm, w_up, w_down;
    };
    std::vector<float> embedding;  // vocab x d_model
    std::vector<Block> blocks;
    std::vector<float> final_norm;
    std::vector<float> lm_head;  // vocab x d_model

    friend bool operator==(const ModelWeights& a, const ModelWeights& b) {
        if (a.embedding != b.embedding || a.final_norm != b.final_norm || a.lm_head != b.lm_head) return false;
        if (a.blocks.size() != b.blocks.size()) return false;
        for (std::size_t i = 0; i < a.blocks.size(); ++i) {
            const auto& x = a.blocks[i];
            const auto& y = b.blocks[i];
            if (x.attn_norm != y.attn_norm || x.wq != y.wq || x.wk != y.wk || x.wv != y.wv || x.wo != y.wo ||
                x.ffn_norm != y.ffn_norm || x.w_up != y.w_up || x.w_down != y.w_down) {
                return false;
            }
        }
        return true;
    }

    /// mt19937_64 seeded with weight_seed; each draw u = (x >> 11) * 2^-53 maps to
    /// (2u - 1) / sqrt(d_model). Tensors are filled in declaration order, block by block.
    static ModelWeights init(const ModelConfig& c) {
        std::mt19937_64 rng(c.weight_seed);
        const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(c.d_model)));
        auto fill = [&](std::size_t n) {
            std::vector<float> w(n);
            for (auto& x : w) {
                const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
                x = static_cast<float>(2.0 * u - 1.0) * scale;
            }
            return w;
        };
        const std::size_t d = c.d_model;
        const std::size_t f = c.ffn_dim();
        ModelWeights w;
        w.embedding = fill(c.vocab_size * d);
        for (std::uint32_t l = 0; l < c.n_layers; ++l) {
            Block b;
            b.attn_norm.assign(d, 1.0f);
            b.wq = fill(d * d);
            b.wk = fill(d * d);
            b.wv = fill(d * d);
            b.wo = fill(d * d);
            b.ffn_norm.assign(d, 1.0f);
            b.w_up = fill(f * d);
            b.w_down = fill(d * f);
            w.blocks.push_back(std::move(b));
        }
        w.final_norm.assign(d, 1.0f);
        w.lm_head = fill(c.vocab_size * d);
        return w;
    }
};

struct ForwardResult {
    std::vector<float> logits;  // one vocab-sized row per new token
    std::uint32_t vocab = 0;
    KvCache cache;

    std::size_t rows() const noexcept { return vocab == 0 ? 0 : logits.size() / vocab; }
    std::span<const float> row(std::size_t i) const {
        return std::span(logits).subspan(i * vocab, vocab);
    }
};

/// Lowest id wins ties.
inline TokenId argmax(std::span<const float> logits) {
    TokenId best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = static_cast<TokenId>(i);
    }
    return best;
}

/// Small pre-norm decoder-only transformer with rotary positions and full
/// multi-head causal attention. Immutable after construction.
///
/// Every token is processed row by row with the same strictly sequential
/// float reductions, so a token's cache row and logits depend only on the
/// rows before it, never on how the sequence was split across calls.
class Model {
public:
    explicit Model(ModelConfig config) : config_(config) {
        config_.validate();
        fingerprint_ = config_.fingerprint();
        weights_ = ModelWeights::init(config_);
    }

    const ModelConfig& config() const noexcept { return config_; }
    const Fingerprint& fingerprint() const noexcept { return fingerprint_; }
    const ModelWeights& weights() const noexcept { return weights_; }

    KvCache empty_cache(std::uint32_t position_offset = 0) const {
        return KvCache::empty_for(config_, position_offset);
    }

    ForwardResult forward(std::span<const TokenId> tokens) const { return forward(tokens, empty_cache()); }

    ForwardResult forward(std::span<const TokenId> tokens, const KvCache& past) const {
        check_past(past, tokens.size());
        for (TokenId t : tokens) {
            if (t >= config_.vocab_size) {
                throw ConfigError("token id " + std::to_string(t) + " outside vocab of " +
                                  std::to_string(config_.vocab_size));
            }
        }

        const std::size_t d = config_.d_model;
        const std::size_t f = config_.ffn_dim();
        const std::size_t H = config_.n_heads;
        const std::size_t dh = config_.d_head;
        const float attn_scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));

        ForwardResult out;
        out.vocab = config_.vocab_size;
        out.cache = past;
        out.logits.resize(tokens.size() * config_.vocab_size);

        // Values as attention reads them: past rows with any steering shift folded in.
        std::vector<std::vector<float>> values(config_.n_layers);
        for (std::size_t l = 0; l < config_.n_layers; ++l) values[l] = past.effective_values(l);

        const std::size_t base_pos = past.position_offset() + past.length();
        std::vector<float> h(d), x(d), q(d), k(d), v(d), attn(d), proj(d), up(f), scores;

        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const auto pos = static_cast<std::uint32_t>(base_pos + i);
            const float* e = &weights_.embedding[tokens[i] * d];
            std::copy(e, e + d, h.begin());

            for (std::size_t l = 0; l < config_.n_layers; ++l) {
                const auto& B = weights_.blocks[l];
                rms_norm(h, B.attn_norm, x);
                matvec(B.wq, x, q);
                matvec(B.wk, x, k);
                matvec(B.wv, x, v);
                for (std::size_t hd = 0; hd < H; ++hd) {
                    rope_rotate_inplace(std::span(q).subspan(hd * dh, dh), pos, config_.rope_theta);
                    rope_rotate_inplace(std::span(k).subspan(hd * dh, dh), pos, config_.rope_theta);
                }
                out.cache.append_row(l, k, v);
                values[l].insert(values[l].end(), v.begin(), v.end());

                const auto& K = out.cache.layer(l).keys;
                const auto& V = values[l];
                const std::size_t n = K.size() / d;
                scores.resize(n);
                for (std::size_t hd = 0; hd < H; ++hd) {
                    const float* qh = &q[hd * dh];
                    float mx = -INFINITY;
                    for (std::size_t j = 0; j < n; ++j) {
                        const float* kj = &K[j * d + hd * dh];
                        float s = 0.0f;
                        for (std::size_t c = 0; c < dh; ++c) s += qh[c] * kj[c];
                        s *= attn_scale;
                        scores[j] = s;
                        if (s > mx) mx = s;
                    }
                    float denom = 0.0f;
                    for (std::size_t j = 0; j < n; ++j) {
                        scores[j] = std::exp(scores[j] - mx);
                        denom += scores[j];
                    }
                    float* oh = &attn[hd * dh];
                    std::fill(oh, oh + dh, 0.0f);
                    for (std::size_t j = 0; j < n; ++j) {
                        const float p = scores[j] / denom;
                        const float* vj = &V[j * d + hd * dh];
                        for (std::size_t c = 0; c < dh; ++c) oh[c] += p * vj[c];
                    }
                }
                matvec(B.wo, attn, proj);
                for (std::size_t c = 0; c < d; ++c) h[c] += proj[c];

                rms_norm(h, B.ffn_norm, x);
                matvec(B.w_up, x, up);
                for (auto& u : up) u = u / (1.0f + std::exp(-u));
                matvec(B.w_down, up, proj);
                for (std::size_t c = 0; c < d; ++c) h[c] += proj[c];
            }

            rms_norm(h, weights_.final_norm, x);
            matvec(weights_.lm_head, x, std::span(out.logits).subspan(i * config_.vocab_size, config_.vocab_size));
        }
        return out;
    }

    /// Greedy decoding. Stops after max_new tokens or when stop_token is produced
    /// (the stop token is not included in the output).
    TokenSequence generate_greedy(std::span<const TokenId> prompt, const KvCache& past, std::size_t max_new,
                                  std::optional<TokenId> stop_token = std::nullopt) const {
        TokenSequence out;
        if (max_new == 0) return out;
        if (prompt.empty()) throw ConfigError("generate_greedy needs at least one prompt token");
        ForwardResult r = forward(prompt, past);
        TokenId next = argmax(r.row(r.rows() - 1));
        while (true) {
            if (stop_token && next == *stop_token) break;
            out.push_back(next);
            if (out.size() == max_new) break;
            const TokenId step[1] = {next};
            r = forward(step, r.cache);
            next = argmax(r.row(0));
        }
        return out;
    }

    TokenSequence generate_greedy(std::span<const TokenId> prompt, std::size_t max_new,
                                  std::optional<TokenId> stop_token = std::nullopt) const {
        return generate_greedy(prompt, empty_cache(), max_new, stop_token);
    }

private:
    void check_past(const KvCache& past, std::size_t n_new) const {
        if (past.fingerprint() != fingerprint_) {
            throw FingerprintMismatch("cache fingerprint " + past.fingerprint().hex + " does not match model " +
                                      fingerprint_.hex);
        }
        if (past.n_layers() != config_.n_layers || past.width() != config_.d_model ||
            past.n_heads() != config_.n_heads) {
            throw ConfigError("cache shape does not match model config");
        }
        const std::size_t end = static_cast<std::size_t>(past.position_offset()) + past.length() + n_new;
        if (end > config_.max_position) {
            throw PositionOverflow("positions would reach " + std::to_string(end) + " > max_position " +
                                   std::to_string(config_.max_position));
        }
    }

    void rms_norm(std::span<const float> in, std::span<const float> gain, std::span<float> out) const {
        float ss = 0.0f;
        for (float v : in) ss += v * v;
        const float inv = 1.0f / std::sqrt(ss / static_cast<float>(in.size()) + 1e-5f);
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * inv * gain[i];
    }

    // out = W x, W row-major (out.size() x x.size()).
    static void matvec(std::span<const float> W, std::span<const float> x, std::span<float> out) {
        const std::size_t n = x.size();
        for (std::size_t r = 0; r < out.size(); ++r) {
            const float* w = &W[r * n];
            float acc = 0.0f;
            for (std::size_t c = 0; c < n; ++c) acc += w[c] * x[c];
            out[r] = acc;
        }
    }

    ModelConfig config_;
    Fingerprint fingerprint_;
    ModelWeights weights_;
};

}  // namespace kvpack
