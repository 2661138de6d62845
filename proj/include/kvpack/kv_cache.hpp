// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "kvpack/config.hpp"
#include "kvpack/error.hpp"

namespace kvpack {

/// Per-layer key/value rows produced by a forward pass. Row t of layer l holds
/// n_heads * d_head floats laid out head-major. Rotary position of row t is
/// position_offset + t.
///
/// Value steering never rewrites the stored values; it accumulates a double
/// precision shift per element, and attention reads float(value + shift).
/// Accumulating in double and rounding once makes repeated and composed
/// applications agree bit-for-bit with their single-shot equivalents.
class KvCache {
public:
    struct Layer {
        std::vector<float> keys;
        std::vector<float> values;
        std::vector<double> value_shift;  // empty, or same size as values
    };

    KvCache() = default;

    KvCache(Fingerprint fingerprint, std::uint32_t n_layers, std::uint32_t n_heads, std::uint32_t d_head,
            std::uint32_t position_offset = 0)
        : fingerprint_(std::move(fingerprint)),
          n_heads_(n_heads),
          d_head_(d_head),
          position_offset_(position_offset),
          layers_(n_layers) {}

    static KvCache empty_for(const ModelConfig& c, std::uint32_t position_offset = 0) {
        return KvCache(c.fingerprint(), c.n_layers, c.n_heads, c.d_head, position_offset);
    }

    const Fingerprint& fingerprint() const noexcept { return fingerprint_; }
    std::uint32_t n_layers() const noexcept { return static_cast<std::uint32_t>(layers_.size()); }
    std::uint32_t n_heads() const noexcept { return n_heads_; }
    std::uint32_t d_head() const noexcept { return d_head_; }
    std::uint32_t width() const noexcept { return n_heads_ * d_head_; }
    std::uint32_t position_offset() const noexcept { return position_offset_; }
    bool empty() const noexcept { return length() == 0; }

    std::size_t length() const noexcept {
        return layers_.empty() || width() == 0 ? 0 : layers_.front().keys.size() / width();
    }

    const Layer& layer(std::size_t l) const { return layers_.at(l); }
    Layer& layer_mut(std::size_t l) { return layers_.at(l); }

    bool steered() const noexcept {
        return std::any_of(layers_.begin(), layers_.end(), [](const Layer& L) { return !L.value_shift.empty(); });
    }

    float effective_value(std::size_t l, std::size_t i) const {
        const auto& L = layers_[l];
        if (L.value_shift.empty()) return L.values[i];
        return static_cast<float>(static_cast<double>(L.values[i]) + L.value_shift[i]);
    }

    std::vector<float> effective_values(std::size_t l) const {
        const auto& L = layers_.at(l);
        if (L.value_shift.empty()) return L.values;
        std::vector<float> out(L.values.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = effective_value(l, i);
        return out;
    }

    /// Shift buffer for layer l, allocated as zeros on first use.
    std::vector<double>& value_shift_mut(std::size_t l) {
        auto& L = layers_.at(l);
        if (L.value_shift.empty()) L.value_shift.assign(L.values.size(), 0.0);
        return L.value_shift;
    }

    void append_row(std::size_t l, std::span<const float> key, std::span<const float> value) {
        auto& L = layers_.at(l);
        L.keys.insert(L.keys.end(), key.begin(), key.end());
        L.values.insert(L.values.end(), value.begin(), value.end());
        if (!L.value_shift.empty()) L.value_shift.resize(L.values.size(), 0.0);
    }

    void check_invariants() const {
        const std::size_t T = length();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            if (L.keys.size() != T * width() || L.values.size() != T * width()) {
                throw ConfigError("layer " + std::to_string(l) + " length differs from layer 0");
            }
            if (!L.value_shift.empty() && L.value_shift.size() != L.values.size()) {
                throw ConfigError("layer " + std::to_string(l) + " value shift has wrong size");
            }
        }
    }

private:
    Fingerprint fingerprint_;
    std::uint32_t n_heads_ = 0;
    std::uint32_t d_head_ = 0;
    std::uint32_t position_offset_ = 0;
    std::vector<Layer> layers_;
};

/// First t rows of every layer; offset and fingerprint preserved.
inline KvCache slice_prefix(const KvCache& cache, std::size_t t) {
    if (t > cache.length()) {
        throw RangeError("slice length " + std::to_string(t) + " exceeds cache length " +
                         std::to_string(cache.length()));
    }
    KvCache out(cache.fingerprint(), cache.n_layers(), cache.n_heads(), cache.d_head(), cache.position_offset());
    const std::size_t n = t * cache.width();
    for (std::size_t l = 0; l < cache.n_layers(); ++l) {
        const auto& src = cache.layer(l);
        auto& dst = out.layer_mut(l);
        dst.keys.assign(src.keys.begin(), src.keys.begin() + static_cast<std::ptrdiff_t>(n));
        dst.values.assign(src.values.begin(), src.values.begin() + static_cast<std::ptrdiff_t>(n));
        if (!src.value_shift.empty()) {
            dst.value_shift.assign(src.value_shift.begin(), src.value_shift.begin() + static_cast<std::ptrdiff_t>(n));
        }
    }
    return out;
}

/// Raw row concatenation: b's rows follow a's with no position correction.
inline KvCache concat_rows(const KvCache& a, const KvCache& b) {
    if (a.fingerprint() != b.fingerprint()) {
        throw FingerprintMismatch("cannot concatenate caches from models " + a.fingerprint().hex + " and " +
                                  b.fingerprint().hex);
    }
    KvCache out = a;
    for (std::size_t l = 0; l < a.n_layers(); ++l) {
        const auto& src = b.layer(l);
        auto& dst = out.layer_mut(l);
        const bool shifted = !dst.value_shift.empty() || !src.value_shift.empty();
        if (shifted) out.value_shift_mut(l);
        dst.keys.insert(dst.keys.end(), src.keys.begin(), src.keys.end());
        dst.values.insert(dst.values.end(), src.values.begin(), src.values.end());
        if (shifted) {
            if (src.value_shift.empty()) {
                dst.value_shift.resize(dst.values.size(), 0.0);
            } else {
                dst.value_shift.insert(dst.value_shift.end(), src.value_shift.begin(), src.value_shift.end());
            }
        }
    }
    return out;
}

struct LayerDiff {
    double max_key_diff = 0.0;
    double max_value_diff = 0.0;
};

struct CacheComparison {
    bool equal = true;
    bool fingerprint_mismatch = false;
    bool shape_mismatch = false;
    bool offset_mismatch = false;
    std::vector<LayerDiff> layers;  // empty when shapes differ

    double max_key_diff() const {
        double m = 0.0;
        for (const auto& d : layers) m = std::max(m, d.max_key_diff);
        return m;
    }
    double max_value_diff() const {
        double m = 0.0;
        for (const auto& d : layers) m = std::max(m, d.max_value_diff);
        return m;
    }

    // Index of the layer holding the largest difference, or -1.
    int worst_layer() const {
        int worst = -1;
        double m = 0.0;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const double d = std::max(layers[l].max_key_diff, layers[l].max_value_diff);
            if (d > m || (std::isnan(d) && worst < 0)) {
                m = d;
                worst = static_cast<int>(l);
            }
        }
        return worst;
    }

    std::string summary() const {
        std::ostringstream os;
        os << (equal ? "equal" : "different");
        if (fingerprint_mismatch) os << " fingerprint-mismatch";
        if (shape_mismatch) os << " shape-mismatch";
        if (offset_mismatch) os << " offset-mismatch";
        if (!layers.empty()) os << " max|dK|=" << max_key_diff() << " max|dV|=" << max_value_diff();
        if (worst_layer() >= 0 && !equal) os << " worst-layer=" << worst_layer();
        return os.str();
    }
};

/// Compares keys and effective values element-wise. Mismatches are reported,
/// never thrown.
inline CacheComparison caches_equal(const KvCache& a, const KvCache& b, double tolerance = 0.0) {
    CacheComparison r;
    r.fingerprint_mismatch = a.fingerprint() != b.fingerprint();
    r.offset_mismatch = a.position_offset() != b.position_offset();
    r.shape_mismatch = a.n_layers() != b.n_layers() || a.width() != b.width() || a.length() != b.length();
    if (r.shape_mismatch) {
        r.equal = false;
        return r;
    }
    bool within = true;
    r.layers.resize(a.n_layers());
    for (std::size_t l = 0; l < a.n_layers(); ++l) {
        const auto& ka = a.layer(l).keys;
        const auto& kb = b.layer(l).keys;
        auto& d = r.layers[l];
        for (std::size_t i = 0; i < ka.size(); ++i) {
            const double diff = std::fabs(static_cast<double>(ka[i]) - static_cast<double>(kb[i]));
            if (!(diff <= tolerance)) within = false;
            if (diff > d.max_key_diff || std::isnan(diff)) d.max_key_diff = diff;
        }
        const std::size_t n = a.layer(l).values.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double diff =
                std::fabs(static_cast<double>(a.effective_value(l, i)) - static_cast<double>(b.effective_value(l, i)));
            if (!(diff <= tolerance)) within = false;
            if (diff > d.max_value_diff || std::isnan(diff)) d.max_value_diff = diff;
        }
    }
    r.equal = within && !r.fingerprint_mismatch && !r.offset_mismatch;
    return r;
}

}  // namespace kvpack
