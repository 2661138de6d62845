// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpack/error.hpp"

namespace kvpack::detail {

// All on-disk integers and floats are little-endian regardless of host.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    // Writes exactly `width` bytes, NUL-padded. Caller guarantees s fits.
    void fixed(std::string_view s, std::size_t width) {
        raw(s.substr(0, width));
        buf_.insert(buf_.end(), width - std::min(width, s.size()), 0);
    }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    void f32s(std::span<const float> v) {
        for (float x : v) f32(x);
    }
    void f64s(std::span<const double> v) {
        for (double x : v) f64(x);
    }

    std::size_t size() const noexcept { return buf_.size(); }
    std::vector<std::uint8_t> take() && { return std::move(buf_); }
    const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string raw(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::string fixed(std::size_t width) {
        std::string s = raw(width);
        s.resize(s.find('\0') == std::string::npos ? s.size() : s.find('\0'));
        return s;
    }

    std::string str() { return raw(u32()); }

    std::vector<float> f32s(std::size_t n) {
        need_elems(n, 4);
        std::vector<float> out(n);
        for (auto& x : out) x = f32();
        return out;
    }

    std::vector<double> f64s(std::size_t n) {
        need_elems(n, 8);
        std::vector<double> out(n);
        for (auto& x : out) x = f64();
        return out;
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }

    // Checked before allocating so a corrupt count cannot trigger a huge allocation.
    void need_elems(std::size_t n, std::size_t width) {
        if (n > remaining() / width) {
            throw FormatError(FormatError::Kind::Truncated, "need " + std::to_string(n) + " elements of " +
                                                                std::to_string(width) + " bytes at offset " +
                                                                std::to_string(pos_));
        }
    }

    void expect_end() const {
        if (remaining() != 0) {
            throw FormatError(FormatError::Kind::SizeMismatch,
                              std::to_string(remaining()) + " trailing bytes after payload");
        }
    }

private:
    void need(std::size_t n) {
        if (n > remaining()) {
            throw FormatError(FormatError::Kind::Truncated, "need " + std::to_string(n) + " bytes at offset " +
                                                                std::to_string(pos_) + ", have " +
                                                                std::to_string(remaining()));
        }
    }

    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept {
    std::uint64_t h = basis;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept {
    return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), basis);
}

inline std::string hex16(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

}  // namespace kvpack::detail
