// Copyright 2026 The kvpack Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kvpack {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid model/run configuration or a violated operation precondition.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A cache, pack, or delta was produced by a different model.
class FingerprintMismatch : public Error {
public:
    using Error::Error;
};

/// Rotary positions would run past max_position.
class PositionOverflow : public Error {
public:
    using Error::Error;
};

class TemplateError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// The two arms of an equivalence check rendered different token streams.
/// This is a harness bug, never a model divergence.
class RenderingMismatch : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    enum class Kind { BadMagic, UnsupportedVersion, Truncated, SizeMismatch, Malformed };

    FormatError(Kind kind, const std::string& what) : Error(kind_name(kind) + ": " + what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

    static std::string kind_name(Kind kind) {
        switch (kind) {
            case Kind::BadMagic: return "bad magic";
            case Kind::UnsupportedVersion: return "unsupported version";
            case Kind::Truncated: return "truncated stream";
            case Kind::SizeMismatch: return "size mismatch";
            case Kind::Malformed: return "malformed field";
        }
        return "format error";
    }

private:
    Kind kind_;
};

}  // namespace kvpack
