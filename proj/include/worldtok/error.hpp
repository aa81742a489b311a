// Copyright Contributors to the worldtok Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace worldtok {

enum class ErrorKind {
    InvalidArgument,
    DimensionMismatch,
    InvariantViolation,
    Io,
    BadMagic,
    UnsupportedVersion,
    Truncated,
    MalformedJson,
    SchemaViolation,
    MalformedText,
    NumericFailure,
};

inline std::string_view
to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::InvariantViolation: return "invariant_violation";
    case ErrorKind::Io: return "io";
    case ErrorKind::BadMagic: return "bad_magic";
    case ErrorKind::UnsupportedVersion: return "unsupported_version";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::MalformedJson: return "malformed_json";
    case ErrorKind::SchemaViolation: return "schema_violation";
    case ErrorKind::MalformedText: return "malformed_text";
    case ErrorKind::NumericFailure: return "numeric_failure";
    }
    return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string &what)
        : std::runtime_error(what), mKind(kind) {}

    ErrorKind kind() const noexcept { return mKind; }

  private:
    ErrorKind mKind;
};

[[noreturn]] inline void
fail(ErrorKind kind, const std::string &what) {
    throw Error(kind, what);
}

inline void
require(bool cond, ErrorKind kind, const std::string &what) {
    if (!cond) {
        fail(kind, what);
    }
}

} // namespace worldtok
