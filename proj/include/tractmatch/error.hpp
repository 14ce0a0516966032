#pragma once

#include <stdexcept>
#include <string>

namespace tractmatch {

/// Failure categories surfaced by the analysis routines. The message text is
/// stable and used by the CLI for diagnostics.
enum class ErrorKind {
    SilentFrame,
    UnstableLpc,
    UnvoicedFrame,
    HarmonicsNotFound,
    RdOutOfRange,
    InvalidTarget,
    NoVoicedFrames,
    InvalidArgument,
    Io,
    Schema,
};

inline const char* error_kind_message(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::SilentFrame: return "silent frame";
        case ErrorKind::UnstableLpc: return "unstable LPC";
        case ErrorKind::UnvoicedFrame: return "unvoiced frame";
        case ErrorKind::HarmonicsNotFound: return "harmonics not found";
        case ErrorKind::RdOutOfRange: return "Rd out of model range";
        case ErrorKind::InvalidTarget: return "invalid target";
        case ErrorKind::NoVoicedFrames: return "no voiced frames";
        case ErrorKind::InvalidArgument: return "invalid argument";
        case ErrorKind::Io: return "io error";
        case ErrorKind::Schema: return "schema violation";
    }
    return "unknown error";
}

class Error : public std::runtime_error {
public:
    explicit Error(ErrorKind kind)
        : std::runtime_error(error_kind_message(kind)), kind_(kind) {}
    Error(ErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(error_kind_message(kind)) + ": " + detail), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace tractmatch
