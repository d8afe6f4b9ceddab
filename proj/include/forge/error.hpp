#pragma once

#include <stdexcept>
#include <string>

namespace forge {

// Base class for all library errors. Subtypes exist so callers can
// distinguish bad input, bad config, and backend trouble.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed files: manifests, prompt stores, checkpoints.
struct ParseError : Error {
    ParseError(const std::string& msg, int line = -1)
        : Error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg), line_number(line) {}
    int line_number;
};

// Contract violations on otherwise well-formed data.
struct ValidationError : Error {
    using Error::Error;
};

// Bad run configuration, reported before any work starts.
struct ConfigError : Error {
    using Error::Error;
};

// Remote or toy backend failures.
struct BackendError : Error {
    enum class Kind { unreachable, timeout, bad_response, unsupported };
    BackendError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
    Kind kind;
};

}  // namespace forge
