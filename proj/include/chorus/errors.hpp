#pragma once

#include <stdexcept>
#include <string>

namespace chorus {

// Error taxonomy. Every failure surfaced by the engine is one of these;
// callers that need to branch on the class can catch the subtype.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run/pool/mock configuration (maps to CLI exit code 2).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Operation invoked on a backend lacking the required capability flag.
class CapabilityError : public Error {
public:
    explicit CapabilityError(const std::string& msg) : Error("capability error: " + msg) {}
};

// Endpoint unreachable after bounded retries.
class TransportError : public Error {
public:
    explicit TransportError(const std::string& msg) : Error("transport error: " + msg) {}
};

// Token distributions from incompatible vocab groups.
class VocabError : public Error {
public:
    explicit VocabError(const std::string& msg) : Error("vocab error: " + msg) {}
};

// Malformed on-disk artifact (tensor container, dataset file, ...).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// Tensor arithmetic over mismatched name/shape sets.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Bad argument to an in-process operation.
class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& msg) : Error("argument error: " + msg) {}
};

}  // namespace chorus
