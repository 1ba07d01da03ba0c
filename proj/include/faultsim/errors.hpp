#pragma once

#include <stdexcept>
#include <string>

namespace faultsim {

// Base class for all hard errors raised by this library. Traps (out-of-bounds
// access, timeouts, ...) are *not* errors: they are expected simulation
// outcomes and travel as values.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SyntaxError : Error {
    int line;
    SyntaxError(int line_no, const std::string& reason)
        : Error("syntax error at line " + std::to_string(line_no) + ": " + reason),
          line(line_no) {}
};

struct UnresolvedLabel : Error {
    std::string label;
    explicit UnresolvedLabel(const std::string& name)
        : Error("unresolved label: " + name), label(name) {}
};

struct DuplicateLabel : Error {
    std::string label;
    explicit DuplicateLabel(const std::string& name)
        : Error("duplicate label: " + name), label(name) {}
};

struct ConfigError : Error {
    using Error::Error;
};

// Raised when a branch predicate is non-uniform inside an active warp. This is
// a simulator limitation, reported distinctly from traps so campaign code can
// file it under TOOL_ERROR instead of DUE.
struct DivergenceError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct BadMagic : Error {
    using Error::Error;
};

struct CountMismatch : Error {
    using Error::Error;
};

struct ConstraintError : Error {
    using Error::Error;
};

struct UnsupportedShape : Error {
    using Error::Error;
};

struct LengthMismatch : Error {
    using Error::Error;
};

struct EmptyResults : Error {
    using Error::Error;
};

// Campaign-level failure (golden run trapped or disagreed with the reference);
// distinct from usage errors so the CLI can exit 1 instead of 2.
struct CampaignFailure : Error {
    using Error::Error;
};

}  // namespace faultsim
