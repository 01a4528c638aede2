#pragma once

#include <stdexcept>
#include <string>

namespace sibre {

// Machine-parsable error categories. The CLI prints these codes verbatim on
// a single stderr line, so keep them short and stable.
enum class ErrorCode {
    usage,    // bad command line
    config,   // invalid config file / key / value combination
    io,       // missing or unreadable file
    data,     // malformed dataset content
    shape,    // tensor shape mismatch
    numeric,  // NaN/Inf produced by a primitive
    state,    // API misuse (backward twice, non-deterministic grad_check, ...)
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const { return code_; }
    std::string code_name() const { return error_code_name(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace sibre
