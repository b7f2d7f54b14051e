#pragma once

#include <stdexcept>
#include <string>

namespace gmdkit {

enum class ErrorKind {
    invalid_argument,
    dimension,
    not_psd,
    numerical,
    io,
    config,
};

inline const char* to_string(ErrorKind k)
{
    switch (k) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::not_psd: return "not_psd";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::io: return "io";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

// Every failure raised by the library carries a kind so the CLI can map it
// onto an exit code.
class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind)
    {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg)
{
    throw Error(kind, msg);
}

} // namespace gmdkit
