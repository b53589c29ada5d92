#pragma once

#include <stdexcept>
#include <string>

namespace cepa {

/// Broad failure categories. The CLI maps each to a distinct exit code.
enum class ErrorKind {
    input,      ///< malformed or inconsistent data
    numerical,  ///< singular matrices, degenerate truncation, failed selection
    config,     ///< invalid parameters or incompatible options
    internal    ///< broken internal invariant
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_input(const std::string& msg) { throw Error(ErrorKind::input, msg); }
[[noreturn]] inline void fail_numerical(const std::string& msg) {
    throw Error(ErrorKind::numerical, msg);
}
[[noreturn]] inline void fail_config(const std::string& msg) { throw Error(ErrorKind::config, msg); }
[[noreturn]] inline void fail_internal(const std::string& msg) {
    throw Error(ErrorKind::internal, msg);
}

}  // namespace cepa
