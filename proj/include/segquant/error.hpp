#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace segquant {

// Error classes map 1:1 onto CLI exit codes.
enum class errc : int {
    parse = 2,
    validation = 3,
    numeric = 4,
    io = 5,
};

// All recoverable failures are thrown as sq_error. `kind` is a stable,
// machine-checkable token ("cycle", "dangling_weight", ...) so callers and
// tests can distinguish failures within one exit-code class.
class sq_error : public std::runtime_error {
  public:
    sq_error(errc code, std::string kind, const std::string& msg)
        : std::runtime_error(msg), code_(code), kind_(std::move(kind)) {}

    errc code() const noexcept { return code_; }
    int exit_code() const noexcept { return static_cast<int>(code_); }
    const std::string& kind() const noexcept { return kind_; }

  private:
    errc code_;
    std::string kind_;
};

[[noreturn]] inline void throw_parse(const std::string& kind, const std::string& msg) {
    throw sq_error(errc::parse, kind, msg);
}
[[noreturn]] inline void throw_validation(const std::string& kind, const std::string& msg) {
    throw sq_error(errc::validation, kind, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& kind, const std::string& msg) {
    throw sq_error(errc::numeric, kind, msg);
}
[[noreturn]] inline void throw_io(const std::string& kind, const std::string& msg) {
    throw sq_error(errc::io, kind, msg);
}

}  // namespace segquant
