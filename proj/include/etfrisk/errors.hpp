#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace etfrisk {

/// Base of every error raised by the library. `kind()` is a short class name
/// suitable for one-line CLI reporting.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

/// Malformed or inconsistent input data. Carries the file, line and field
/// when they are known (line 0 means "not line specific").
class InputError : public Error {
public:
    InputError(std::string file, std::size_t line, std::string field, const std::string& msg)
        : Error(format(file, line, field, msg)),
          file_(std::move(file)),
          line_(line),
          field_(std::move(field)) {}

    explicit InputError(const std::string& msg) : Error(msg), line_(0) {}

    const char* kind() const noexcept override { return "input error"; }
    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    static std::string format(const std::string& file, std::size_t line,
                              const std::string& field, const std::string& msg) {
        std::string out = file;
        if (line > 0) out += ":" + std::to_string(line);
        if (!field.empty()) out += " [" + field + "]";
        return out + ": " + msg;
    }

    std::string file_;
    std::size_t line_;
    std::string field_;
};

/// Invalid parameter or parameter combination.
class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config error"; }
};

/// A structure violates one of its documented invariants.
class InvariantError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "invariant error"; }
};

/// An operation was called with arguments that break its precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "precondition error"; }
};

}  // namespace etfrisk
