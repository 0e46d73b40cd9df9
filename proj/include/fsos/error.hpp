#pragma once

#include <stdexcept>
#include <string>

namespace fsos {

// Base of every exception thrown by the library. `kind()` is a short
// machine-readable tag ("shape", "config", "io", ...) used by the CLI when it
// prints error lines.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error("data", message) {}
};

class AutodiffError : public Error {
public:
    explicit AutodiffError(const std::string& message) : Error("autodiff", message) {}
};

}  // namespace fsos
