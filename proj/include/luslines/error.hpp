#pragma once

#include <stdexcept>
#include <string>

namespace luslines {

/// Base of every exception thrown by the library. `category()` is a short,
/// stable token the CLI prints as the machine-parseable part of its error line.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

/// Non-finite intermediate or divergence inside an iterative routine.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class DegenerateRootError : public Error {
public:
    explicit DegenerateRootError(const std::string& what) : Error("degenerate_root", what) {}
};

class PleuralNotFound : public Error {
public:
    explicit PleuralNotFound(const std::string& what) : Error("pleural_not_found", what) {}
};

}  // namespace luslines
