#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedimpres {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or contract violation between values (layer inputs, parameter lists).
class ShapeError : public Error {
public:
    using Error::Error;
};

// Caller supplied an out-of-range argument (label >= K, n_clients > N, ...).
class InputError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    NumericError(const std::string& what, int layer = -1) : Error(what), layer_(layer) {}
    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// line == 0 means the offending value did not come from a config file.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

class ProtocolError : public Error {
public:
    ProtocolError(const std::string& what, int client)
        : Error("client " + std::to_string(client) + ": " + what), client_(client) {}
    int client() const noexcept { return client_; }

private:
    int client_;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace fedimpres
