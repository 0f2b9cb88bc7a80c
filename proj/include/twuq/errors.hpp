#pragma once

#include <stdexcept>
#include <string>

namespace twuq {

// Base for every error this library throws. The CLI maps subclasses onto
// distinct exit codes (see exit_code()).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a function (e.g. a point
// outside the unit disc, a negative square-root argument).
class DomainError : public Error {
public:
    using Error::Error;
};

// Invalid scalar argument (fractions outside [0,1], empty masks, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Shape or grid-size mismatch between inputs.
class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed binary file. kind tells which part of the file was rejected.
class FormatError : public IoError {
public:
    enum class Kind { Header, Version, Payload };

    FormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
public:
    TrainingError(int epoch, const std::string& what)
        : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

// Weights, datasets, or configs that were produced for a different
// architecture or experiment configuration.
class FingerprintError : public Error {
public:
    using Error::Error;
};

// Process exit codes used by the command line tool.
enum class ExitCode : int {
    Ok = 0,
    Usage = 1,
    Config = 2,
    Io = 3,
    Training = 4,
    Fingerprint = 5,
    Other = 6,
};

ExitCode exit_code(const std::exception& e) noexcept;

}  // namespace twuq
