#pragma once

#include <stdexcept>
#include <string>

namespace rsen {

/// Shape or channel mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid model / training / rain configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Violated API precondition (non-scalar backward seed, epsilon of zero, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite values showed up during optimisation.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File system or image decoding failure.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint decoding or checkpoint/architecture mismatch.
class CheckpointError : public std::runtime_error {
public:
    enum class Kind { Malformed, VersionMismatch, TruncatedPayload, NameMismatch, DimsMismatch, Io };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

} // namespace rsen
