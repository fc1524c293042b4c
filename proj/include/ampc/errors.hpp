#pragma once

#include <stdexcept>
#include <string>

namespace ampc {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& msg) : Error("dimension mismatch: " + msg) {}
};

struct NonFiniteState : Error {
    explicit NonFiniteState(const std::string& msg) : Error("non-finite state: " + msg) {}
};

struct LowSpeedSingularity : Error {
    explicit LowSpeedSingularity(double v, double vmin)
        : Error("dynamic single-track model invalid at v=" + std::to_string(v) +
                " <= v_min=" + std::to_string(vmin)) {}
};

struct NotAnEquilibrium : Error {
    explicit NotAnEquilibrium(double residual)
        : Error("linearization point is not an equilibrium (residual " +
                std::to_string(residual) + ")") {}
};

struct NoConvergence : Error {
    explicit NoConvergence(const std::string& msg) : Error("no convergence: " + msg) {}
};

struct EmptyTerminalSet : Error {
    explicit EmptyTerminalSet(double alpha)
        : Error("terminal set is empty (alpha " + std::to_string(alpha) + " < 1e-9)") {}
};

struct SamplerExhausted : Error {
    explicit SamplerExhausted(const std::string& msg) : Error("sampler exhausted: " + msg) {}
};

struct NonFiniteLoss : Error {
    explicit NonFiniteLoss(const std::string& msg) : Error("non-finite loss: " + msg) {}
};

struct EmptySplit : Error {
    explicit EmptySplit(const std::string& msg) : Error("empty split: " + msg) {}
};

struct EmptyTestSet : Error {
    explicit EmptyTestSet(const std::string& msg) : Error("empty test set: " + msg) {}
};

struct LineageMismatch : Error {
    explicit LineageMismatch(const std::string& msg) : Error("artifact lineage mismatch: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

}  // namespace ampc
