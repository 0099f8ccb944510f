#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace zvlab {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter violated a documented bound; the message names the bound.
class InvalidParameter : public Error {
public:
    using Error::Error;
};

class NonFiniteValue : public Error {
public:
    NonFiniteValue(std::string what, std::size_t index)
        : Error(std::move(what)), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Uniform-ellipticity or symmetry check of a coefficient failed.
class CertificateViolation : public Error {
public:
    using Error::Error;
};

/// The explicit remainder of the split scheme is not dominated by the implicit core.
class StepInstability : public Error {
public:
    using Error::Error;
};

class CalibrationFailure : public Error {
public:
    CalibrationFailure(std::string what, std::vector<double> trace)
        : Error(std::move(what)), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

class NonConvergence : public Error {
public:
    using Error::Error;
};

class BudgetExceeded : public Error {
public:
    using Error::Error;
};

/// A simulated path produced a non-finite state.
class BlowUp : public Error {
public:
    BlowUp(std::string what, std::size_t path, int step)
        : Error(std::move(what)), path_(path), step_(step) {}
    std::size_t path() const noexcept { return path_; }
    int step() const noexcept { return step_; }

private:
    std::size_t path_;
    int step_;
};

} // namespace zvlab
