#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rlhf_lab {

// Base for all library errors. `category()` is the short tag the CLI prints
// and maps to an exit status.
class LabError : public std::runtime_error {
public:
    LabError(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

class ConfigError : public LabError {
public:
    explicit ConfigError(const std::string& what) : LabError("config", what) {}
};

class ArgumentError : public LabError {
public:
    explicit ArgumentError(const std::string& what) : LabError("argument", what) {}
};

class LookupError : public LabError {
public:
    explicit LookupError(const std::string& what) : LabError("lookup", what) {}
};

// Operation requires environment features that are absent (tabular env used
// where linear mode is needed, or vice versa).
class ModeError : public LabError {
public:
    explicit ModeError(const std::string& what) : LabError("mode", what) {}
};

class IoError : public LabError {
public:
    explicit IoError(const std::string& what) : LabError("io", what) {}
};

class IngestError : public LabError {
public:
    explicit IngestError(const std::string& what) : LabError("ingest", what) {}
};

class VersionError : public LabError {
public:
    explicit VersionError(const std::string& what) : LabError("version", what) {}
};

// Loss became non-finite during an optimizer run. Carries the tail of the
// loss trace for diagnosis.
class OptimizationError : public LabError {
public:
    OptimizationError(const std::string& what, std::vector<double> trace)
        : LabError("optimization", what), loss_trace_(std::move(trace)) {}

    const std::vector<double>& loss_trace() const noexcept { return loss_trace_; }

private:
    std::vector<double> loss_trace_;
};

}  // namespace rlhf_lab
