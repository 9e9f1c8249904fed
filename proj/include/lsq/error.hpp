#pragma once

#include <stdexcept>
#include <string>

namespace lsq {

// Base class for every error raised by the toolkit. The CLI maps these to
// exit code 1; anything else is a bug.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed container/CSV contents.
class format_error : public error {
public:
    using error::error;
};

// Tensor is not a 2-D matrix or shapes disagree.
class shape_error : public error {
public:
    using error::error;
};

// Tensor name does not parse as `<layer>.<module>`.
class naming_error : public error {
public:
    using error::error;
};

// Precondition violated by a caller-supplied value.
class argument_error : public error {
public:
    using error::error;
};

// Input that makes the requested statistic undefined (e.g. zero variance).
class degenerate_error : public error {
public:
    using error::error;
};

// Metric rows do not cover the model.
class coverage_error : public error {
public:
    using error::error;
};

// A record has no counterpart under the pairing rules.
class pairing_error : public error {
public:
    using error::error;
};

// Budget below the minimum achievable storage.
class infeasible_error : public error {
public:
    infeasible_error(const std::string & msg, double min_budget_mb)
        : error(msg), min_budget_mb(min_budget_mb) {}

    double min_budget_mb;
};

} // namespace lsq
