// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace wsdlab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Token id or target outside the vocabulary.
class IndexError : public Error {
public:
    using Error::Error;
};

/// Invalid model, run or corpus configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A loss or op produced a non-finite value.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// Gradient check could not evaluate the objective.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Step outside the phase plan.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Optimizer switch requested away from the decay boundary.
class ScheduleError : public Error {
public:
    using Error::Error;
};

/// Parameter name with no µP group.
class GroupingError : public Error {
public:
    using Error::Error;
};

/// Malformed checkpoint or corpus dump.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace wsdlab
