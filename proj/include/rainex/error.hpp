#pragma once

#include <stdexcept>
#include <string>

namespace rainex {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters, shapes or configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A required artifact (file, prober, index) is absent.
class MissingArtifact : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated binary/text file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Input data violates a domain invariant (non-finite pixels, time gaps, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// A lookup by id (segment, concept, frame) found nothing.
class NotFound : public Error {
public:
    using Error::Error;
};

}  // namespace rainex
