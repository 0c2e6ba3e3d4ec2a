#pragma once

#include <stdexcept>
#include <string>

namespace latent_lens {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem failures; message carries the path and the OS cause.
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

// Invalid arguments, shapes or configuration. The CLI maps these to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Numerical failure during optimization (divergence, degenerate data).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace latent_lens
