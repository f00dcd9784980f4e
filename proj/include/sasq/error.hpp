#pragma once

#include <stdexcept>
#include <string>

namespace sasq {

// Base error for everything the toolkit raises on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched tensor shapes, bad axes, out-of-range slices.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Math domain violations (ln of non-positive, temperature <= 0, ...).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Bad run configuration: unknown keys, unparsable values, missing flags.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Bad input data: missing corpus, empty corpus, malformed files.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Numerical aborts (NaN loss during training).
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Serialization failures, with a distinct code per failure mode.
struct PersistError : Error {
    enum class Code {
        io,
        bad_magic,
        version_mismatch,
        truncated,
        duplicate_name,
        bad_dtype,
        name_mismatch,
        invalid_scale,
    };

    PersistError(Code c, const std::string& msg) : Error(msg), code(c) {}

    Code code;
};

}  // namespace sasq
