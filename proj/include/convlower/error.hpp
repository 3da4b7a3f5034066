#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace convlower {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (element counts, matrix dims, filter dims).
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An index fell outside its axis. `axis()` names the offending axis.
class IndexError : public Error {
public:
    IndexError(std::string axis, std::size_t index, std::size_t extent)
        : Error("index " + std::to_string(index) + " out of range for axis '" + axis +
                "' (extent " + std::to_string(extent) + ")"),
          axis_(std::move(axis)) {}

    const std::string& axis() const noexcept { return axis_; }

private:
    std::string axis_;
};

/// Invalid convolution geometry (kernel larger than the padded input, zero stride, ...).
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Stride does not evenly divide the span the kernel sweeps over (strict mode).
class StrideError : public GeometryError {
public:
    StrideError(const std::string& axis, std::size_t span, std::size_t stride)
        : GeometryError("stride " + std::to_string(stride) + " does not divide " + axis +
                        " span " + std::to_string(span) + " (remainder " +
                        std::to_string(span % stride) + ")"),
          remainder_(span % stride) {}

    std::size_t remainder() const noexcept { return remainder_; }

private:
    std::size_t remainder_;
};

/// Malformed or unreadable file (IDX images, tensor dumps).
class FormatError : public Error {
public:
    enum class Kind { Io, BadMagic, Truncated, Overflow, BadHeader };

    FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// A non-finite value showed up where training requires finite numbers.
class NumericError : public Error {
public:
    NumericError(std::string layer, const std::string& what)
        : Error(what + " in layer '" + layer + "'"), layer_(std::move(layer)) {}

    const std::string& layer() const noexcept { return layer_; }

private:
    std::string layer_;
};

}  // namespace convlower
