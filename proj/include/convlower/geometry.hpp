#pragma once

#include <cstddef>
#include <string>

#include "convlower/tensor.hpp"

namespace convlower {

/// How a stride that does not evenly divide the swept span is handled.
enum class StridePolicy {
    Strict,    ///< reject with StrideError
    Truncate,  ///< floor division; trailing rows/cols are never visited
};

/// Kernel, stride and padding of one convolution. Stride and padding are the
/// same along both spatial axes; padding is applied on every side.
struct ConvGeometry {
    std::size_t kh = 1;
    std::size_t kw = 1;
    std::size_t c_in = 1;
    std::size_t f = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;
    StridePolicy policy = StridePolicy::Strict;

    /// Length of one flattened patch, kh*kw*c_in.
    std::size_t patch_size() const noexcept { return kh * kw * c_in; }

    /// Throws GeometryError unless every extent and the stride are >= 1.
    void validate() const;

    bool operator==(const ConvGeometry&) const = default;
};

std::string to_json(const ConvGeometry& g);

enum class PaddingMode { Valid, Half, Full, Explicit };

/// Per-side padding for a mode. Half and Full need a square kernel; Half also
/// needs it to be odd. `explicit_pad` is only read for Explicit.
std::size_t padding_for(PaddingMode mode, std::size_t kh, std::size_t kw,
                        std::size_t explicit_pad = 0);

PaddingMode parse_padding_mode(const std::string& name);

struct OutputShape {
    std::size_t h_out;
    std::size_t w_out;
    std::size_t c_out;

    std::size_t positions() const noexcept { return h_out * w_out; }
    bool operator==(const OutputShape&) const = default;
};

/// Output extent of a convolution over an unpadded h_in x w_in input:
///   h_out = (h_in + 2p - kh) / s + 1, same for w, c_out = f.
OutputShape output_shape(const ConvGeometry& g, std::size_t h_in, std::size_t w_in);

/// Same relation for an input that already carries its padding.
OutputShape output_shape_padded(const ConvGeometry& g, std::size_t h_padded, std::size_t w_padded);

/// Surrounds every (h, w) plane with `p` rows/cols of zeros on each side.
Tensor4 pad_zeros(const Tensor4& t, std::size_t p);

}  // namespace convlower
