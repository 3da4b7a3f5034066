#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convlower/geometry.hpp"
#include "convlower/lowering.hpp"
#include "convlower/tensor.hpp"

namespace convlower {

enum class Engine {
    Direct,      ///< sliding-window cross-correlation, the reference
    True2D,      ///< textbook convolution, kernel reversed spatially
    Im2colGemm,  ///< materialized M times stretched filters
    LazyGemm,    ///< same product, M read through IndexMap on demand
};

std::string_view engine_name(Engine e);
Engine parse_engine(std::string_view name);

/// Cache tiling for gemm. Block sizes change traversal order only; every output
/// element is accumulated in ascending-k order, so results are bitwise
/// independent of the blocking and of the thread count.
struct GemmSpec {
    std::size_t block_m = 64;
    std::size_t block_n = 256;
    std::size_t block_k = 128;
    unsigned threads = 1;
};

/// C += A * B on raw row-major buffers (A is m x k, B is k x n, C is m x n).
void gemm_accumulate(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t n, std::size_t k, const GemmSpec& spec = {});

Matrix2 gemm(const Matrix2& a, const Matrix2& b, const GemmSpec& spec = {});

/// Full discrete convolution of two finite sequences: out[n] = sum_t g[t] * h[n - t],
/// length |g| + |h| - 1.
std::vector<double> conv1d(std::span<const double> g, std::span<const double> h);

struct KernelShape {
    std::size_t kh, kw, c;
    std::size_t size() const noexcept { return kh * kw * c; }
};

/// Sum of elementwise products of a patch and a filter of identical shape.
double cross_correlate_patch(std::span<const double> patch, std::span<const double> filt,
                             KernelShape shape);
double cross_correlate_patch(const Matrix2& patch, const Matrix2& filt);

/// Reverses a (kh, kw, c) kernel along both spatial axes; channels keep their order.
std::vector<double> flip_kernel(std::span<const double> filt, KernelShape shape);
Matrix2 flip_kernel(const Matrix2& filt);
FilterBank flip_filters(const FilterBank& bank);

// All engines take an unpadded input and apply `geom.pad` zeros per side.
// Output shape is (b, h_out, w_out, f).

Tensor4 conv_direct(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom,
                    unsigned threads = 1);

Tensor4 conv_true2d(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom);

Tensor4 conv_via_gemm(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom,
                      bool lazy, const GemmSpec& spec = {});

Tensor4 run_engine(Engine e, const Tensor4& input, const FilterBank& bank,
                   const ConvGeometry& geom, unsigned threads = 1);

/// Bytes of intermediate storage an engine allocates beyond input and output.
std::size_t intermediate_bytes(Engine e, const Shape4& input, const ConvGeometry& geom);

}  // namespace convlower
