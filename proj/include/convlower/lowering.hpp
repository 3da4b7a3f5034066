#pragma once

#include <cstddef>
#include <vector>

#include "convlower/geometry.hpp"
#include "convlower/tensor.hpp"

namespace convlower {

/// A set of f filters, each kh x kw x c_in, stored row-major in (f, kh, kw, c_in).
class FilterBank {
public:
    FilterBank(std::size_t f, std::size_t kh, std::size_t kw, std::size_t c_in);
    FilterBank(std::size_t f, std::size_t kh, std::size_t kw, std::size_t c_in,
               std::vector<double> values);
    explicit FilterBank(Tensor4 t);

    std::size_t count() const noexcept { return t_.shape().b; }
    std::size_t kh() const noexcept { return t_.shape().h; }
    std::size_t kw() const noexcept { return t_.shape().w; }
    std::size_t c_in() const noexcept { return t_.shape().c; }

    const Tensor4& tensor() const noexcept { return t_; }
    std::span<const double> data() const noexcept { return t_.data(); }
    std::span<double> data() noexcept { return t_.data(); }

    /// One filter's kh*kw*c_in values in canonical (ki, kj, d) order.
    std::span<const double> filter(std::size_t fi) const;

    double operator()(std::size_t fi, std::size_t ki, std::size_t kj, std::size_t d) const noexcept {
        return t_(fi, ki, kj, d);
    }
    double& operator()(std::size_t fi, std::size_t ki, std::size_t kj, std::size_t d) noexcept {
        return t_(fi, ki, kj, d);
    }

    /// Throws ShapeError unless (f, kh, kw, c_in) agree with `g`.
    void check_matches(const ConvGeometry& g) const;

    bool operator==(const FilterBank&) const = default;

private:
    Tensor4 t_;
};

/// Stretched filters: a (kh*kw*c_in, f) matrix whose column i is filter i flattened.
struct FilterMatrix {
    Matrix2 weights;
};

struct SourceIndex {
    std::size_t l, i, j, d;
    bool operator==(const SourceIndex&) const = default;
};

struct MatrixIndex {
    std::size_t p, q;
    bool operator==(const MatrixIndex&) const = default;
};

/// Row p of M decomposed: sample l and output position (row, col).
struct PatchPosition {
    std::size_t l, row, col;
};

/// Column q of M decomposed row-major: q = (ki*kw + kj)*c_in + d.
struct PatchOffset {
    std::size_t ki, kj, d;
};

/// Maps cells of the lowered matrix M back to the (padded) source tensor
/// without materializing M:
///   l = p / (h_out*w_out), r = p % (h_out*w_out), row = r / w_out, col = r % w_out
///   i = row*s + ki,        j = col*s + kj
class IndexMap {
public:
    IndexMap(const ConvGeometry& g, Shape4 padded_src);

    const ConvGeometry& geometry() const noexcept { return geom_; }
    const Shape4& source_shape() const noexcept { return src_; }
    const OutputShape& output() const noexcept { return out_; }
    std::size_t rows() const noexcept { return src_.b * out_.h_out * out_.w_out; }
    std::size_t cols() const noexcept { return geom_.patch_size(); }

    /// Bounds-checked forward map.
    SourceIndex operator()(std::size_t p, std::size_t q) const;

    SourceIndex map_unchecked(std::size_t p, std::size_t q) const noexcept {
        return compose(position(p), offset(q));
    }

    /// Flat offset into the source tensor for (p, q), unchecked.
    std::size_t source_offset(std::size_t p, std::size_t q) const noexcept {
        const SourceIndex s = map_unchecked(p, q);
        return ((s.l * src_.h + s.i) * src_.w + s.j) * src_.c + s.d;
    }

    PatchPosition position(std::size_t p) const noexcept {
        const std::size_t per_sample = out_.h_out * out_.w_out;
        const std::size_t r = p % per_sample;
        return {p / per_sample, r / out_.w_out, r % out_.w_out};
    }

    PatchOffset offset(std::size_t q) const noexcept {
        const std::size_t d = q % geom_.c_in;
        const std::size_t rest = q / geom_.c_in;
        return {rest / geom_.kw, rest % geom_.kw, d};
    }

    SourceIndex compose(PatchPosition pos, PatchOffset off) const noexcept {
        return {pos.l, pos.row * geom_.stride + off.ki, pos.col * geom_.stride + off.kj, off.d};
    }

    /// Inverse of position()/offset().
    MatrixIndex to_matrix(PatchPosition pos, PatchOffset off) const noexcept {
        return {(pos.l * out_.h_out + pos.row) * out_.w_out + pos.col,
                (off.ki * geom_.kw + off.kj) * geom_.c_in + off.d};
    }

    /// Every cell of M that reads source element `s`, ascending in (p, q).
    /// Empty when `s` is never visited (possible under truncation).
    std::vector<MatrixIndex> preimage(SourceIndex s) const;

private:
    ConvGeometry geom_;
    Shape4 src_;
    OutputShape out_;
};

SourceIndex index_map(std::size_t p, std::size_t q, const ConvGeometry& g, Shape4 padded_src);

/// The materialized patch matrix M of shape (b*h_out*w_out, kh*kw*c_in).
struct LoweredMatrix {
    Matrix2 m;
    ConvGeometry geom;
    Shape4 src_shape;  ///< shape of the padded source
    OutputShape out;

    std::size_t batch() const noexcept { return src_shape.b; }
};

/// Copies every patch of an already padded source into one row of M. Rows are
/// batch-major, then output positions left to right, top to bottom. `geom.pad`
/// is not applied again. Disjoint row ranges are filled on up to `threads`
/// workers; the result does not depend on the thread count.
LoweredMatrix im2col(const Tensor4& padded_src, const ConvGeometry& geom, unsigned threads = 1);

/// Pads `input` by `geom.pad` and lowers it.
LoweredMatrix lower(const Tensor4& input, const ConvGeometry& geom, unsigned threads = 1);

FilterMatrix stretch_filters(const FilterBank& bank);

/// Inverse relabeling of stretch_filters.
FilterBank unstretch_filters(const Matrix2& l, std::size_t kh, std::size_t kw, std::size_t c_in);

/// M viewed as (b, h_out*w_out, kh*kw*c_in) without copying.
Tensor3View lowered_view3(const LoweredMatrix& lm);

}  // namespace convlower
