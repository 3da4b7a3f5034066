#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace convlower {

/// Batched feature-map shape, NHWC.
struct Shape4 {
    std::size_t b = 1;
    std::size_t h = 1;
    std::size_t w = 1;
    std::size_t c = 1;

    std::size_t size() const noexcept { return b * h * w * c; }
    bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

/// Dense f64 feature map stored row-major in (b, h, w, c) order.
/// Element (l, i, j, d) lives at flat offset ((l*h + i)*w + j)*c + d.
class Tensor4 {
public:
    /// Zero-filled tensor. Every dimension must be at least 1.
    explicit Tensor4(Shape4 shape);
    Tensor4(Shape4 shape, std::vector<double> data);

    const Shape4& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    std::size_t offset(std::size_t l, std::size_t i, std::size_t j, std::size_t d) const noexcept {
        return ((l * shape_.h + i) * shape_.w + j) * shape_.c + d;
    }

    /// Bounds-checked read; throws IndexError naming the axis.
    double at(std::size_t l, std::size_t i, std::size_t j, std::size_t d) const;

    double operator()(std::size_t l, std::size_t i, std::size_t j, std::size_t d) const noexcept {
        return data_[offset(l, i, j, d)];
    }
    double& operator()(std::size_t l, std::size_t i, std::size_t j, std::size_t d) noexcept {
        return data_[offset(l, i, j, d)];
    }

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_;
    std::vector<double> data_;
};

/// Dense f64 row-major matrix.
class Matrix2 {
public:
    Matrix2(std::size_t rows, std::size_t cols);
    Matrix2(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix2 identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    std::span<const double> row(std::size_t r) const noexcept {
        return std::span<const double>(data_).subspan(r * cols_, cols_);
    }
    std::span<double> row(std::size_t r) noexcept {
        return std::span<double>(data_).subspan(r * cols_, cols_);
    }

    double at(std::size_t r, std::size_t c) const;

    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }

    bool operator==(const Matrix2&) const = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// Zero-copy view of a matrix as `outer` stacked blocks of `rows` x `cols`.
/// The backing matrix must outlive the view.
class Tensor3View {
public:
    Tensor3View(const Matrix2& backing, std::size_t outer);

    std::size_t outer() const noexcept { return outer_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    const Matrix2& backing() const noexcept { return *backing_; }

    /// Contiguous storage of block `l`, rows*cols values.
    std::span<const double> block(std::size_t l) const;

    double at(std::size_t l, std::size_t r, std::size_t c) const;

private:
    const Matrix2* backing_;
    std::size_t outer_;
    std::size_t rows_;
    std::size_t cols_;
};

/// Relabels a (b*h*w, c) matrix as a (b, h, w, c) tensor. Data is copied verbatim.
Tensor4 reshape_matrix_to_tensor4(const Matrix2& m, Shape4 target);

/// Relabels a tensor as a (b*h*w, c) matrix.
Matrix2 tensor4_to_matrix(const Tensor4& t);

double frobenius_norm(const Matrix2& m);
double frobenius_norm(std::span<const double> values);

Matrix2 transpose(const Matrix2& m);

// Tensor dump format: one JSON header line
//   {"shape":[...],"dtype":"f64","order":"..."}
// followed by the raw little-endian f64 payload in layout order.

struct Dump {
    std::vector<std::size_t> shape;
    std::string order;
    std::vector<double> data;
};

void write_dump(std::ostream& out, std::span<const std::size_t> shape, const std::string& order,
                std::span<const double> data);
void write_dump(const std::string& path, std::span<const std::size_t> shape,
                const std::string& order, std::span<const double> data);
void write_dump(const std::string& path, const Tensor4& t);
void write_dump(const std::string& path, const Matrix2& m);

Dump read_dump(std::istream& in);
Dump read_dump(const std::string& path);

/// Reads a dump whose header declares a rank-4 "bhwc" tensor.
Tensor4 dump_to_tensor4(const Dump& d);

}  // namespace convlower
