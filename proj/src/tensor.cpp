#include "convlower/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "convlower/error.hpp"

namespace convlower {

namespace {

void require_positive(const Shape4& s) {
    if (s.b == 0 || s.h == 0 || s.w == 0 || s.c == 0) {
        throw ShapeError("tensor dimensions must be >= 1, got " + to_string(s));
    }
}

void check_axis(const char* axis, std::size_t idx, std::size_t extent) {
    if (idx >= extent) throw IndexError(axis, idx, extent);
}

std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int k = 0; k < 8; ++k) r = (r << 8) | ((v >> (8 * k)) & 0xffu);
        return r;
    }
    return v;
}

}  // namespace

std::string to_string(const Shape4& s) {
    return "(" + std::to_string(s.b) + "," + std::to_string(s.h) + "," + std::to_string(s.w) +
           "," + std::to_string(s.c) + ")";
}

Tensor4::Tensor4(Shape4 shape) : shape_(shape) {
    require_positive(shape_);
    data_.assign(shape_.size(), 0.0);
}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    require_positive(shape_);
    if (data_.size() != shape_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + to_string(shape_));
    }
}

double Tensor4::at(std::size_t l, std::size_t i, std::size_t j, std::size_t d) const {
    check_axis("b", l, shape_.b);
    check_axis("h", i, shape_.h);
    check_axis("w", j, shape_.w);
    check_axis("c", d, shape_.c);
    return (*this)(l, i, j, d);
}

Matrix2::Matrix2(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be >= 1");
    data_.assign(rows * cols, 0.0);
}

Matrix2::Matrix2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be >= 1");
    if (data_.size() != rows * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix2 Matrix2::identity(std::size_t n) {
    Matrix2 m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

double Matrix2::at(std::size_t r, std::size_t c) const {
    check_axis("row", r, rows_);
    check_axis("col", c, cols_);
    return (*this)(r, c);
}

Tensor3View::Tensor3View(const Matrix2& backing, std::size_t outer)
    : backing_(&backing), outer_(outer), rows_(0), cols_(backing.cols()) {
    if (outer == 0 || backing.rows() % outer != 0) {
        throw ShapeError("cannot partition " + std::to_string(backing.rows()) + " rows into " +
                         std::to_string(outer) + " equal blocks");
    }
    rows_ = backing.rows() / outer;
}

std::span<const double> Tensor3View::block(std::size_t l) const {
    check_axis("outer", l, outer_);
    return backing_->data().subspan(l * rows_ * cols_, rows_ * cols_);
}

double Tensor3View::at(std::size_t l, std::size_t r, std::size_t c) const {
    check_axis("outer", l, outer_);
    check_axis("row", r, rows_);
    check_axis("col", c, cols_);
    return (*backing_)(l * rows_ + r, c);
}

Tensor4 reshape_matrix_to_tensor4(const Matrix2& m, Shape4 target) {
    if (m.size() != target.size() || m.cols() != target.c) {
        throw ShapeError("cannot reshape " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " matrix to " + to_string(target));
    }
    return Tensor4(target, std::vector<double>(m.data().begin(), m.data().end()));
}

Matrix2 tensor4_to_matrix(const Tensor4& t) {
    const auto& s = t.shape();
    return Matrix2(s.b * s.h * s.w, s.c, std::vector<double>(t.data().begin(), t.data().end()));
}

double frobenius_norm(std::span<const double> values) {
    double acc = 0.0;
    for (double v : values) acc += v * v;
    return std::sqrt(acc);
}

double frobenius_norm(const Matrix2& m) { return frobenius_norm(m.data()); }

Matrix2 transpose(const Matrix2& m) {
    Matrix2 t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return t;
}

void write_dump(std::ostream& out, std::span<const std::size_t> shape, const std::string& order,
                std::span<const double> data) {
    nlohmann::ordered_json header;
    header["shape"] = std::vector<std::size_t>(shape.begin(), shape.end());
    header["dtype"] = "f64";
    header["order"] = order;
    out << header.dump() << '\n';
    for (double v : data) {
        std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
        char buf[8];
        std::memcpy(buf, &bits, 8);
        out.write(buf, 8);
    }
    if (!out) throw FormatError(FormatError::Kind::Io, "failed writing tensor dump");
}

void write_dump(const std::string& path, std::span<const std::size_t> shape,
                const std::string& order, std::span<const double> data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(FormatError::Kind::Io, "cannot open '" + path + "' for writing");
    write_dump(out, shape, order, data);
}

void write_dump(const std::string& path, const Tensor4& t) {
    const auto& s = t.shape();
    const std::size_t shape[] = {s.b, s.h, s.w, s.c};
    write_dump(path, shape, "bhwc", t.data());
}

void write_dump(const std::string& path, const Matrix2& m) {
    const std::size_t shape[] = {m.rows(), m.cols()};
    write_dump(path, shape, "rc", m.data());
}

Dump read_dump(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(FormatError::Kind::Truncated, "tensor dump: missing header line");
    }
    Dump d;
    try {
        auto header = nlohmann::json::parse(line);
        if (header.at("dtype").get<std::string>() != "f64") {
            throw FormatError(FormatError::Kind::BadHeader, "tensor dump: dtype must be f64");
        }
        d.shape = header.at("shape").get<std::vector<std::size_t>>();
        d.order = header.value("order", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::BadHeader,
                          std::string("tensor dump: bad header: ") + e.what());
    }
    if (d.shape.empty()) throw FormatError(FormatError::Kind::BadHeader, "tensor dump: empty shape");
    std::size_t count = 1;
    for (std::size_t dim : d.shape) {
        if (dim == 0) throw FormatError(FormatError::Kind::BadHeader, "tensor dump: zero dimension");
        if (count > SIZE_MAX / 8 / dim) {
            throw FormatError(FormatError::Kind::Overflow, "tensor dump: element count overflows");
        }
        count *= dim;
    }
    d.data.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
        char buf[8];
        if (!in.read(buf, 8)) {
            throw FormatError(FormatError::Kind::Truncated,
                              "tensor dump: payload truncated at element " + std::to_string(k));
        }
        std::uint64_t bits;
        std::memcpy(&bits, buf, 8);
        d.data[k] = std::bit_cast<double>(to_little_endian(bits));
    }
    return d;
}

Dump read_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::Io, "cannot open '" + path + "'");
    return read_dump(in);
}

Tensor4 dump_to_tensor4(const Dump& d) {
    if (d.shape.size() != 4 || (!d.order.empty() && d.order != "bhwc")) {
        throw FormatError(FormatError::Kind::BadHeader,
                          "tensor dump: expected a rank-4 bhwc tensor, got order '" + d.order + "'");
    }
    return Tensor4({d.shape[0], d.shape[1], d.shape[2], d.shape[3]}, d.data);
}

}  // namespace convlower
