#include "convlower/lowering.hpp"

#include <algorithm>
#include <thread>

#include "convlower/error.hpp"

namespace convlower {

FilterBank::FilterBank(std::size_t f, std::size_t kh, std::size_t kw, std::size_t c_in)
    : t_({f, kh, kw, c_in}) {}

FilterBank::FilterBank(std::size_t f, std::size_t kh, std::size_t kw, std::size_t c_in,
                       std::vector<double> values)
    : t_({f, kh, kw, c_in}, std::move(values)) {}

FilterBank::FilterBank(Tensor4 t) : t_(std::move(t)) {}

std::span<const double> FilterBank::filter(std::size_t fi) const {
    if (fi >= count()) throw IndexError("f", fi, count());
    const std::size_t n = kh() * kw() * c_in();
    return t_.data().subspan(fi * n, n);
}

void FilterBank::check_matches(const ConvGeometry& g) const {
    if (count() != g.f || kh() != g.kh || kw() != g.kw || c_in() != g.c_in) {
        throw ShapeError("filter bank " + to_string(t_.shape()) +
                         " does not match geometry " + to_json(g));
    }
}

IndexMap::IndexMap(const ConvGeometry& g, Shape4 padded_src)
    : geom_(g), src_(padded_src), out_(output_shape_padded(g, padded_src.h, padded_src.w)) {
    if (padded_src.c != g.c_in) {
        throw ShapeError("source has " + std::to_string(padded_src.c) +
                         " channels but geometry expects " + std::to_string(g.c_in));
    }
}

SourceIndex IndexMap::operator()(std::size_t p, std::size_t q) const {
    if (p >= rows()) throw IndexError("p", p, rows());
    if (q >= cols()) throw IndexError("q", q, cols());
    return map_unchecked(p, q);
}

std::vector<MatrixIndex> IndexMap::preimage(SourceIndex s) const {
    std::vector<MatrixIndex> cells;
    if (s.l >= src_.b || s.i >= src_.h || s.j >= src_.w || s.d >= src_.c) return cells;
    const std::size_t st = geom_.stride;
    for (std::size_t row = 0; row < out_.h_out; ++row) {
        if (s.i < row * st || s.i - row * st >= geom_.kh) continue;
        for (std::size_t col = 0; col < out_.w_out; ++col) {
            if (s.j < col * st || s.j - col * st >= geom_.kw) continue;
            cells.push_back(to_matrix({s.l, row, col}, {s.i - row * st, s.j - col * st, s.d}));
        }
    }
    return cells;
}

SourceIndex index_map(std::size_t p, std::size_t q, const ConvGeometry& g, Shape4 padded_src) {
    return IndexMap(g, padded_src)(p, q);
}

namespace {

void fill_rows(const Tensor4& src, const IndexMap& map, Matrix2& m, std::size_t begin,
               std::size_t end) {
    const auto& g = map.geometry();
    const std::size_t run = g.kw * g.c_in;  // (kj, d) is contiguous in the source
    for (std::size_t p = begin; p < end; ++p) {
        const PatchPosition pos = map.position(p);
        auto dst = m.row(p).begin();
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            const SourceIndex s = map.compose(pos, {ki, 0, 0});
            auto first = src.data().begin() + src.offset(s.l, s.i, s.j, 0);
            dst = std::copy(first, first + run, dst);
        }
    }
}

}  // namespace

LoweredMatrix im2col(const Tensor4& padded_src, const ConvGeometry& geom, unsigned threads) {
    const IndexMap map(geom, padded_src.shape());
    Matrix2 m(map.rows(), map.cols());

    const std::size_t rows = map.rows();
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, rows);
    if (workers == 1) {
        fill_rows(padded_src, map, m, 0, rows);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (rows + workers - 1) / workers;
        for (std::size_t begin = 0; begin < rows; begin += chunk) {
            const std::size_t end = std::min(rows, begin + chunk);
            pool.emplace_back([&, begin, end] { fill_rows(padded_src, map, m, begin, end); });
        }
    }
    return {std::move(m), geom, padded_src.shape(), map.output()};
}

LoweredMatrix lower(const Tensor4& input, const ConvGeometry& geom, unsigned threads) {
    return im2col(pad_zeros(input, geom.pad), geom, threads);
}

FilterMatrix stretch_filters(const FilterBank& bank) {
    const std::size_t n = bank.kh() * bank.kw() * bank.c_in();
    Matrix2 l(n, bank.count());
    for (std::size_t fi = 0; fi < bank.count(); ++fi) {
        const auto flat = bank.filter(fi);
        for (std::size_t q = 0; q < n; ++q) l(q, fi) = flat[q];
    }
    return {std::move(l)};
}

FilterBank unstretch_filters(const Matrix2& l, std::size_t kh, std::size_t kw, std::size_t c_in) {
    const std::size_t n = kh * kw * c_in;
    if (l.rows() != n) {
        throw ShapeError("filter matrix has " + std::to_string(l.rows()) + " rows, expected " +
                         std::to_string(n));
    }
    FilterBank bank(l.cols(), kh, kw, c_in);
    auto out = bank.data();
    for (std::size_t fi = 0; fi < l.cols(); ++fi)
        for (std::size_t q = 0; q < n; ++q) out[fi * n + q] = l(q, fi);
    return bank;
}

Tensor3View lowered_view3(const LoweredMatrix& lm) { return Tensor3View(lm.m, lm.batch()); }

}  // namespace convlower
