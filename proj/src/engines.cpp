#include "convlower/engines.hpp"

#include <algorithm>
#include <thread>

#include "convlower/error.hpp"

namespace convlower {

std::string_view engine_name(Engine e) {
    switch (e) {
        case Engine::Direct: return "direct";
        case Engine::True2D: return "true2d";
        case Engine::Im2colGemm: return "gemm";
        case Engine::LazyGemm: return "lazy";
    }
    return "?";
}

Engine parse_engine(std::string_view name) {
    for (Engine e : {Engine::Direct, Engine::True2D, Engine::Im2colGemm, Engine::LazyGemm}) {
        if (engine_name(e) == name) return e;
    }
    throw Error("unknown engine '" + std::string(name) + "'");
}

namespace {

void gemm_rows(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k,
               const GemmSpec& spec) {
    const std::size_t bm = std::max<std::size_t>(spec.block_m, 1);
    const std::size_t bn = std::max<std::size_t>(spec.block_n, 1);
    const std::size_t bk = std::max<std::size_t>(spec.block_k, 1);
    for (std::size_t i0 = row_begin; i0 < row_end; i0 += bm) {
        const std::size_t i1 = std::min(row_end, i0 + bm);
        for (std::size_t k0 = 0; k0 < k; k0 += bk) {
            const std::size_t k1 = std::min(k, k0 + bk);
            for (std::size_t j0 = 0; j0 < n; j0 += bn) {
                const std::size_t j1 = std::min(n, j0 + bn);
                for (std::size_t i = i0; i < i1; ++i) {
                    double* crow = c.data() + i * n;
                    const double* arow = a.data() + i * k;
                    for (std::size_t kk = k0; kk < k1; ++kk) {
                        const double aik = arow[kk];
                        const double* brow = b.data() + kk * n;
                        for (std::size_t j = j0; j < j1; ++j) crow[j] += aik * brow[j];
                    }
                }
            }
        }
    }
}

}  // namespace

void gemm_accumulate(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t n, std::size_t k, const GemmSpec& spec) {
    if (a.size() != m * k || b.size() != k * n || c.size() != m * n) {
        throw ShapeError("gemm buffer sizes do not match " + std::to_string(m) + "x" +
                         std::to_string(k) + " * " + std::to_string(k) + "x" + std::to_string(n));
    }
    const std::size_t workers = std::clamp<std::size_t>(spec.threads, 1, std::max<std::size_t>(m, 1));
    if (workers == 1) {
        gemm_rows(a, b, c, 0, m, n, k, spec);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (m + workers - 1) / workers;
    for (std::size_t begin = 0; begin < m; begin += chunk) {
        const std::size_t end = std::min(m, begin + chunk);
        pool.emplace_back([&, begin, end] { gemm_rows(a, b, c, begin, end, n, k, spec); });
    }
}

Matrix2 gemm(const Matrix2& a, const Matrix2& b, const GemmSpec& spec) {
    if (a.cols() != b.rows()) {
        throw ShapeError("gemm dimension mismatch: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
    Matrix2 c(a.rows(), b.cols());
    gemm_accumulate(a.data(), b.data(), c.data(), a.rows(), b.cols(), a.cols(), spec);
    return c;
}

std::vector<double> conv1d(std::span<const double> g, std::span<const double> h) {
    if (g.empty() || h.empty()) throw ShapeError("conv1d needs non-empty sequences");
    const std::size_t len = g.size() + h.size() - 1;
    std::vector<double> out(len, 0.0);
    for (std::size_t n = 0; n < len; ++n) {
        // t ranges over indices where both g[t] and h[n - t] exist.
        const std::size_t t0 = n >= h.size() ? n - h.size() + 1 : 0;
        const std::size_t t1 = std::min(n, g.size() - 1);
        double acc = 0.0;
        for (std::size_t t = t0; t <= t1; ++t) acc += g[t] * h[n - t];
        out[n] = acc;
    }
    return out;
}

double cross_correlate_patch(std::span<const double> patch, std::span<const double> filt,
                             KernelShape shape) {
    if (patch.size() != shape.size() || filt.size() != shape.size()) {
        throw ShapeError("patch (" + std::to_string(patch.size()) + ") and filter (" +
                         std::to_string(filt.size()) + ") do not match kernel size " +
                         std::to_string(shape.size()));
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < patch.size(); ++k) acc += patch[k] * filt[k];
    return acc;
}

double cross_correlate_patch(const Matrix2& patch, const Matrix2& filt) {
    if (patch.rows() != filt.rows() || patch.cols() != filt.cols()) {
        throw ShapeError("patch and filter shapes differ");
    }
    return cross_correlate_patch(patch.data(), filt.data(), {patch.rows(), patch.cols(), 1});
}

std::vector<double> flip_kernel(std::span<const double> filt, KernelShape shape) {
    if (filt.size() != shape.size()) throw ShapeError("kernel size does not match its shape");
    std::vector<double> out(filt.size());
    for (std::size_t ki = 0; ki < shape.kh; ++ki)
        for (std::size_t kj = 0; kj < shape.kw; ++kj)
            for (std::size_t d = 0; d < shape.c; ++d) {
                const std::size_t src = ((shape.kh - 1 - ki) * shape.kw + (shape.kw - 1 - kj)) * shape.c + d;
                out[(ki * shape.kw + kj) * shape.c + d] = filt[src];
            }
    return out;
}

Matrix2 flip_kernel(const Matrix2& filt) {
    return Matrix2(filt.rows(), filt.cols(), flip_kernel(filt.data(), {filt.rows(), filt.cols(), 1}));
}

FilterBank flip_filters(const FilterBank& bank) {
    const KernelShape ks{bank.kh(), bank.kw(), bank.c_in()};
    std::vector<double> values;
    values.reserve(bank.data().size());
    for (std::size_t fi = 0; fi < bank.count(); ++fi) {
        auto flipped = flip_kernel(bank.filter(fi), ks);
        values.insert(values.end(), flipped.begin(), flipped.end());
    }
    return FilterBank(bank.count(), bank.kh(), bank.kw(), bank.c_in(), std::move(values));
}

namespace {

Tensor4 prepare(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom,
                OutputShape& out) {
    geom.validate();
    bank.check_matches(geom);
    if (input.shape().c != geom.c_in) {
        throw ShapeError("input has " + std::to_string(input.shape().c) +
                         " channels but geometry expects " + std::to_string(geom.c_in));
    }
    out = output_shape(geom, input.shape().h, input.shape().w);
    return pad_zeros(input, geom.pad);
}

// Literal sliding window. `flip` selects the reversed kernel index, which turns
// cross-correlation into true convolution without changing summation order.
void slide(const Tensor4& src, const FilterBank& bank, const ConvGeometry& g, bool flip,
           Tensor4& out, std::size_t row_begin, std::size_t row_end) {
    const auto& os = out.shape();
    for (std::size_t lr = row_begin; lr < row_end; ++lr) {
        const std::size_t l = lr / os.h;
        const std::size_t r = lr % os.h;
        for (std::size_t c = 0; c < os.w; ++c)
            for (std::size_t fi = 0; fi < g.f; ++fi) {
                double acc = 0.0;
                for (std::size_t ki = 0; ki < g.kh; ++ki)
                    for (std::size_t kj = 0; kj < g.kw; ++kj)
                        for (std::size_t d = 0; d < g.c_in; ++d) {
                            const std::size_t fki = flip ? g.kh - 1 - ki : ki;
                            const std::size_t fkj = flip ? g.kw - 1 - kj : kj;
                            acc += src(l, r * g.stride + ki, c * g.stride + kj, d) *
                                   bank(fi, fki, fkj, d);
                        }
                out(l, r, c, fi) = acc;
            }
    }
}

Tensor4 sliding_conv(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom,
                     bool flip, unsigned threads) {
    OutputShape os{};
    const Tensor4 src = prepare(input, bank, geom, os);
    Tensor4 out({input.shape().b, os.h_out, os.w_out, geom.f});
    const std::size_t rows = input.shape().b * os.h_out;
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, rows);
    if (workers == 1) {
        slide(src, bank, geom, flip, out, 0, rows);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (rows + workers - 1) / workers;
        for (std::size_t begin = 0; begin < rows; begin += chunk) {
            const std::size_t end = std::min(rows, begin + chunk);
            pool.emplace_back([&, begin, end] { slide(src, bank, geom, flip, out, begin, end); });
        }
    }
    return out;
}

}  // namespace

Tensor4 conv_direct(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom,
                    unsigned threads) {
    return sliding_conv(input, bank, geom, false, threads);
}

Tensor4 conv_true2d(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom) {
    return sliding_conv(input, bank, geom, true, 1);
}

Tensor4 conv_via_gemm(const Tensor4& input, const FilterBank& bank, const ConvGeometry& geom,
                      bool lazy, const GemmSpec& spec) {
    OutputShape os{};
    const Tensor4 src = prepare(input, bank, geom, os);
    const FilterMatrix l = stretch_filters(bank);
    const Shape4 out_shape{input.shape().b, os.h_out, os.w_out, geom.f};

    if (!lazy) {
        const LoweredMatrix lm = im2col(src, geom, spec.threads);
        return reshape_matrix_to_tensor4(gemm(lm.m, l.weights, spec), out_shape);
    }

    // Lazy path: M is never stored. The offset of column q relative to a
    // patch's top-left source element is the same for every row p.
    const IndexMap map(geom, src.shape());
    const std::size_t cols = map.cols();
    std::vector<std::size_t> rel(cols);
    for (std::size_t q = 0; q < cols; ++q) {
        const PatchOffset off = map.offset(q);
        rel[q] = (off.ki * src.shape().w + off.kj) * src.shape().c + off.d;
    }
    Matrix2 product(map.rows(), geom.f);
    const auto x = src.data();
    const auto w = l.weights.data();
    for (std::size_t p = 0; p < map.rows(); ++p) {
        const std::size_t origin = map.source_offset(p, 0);
        for (std::size_t fi = 0; fi < geom.f; ++fi) {
            double acc = 0.0;
            for (std::size_t q = 0; q < cols; ++q) acc += x[origin + rel[q]] * w[q * geom.f + fi];
            product(p, fi) = acc;
        }
    }
    return reshape_matrix_to_tensor4(product, out_shape);
}

Tensor4 run_engine(Engine e, const Tensor4& input, const FilterBank& bank,
                   const ConvGeometry& geom, unsigned threads) {
    switch (e) {
        case Engine::Direct: return conv_direct(input, bank, geom, threads);
        case Engine::True2D: return conv_true2d(input, bank, geom);
        case Engine::Im2colGemm: return conv_via_gemm(input, bank, geom, false, {.threads = threads});
        case Engine::LazyGemm: return conv_via_gemm(input, bank, geom, true, {.threads = threads});
    }
    throw Error("unknown engine");
}

std::size_t intermediate_bytes(Engine e, const Shape4& input, const ConvGeometry& geom) {
    if (e != Engine::Im2colGemm) return 0;
    const OutputShape os = output_shape(geom, input.h, input.w);
    return input.b * os.positions() * geom.patch_size() * sizeof(double);
}

}  // namespace convlower
