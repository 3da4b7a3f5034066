#include "convlower/geometry.hpp"

#include <algorithm>

#include <json.hpp>

#include "convlower/error.hpp"

namespace convlower {

void ConvGeometry::validate() const {
    if (kh == 0 || kw == 0) throw GeometryError("kernel extents must be >= 1");
    if (c_in == 0) throw GeometryError("input channel count must be >= 1");
    if (f == 0) throw GeometryError("filter count must be >= 1");
    if (stride == 0) throw GeometryError("stride must be >= 1");
}

std::string to_json(const ConvGeometry& g) {
    nlohmann::json j = {{"kh", g.kh},         {"kw", g.kw},
                        {"c_in", g.c_in},     {"f", g.f},
                        {"stride", g.stride}, {"pad", g.pad},
                        {"truncate", g.policy == StridePolicy::Truncate}};
    return j.dump();
}

std::size_t padding_for(PaddingMode mode, std::size_t kh, std::size_t kw,
                        std::size_t explicit_pad) {
    switch (mode) {
        case PaddingMode::Valid:
            return 0;
        case PaddingMode::Half:
            if (kh != kw || kh % 2 == 0) {
                throw GeometryError("half padding needs a square kernel with odd extent");
            }
            return kh / 2;
        case PaddingMode::Full:
            if (kh != kw) throw GeometryError("full padding needs a square kernel");
            return kh - 1;
        case PaddingMode::Explicit:
            return explicit_pad;
    }
    throw GeometryError("unknown padding mode");
}

PaddingMode parse_padding_mode(const std::string& name) {
    if (name == "valid") return PaddingMode::Valid;
    if (name == "half") return PaddingMode::Half;
    if (name == "full") return PaddingMode::Full;
    if (name == "explicit") return PaddingMode::Explicit;
    throw GeometryError("unknown padding mode '" + name + "'");
}

namespace {

std::size_t out_extent(const char* axis, std::size_t padded, std::size_t k, std::size_t s,
                       StridePolicy policy) {
    if (padded < k) {
        throw GeometryError(std::string("kernel extent ") + std::to_string(k) +
                            " exceeds padded input " + axis + " " + std::to_string(padded));
    }
    const std::size_t span = padded - k;
    if (policy == StridePolicy::Strict && span % s != 0) throw StrideError(axis, span, s);
    return span / s + 1;
}

}  // namespace

OutputShape output_shape_padded(const ConvGeometry& g, std::size_t h_padded,
                                std::size_t w_padded) {
    g.validate();
    return {out_extent("height", h_padded, g.kh, g.stride, g.policy),
            out_extent("width", w_padded, g.kw, g.stride, g.policy), g.f};
}

OutputShape output_shape(const ConvGeometry& g, std::size_t h_in, std::size_t w_in) {
    return output_shape_padded(g, h_in + 2 * g.pad, w_in + 2 * g.pad);
}

Tensor4 pad_zeros(const Tensor4& t, std::size_t p) {
    if (p == 0) return t;
    const Shape4 s = t.shape();
    Tensor4 out({s.b, s.h + 2 * p, s.w + 2 * p, s.c});
    for (std::size_t l = 0; l < s.b; ++l)
        for (std::size_t i = 0; i < s.h; ++i) {
            // One input row is contiguous over (w, c).
            auto src = t.data().subspan(t.offset(l, i, 0, 0), s.w * s.c);
            std::copy(src.begin(), src.end(), out.data().begin() + out.offset(l, i + p, p, 0));
        }
    return out;
}

}  // namespace convlower
