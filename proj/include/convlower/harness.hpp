#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convlower/engines.hpp"
#include "convlower/geometry.hpp"
#include "convlower/tensor.hpp"

namespace convlower {

/// One convolution problem: an input shape plus a geometry that fits it.
struct ConvCase {
    Shape4 input;
    ConvGeometry geom;
};

nlohmann::json to_json(const ConvCase& c);

/// Random valid case with b<=3, h,w<=12, c_in<=4, f<=5, kh,kw<=min(h,w),
/// pad in {0,1} and a stride drawn uniformly among strides that divide both
/// swept spans exactly. Deterministic in `seed`.
ConvCase random_case(std::uint64_t seed);

/// Input and filter values for a case, uniform in [-1, 1).
struct CaseData {
    Tensor4 input;
    FilterBank bank;
};
CaseData random_case_data(const ConvCase& c, std::uint64_t seed);

/// max |ref - other| / (1 + max |ref|).
double relative_error(const Tensor4& ref, const Tensor4& other);

struct VerifyOptions {
    std::size_t cases = 200;
    std::uint64_t seed = 42;
    double tolerance = 1e-10;
    /// Negative control: perturb the im2col+GEMM output so verification must fail.
    bool inject_fault = false;
};

struct VerifyFailure {
    std::size_t index;
    std::uint64_t case_seed;  ///< `verify --cases 1 --seed <case_seed>` replays it
    ConvCase c;
    std::string engine;
    double rel_err;
};

struct VerifyResult {
    std::size_t cases = 0;
    double max_rel_err = 0.0;
    ConvCase worst{};
    std::optional<VerifyFailure> first_failure;

    bool passed() const noexcept { return !first_failure.has_value(); }
    nlohmann::json to_json() const;
};

/// Runs direct, im2col+GEMM and lazy engines on `cases` random cases. Case k
/// uses seed `seed + k`.
VerifyResult run_verify(const VerifyOptions& opts);

struct BenchRow {
    std::size_t case_index;
    ConvCase c;
    Engine engine;
    std::uint64_t wall_ns;  ///< median over repetitions
    double checksum;        ///< sum of output values
    std::size_t intermediate_bytes;
    std::string status;     ///< "ok" or the error message
};

struct BenchReport {
    std::vector<BenchRow> rows;

    /// True when every successful row of a case agrees with the case's first
    /// successful row to `rel_tol` relative.
    bool checksums_match(double rel_tol = 1e-10) const;
    void write_csv(std::ostream& out) const;
};

std::vector<ConvCase> default_bench_cases();

/// Times every engine on every case: one warm-up run, then `reps` timed runs.
/// True2D is fed the flipped bank so all engines compute the same result.
/// A failing engine is recorded in its row and the run continues.
BenchReport run_bench(const std::vector<ConvCase>& cases, std::size_t reps, unsigned threads = 1,
                      std::uint64_t seed = 42);

}  // namespace convlower
