#include "convlower/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include "convlower/error.hpp"

namespace convlower {

nlohmann::json to_json(const ConvCase& c) {
    return {{"b", c.input.b},       {"h", c.input.h},           {"w", c.input.w},
            {"c_in", c.geom.c_in},  {"f", c.geom.f},            {"kh", c.geom.kh},
            {"kw", c.geom.kw},      {"stride", c.geom.stride},  {"pad", c.geom.pad}};
}

ConvCase random_case(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    ConvCase c;
    c.input.b = pick(1, 3);
    c.input.h = pick(1, 12);
    c.input.w = pick(1, 12);
    c.input.c = pick(1, 4);
    c.geom.c_in = c.input.c;
    c.geom.f = pick(1, 5);
    const std::size_t kmax = std::min(c.input.h, c.input.w);
    c.geom.kh = pick(1, kmax);
    c.geom.kw = pick(1, kmax);
    c.geom.pad = pick(0, 1);

    const std::size_t span_h = c.input.h + 2 * c.geom.pad - c.geom.kh;
    const std::size_t span_w = c.input.w + 2 * c.geom.pad - c.geom.kw;
    std::vector<std::size_t> strides;
    for (std::size_t s = 1; s <= std::max<std::size_t>({span_h, span_w, 1}); ++s) {
        if (span_h % s == 0 && span_w % s == 0) strides.push_back(s);
    }
    c.geom.stride = strides[pick(0, strides.size() - 1)];
    return c;
}

CaseData random_case_data(const ConvCase& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor4 input(c.input);
    for (double& v : input.data()) v = dist(rng);
    FilterBank bank(c.geom.f, c.geom.kh, c.geom.kw, c.geom.c_in);
    for (double& v : bank.data()) v = dist(rng);
    return {std::move(input), std::move(bank)};
}

double relative_error(const Tensor4& ref, const Tensor4& other) {
    if (!(ref.shape() == other.shape())) return INFINITY;
    double max_diff = 0.0;
    double max_ref = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
        const double diff = std::abs(ref.data()[k] - other.data()[k]);
        // NaN must never compare as agreement.
        if (!(diff <= max_diff)) max_diff = std::isnan(diff) ? INFINITY : diff;
        max_ref = std::max(max_ref, std::abs(ref.data()[k]));
    }
    return max_diff / (1.0 + max_ref);
}

nlohmann::json VerifyResult::to_json() const {
    nlohmann::json j = {{"cases", cases},
                        {"max_rel_err", max_rel_err},
                        {"worst_geometry", convlower::to_json(worst)},
                        {"passed", passed()}};
    if (first_failure) {
        j["first_failure"] = {{"index", first_failure->index},
                              {"seed", first_failure->case_seed},
                              {"engine", first_failure->engine},
                              {"rel_err", first_failure->rel_err},
                              {"geometry", convlower::to_json(first_failure->c)}};
    }
    return j;
}

VerifyResult run_verify(const VerifyOptions& opts) {
    if (opts.cases == 0) throw Error("verify needs at least one case");
    VerifyResult result;
    for (std::size_t k = 0; k < opts.cases; ++k) {
        const std::uint64_t case_seed = opts.seed + k;
        const ConvCase c = random_case(case_seed);
        const CaseData d = random_case_data(c, case_seed);
        const Tensor4 ref = conv_direct(d.input, d.bank, c.geom);

        for (Engine e : {Engine::Im2colGemm, Engine::LazyGemm}) {
            Tensor4 out = run_engine(e, d.input, d.bank, c.geom);
            if (opts.inject_fault && e == Engine::Im2colGemm) out.data()[0] += 1e-3;
            const double err = relative_error(ref, out);
            if (err > result.max_rel_err || (k == 0 && e == Engine::Im2colGemm)) {
                result.max_rel_err = std::max(result.max_rel_err, err);
                result.worst = c;
            }
            if (!(err <= opts.tolerance) && !result.first_failure) {
                result.first_failure = VerifyFailure{k, case_seed, c, std::string(engine_name(e)), err};
            }
        }
        result.cases = k + 1;
    }
    return result;
}

std::vector<ConvCase> default_bench_cases() {
    return {
        // one MNIST-shaped batch, non-overlapping 4x4 patches
        {{16, 28, 28, 1}, {4, 4, 1, 16, 4, 0, StridePolicy::Strict}},
        // the overlapping k=4, s=2 layer of the equivalence experiment
        {{16, 28, 28, 1}, {4, 4, 1, 32, 2, 0, StridePolicy::Strict}},
        // a small RGB-style 3x3 "same" convolution
        {{4, 32, 32, 3}, {3, 3, 3, 16, 1, 1, StridePolicy::Strict}},
    };
}

bool BenchReport::checksums_match(double rel_tol) const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].status != "ok") continue;
        for (std::size_t j = 0; j < i; ++j) {
            if (rows[j].case_index != rows[i].case_index || rows[j].status != "ok") continue;
            const double a = rows[i].checksum;
            const double b = rows[j].checksum;
            if (!(std::abs(a - b) <= rel_tol * (1.0 + std::max(std::abs(a), std::abs(b))))) return false;
            break;
        }
    }
    return true;
}

void BenchReport::write_csv(std::ostream& out) const {
    out << "case,b,h,w,c_in,kh,kw,stride,pad,f,engine,wall_ns,checksum,intermediate_bytes,status\n";
    const auto old = out.precision(17);
    for (const auto& r : rows) {
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        out << r.case_index << ',' << r.c.input.b << ',' << r.c.input.h << ',' << r.c.input.w << ','
            << r.c.geom.c_in << ',' << r.c.geom.kh << ',' << r.c.geom.kw << ',' << r.c.geom.stride
            << ',' << r.c.geom.pad << ',' << r.c.geom.f << ',' << engine_name(r.engine) << ','
            << r.wall_ns << ',' << r.checksum << ',' << r.intermediate_bytes << ',' << status << '\n';
    }
    out.precision(old);
}

BenchReport run_bench(const std::vector<ConvCase>& cases, std::size_t reps, unsigned threads,
                      std::uint64_t seed) {
    using clock = std::chrono::steady_clock;
    BenchReport report;
    const std::size_t timed = std::max<std::size_t>(reps, 1);
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const ConvCase& c = cases[ci];
        for (Engine e : {Engine::Direct, Engine::True2D, Engine::Im2colGemm, Engine::LazyGemm}) {
            BenchRow row{ci, c, e, 0, NAN, 0, "ok"};
            try {
                const CaseData d = random_case_data(c, seed + ci);
                const FilterBank bank = e == Engine::True2D ? flip_filters(d.bank) : d.bank;
                row.intermediate_bytes = intermediate_bytes(e, c.input, c.geom);
                Tensor4 out = run_engine(e, d.input, bank, c.geom, threads);  // warm-up
                std::vector<std::uint64_t> times;
                for (std::size_t r = 0; r < timed; ++r) {
                    const auto t0 = clock::now();
                    out = run_engine(e, d.input, bank, c.geom, threads);
                    const auto t1 = clock::now();
                    times.push_back(static_cast<std::uint64_t>(
                        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
                }
                std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
                row.wall_ns = times[times.size() / 2];
                double sum = 0.0;
                for (double v : out.data()) sum += v;
                row.checksum = sum;
            } catch (const std::exception& ex) {
                row.status = ex.what();
            }
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

}  // namespace convlower
