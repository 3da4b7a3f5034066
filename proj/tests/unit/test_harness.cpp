#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "convlower/error.hpp"
#include "convlower/harness.hpp"

using namespace convlower;

TEST(RandomCase, StaysWithinBoundsAndIsValid) {
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const ConvCase c = random_case(seed);
        ASSERT_LE(c.input.b, 3u);
        ASSERT_LE(c.input.h, 12u);
        ASSERT_LE(c.input.w, 12u);
        ASSERT_LE(c.input.c, 4u);
        ASSERT_LE(c.geom.f, 5u);
        ASSERT_LE(c.geom.kh, std::min(c.input.h, c.input.w));
        ASSERT_LE(c.geom.kw, std::min(c.input.h, c.input.w));
        ASSERT_LE(c.geom.pad, 1u);
        ASSERT_EQ(c.geom.c_in, c.input.c);
        ASSERT_EQ(c.geom.policy, StridePolicy::Strict);
        ASSERT_NO_THROW(output_shape(c.geom, c.input.h, c.input.w));
    }
    EXPECT_EQ(to_json(random_case(3)), to_json(random_case(3)));
}

TEST(RandomCase, CoversStridesAndPadding) {
    std::map<std::size_t, int> strides;
    int padded = 0;
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        const ConvCase c = random_case(seed);
        ++strides[c.geom.stride];
        padded += c.geom.pad == 1;
    }
    EXPECT_GE(strides.size(), 3u);
    EXPECT_GT(padded, 100);
    EXPECT_LT(padded, 400);
}

TEST(RelativeError, Definition) {
    const Tensor4 a({1, 1, 1, 2}, {1, -3});
    const Tensor4 b({1, 1, 1, 2}, {1, -2});
    EXPECT_DOUBLE_EQ(relative_error(a, b), 1.0 / 4.0);
    EXPECT_EQ(relative_error(a, a), 0.0);
    EXPECT_EQ(relative_error(a, Tensor4({1, 1, 2, 1})), INFINITY);
    EXPECT_EQ(relative_error(a, Tensor4({1, 1, 1, 2}, {1, std::nan("")})), INFINITY);
}

TEST(Verify, SingleCaseIsDeterministic) {
    VerifyOptions o;
    o.cases = 1;
    const VerifyResult a = run_verify(o);
    const VerifyResult b = run_verify(o);
    EXPECT_TRUE(a.passed());
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Verify, DefaultSuitePasses) {
    const VerifyResult r = run_verify({});
    EXPECT_EQ(r.cases, 200u);
    EXPECT_TRUE(r.passed()) << r.to_json().dump();
    EXPECT_LE(r.max_rel_err, 1e-10);
}

TEST(Verify, InjectedFaultIsCaught) {
    VerifyOptions o;
    o.cases = 5;
    o.inject_fault = true;
    const VerifyResult r = run_verify(o);
    ASSERT_FALSE(r.passed());
    EXPECT_EQ(r.first_failure->index, 0u);
    EXPECT_EQ(r.first_failure->engine, "gemm");
    EXPECT_EQ(r.first_failure->case_seed, 42u);
    EXPECT_TRUE(r.to_json().contains("first_failure"));
}

TEST(Bench, ReportsMemoryAndChecksums) {
    const auto cases = default_bench_cases();
    ASSERT_EQ(cases.size(), 3u);
    const BenchReport rep = run_bench(cases, 1);
    ASSERT_EQ(rep.rows.size(), 12u);
    EXPECT_TRUE(rep.checksums_match());
    for (const BenchRow& row : rep.rows) {
        EXPECT_EQ(row.status, "ok");
        if (row.engine == Engine::Im2colGemm) {
            const OutputShape os = output_shape(row.c.geom, row.c.input.h, row.c.input.w);
            EXPECT_EQ(row.intermediate_bytes,
                      row.c.input.b * os.positions() * row.c.geom.patch_size() * sizeof(double));
        } else {
            EXPECT_EQ(row.intermediate_bytes, 0u);
        }
    }

    std::ostringstream csv;
    rep.write_csv(csv);
    std::istringstream lines(csv.str());
    std::string header;
    std::getline(lines, header);
    EXPECT_EQ(header, "case,b,h,w,c_in,kh,kw,stride,pad,f,engine,wall_ns,checksum,intermediate_bytes,status");
}

TEST(Bench, FailingCaseIsRecorded) {
    ConvCase bad{{1, 5, 5, 1}, {2, 2, 1, 1, 2, 0, StridePolicy::Strict}};  // (5-2) % 2 != 0
    const BenchReport rep = run_bench({bad}, 1);
    ASSERT_EQ(rep.rows.size(), 4u);
    for (const BenchRow& row : rep.rows) EXPECT_NE(row.status, "ok");
}
