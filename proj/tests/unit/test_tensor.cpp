#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <sstream>

#include "convlower/error.hpp"
#include "convlower/tensor.hpp"
#include "oracles.hpp"

using namespace convlower;

TEST(Tensor4, AtSingleElement) {
    Tensor4 t({1, 1, 1, 1}, {7.0});
    EXPECT_EQ(t.at(0, 0, 0, 0), 7.0);
}

TEST(Tensor4, AtRowMajorLayout) {
    Tensor4 a({1, 2, 2, 1}, {1, 2, 3, 4});
    EXPECT_EQ(a.at(0, 1, 0, 0), 3.0);
    Tensor4 b({2, 1, 1, 2}, {1, 2, 3, 4});
    EXPECT_EQ(b.at(1, 0, 0, 1), 4.0);
}

TEST(Tensor4, OutOfBoundsNamesAxis) {
    Tensor4 t({2, 3, 4, 5});
    auto axis_of = [&](auto fn) {
        try {
            fn();
        } catch (const IndexError& e) {
            return e.axis();
        }
        return std::string("none");
    };
    EXPECT_EQ(axis_of([&] { t.at(2, 0, 0, 0); }), "b");
    EXPECT_EQ(axis_of([&] { t.at(0, 3, 0, 0); }), "h");
    EXPECT_EQ(axis_of([&] { t.at(0, 0, 4, 0); }), "w");
    EXPECT_EQ(axis_of([&] { t.at(0, 0, 0, 5); }), "c");
}

TEST(Tensor4, RejectsBadConstruction) {
    EXPECT_THROW(Tensor4({1, 0, 1, 1}), ShapeError);
    EXPECT_THROW(Tensor4({1, 2, 2, 1}, {1, 2, 3}), ShapeError);
}

TEST(Tensor4, AtAgreesWithEnumeratedLayout) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> dim(1, 5);
    for (int trial = 0; trial < 20; ++trial) {
        const Shape4 s{std::min<std::size_t>(dim(rng), 3), dim(rng), dim(rng), std::min<std::size_t>(dim(rng), 4)};
        Tensor4 t(s, oracle::uniform(s.size(), rng));
        std::size_t k = 0;
        for (std::size_t l = 0; l < s.b; ++l)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j)
                    for (std::size_t d = 0; d < s.c; ++d, ++k) {
                        ASSERT_EQ(t.at(l, i, j, d), t.data()[k]);
                    }
        // spot-check the closed-form offset against the enumeration oracle
        EXPECT_EQ(t.offset(s.b - 1, s.h / 2, s.w - 1, 0),
                  oracle::enumerated_offset(s.b, s.h, s.w, s.c, s.b - 1, s.h / 2, s.w - 1, 0));
    }
}

TEST(Reshape, MatrixToTensor) {
    EXPECT_EQ(reshape_matrix_to_tensor4(Matrix2(1, 1, {5}), {1, 1, 1, 1}).data()[0], 5.0);
    const Tensor4 t = reshape_matrix_to_tensor4(Matrix2(4, 1, {1, 2, 3, 4}), {1, 2, 2, 1});
    EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1, 2, 3, 4}));
    EXPECT_THROW(reshape_matrix_to_tensor4(Matrix2(2, 3), {1, 1, 1, 7}), ShapeError);
}

TEST(Reshape, RoundTripIsIdentityOnFlatData) {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    for (int trial = 0; trial < 50; ++trial) {
        const Shape4 s{dim(rng), dim(rng), dim(rng), dim(rng)};
        const Tensor4 t(s, oracle::uniform(s.size(), rng));
        const Tensor4 back = reshape_matrix_to_tensor4(tensor4_to_matrix(t), s);
        ASSERT_EQ(std::memcmp(back.data().data(), t.data().data(), s.size() * sizeof(double)), 0);
    }
}

TEST(Frobenius, Examples) {
    EXPECT_EQ(frobenius_norm(Matrix2(2, 2)), 0.0);
    EXPECT_EQ(frobenius_norm(Matrix2(1, 2, {3, 4})), 5.0);
    EXPECT_EQ(frobenius_norm(Matrix2(2, 2, {1, 1, 1, 1})), 2.0);
}

TEST(Tensor3View, PartitionsBackingMatrix) {
    Matrix2 m(6, 2, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
    Tensor3View single(m, 1);
    EXPECT_EQ(single.rows(), 6u);
    EXPECT_EQ(single.block(0).data(), m.data().data());

    Tensor3View v(m, 3);
    EXPECT_EQ(v.rows(), 2u);
    EXPECT_EQ(v.cols(), 2u);
    EXPECT_EQ(v.at(2, 1, 0), 10.0);
    std::vector<double> concat;
    for (std::size_t l = 0; l < v.outer(); ++l) concat.insert(concat.end(), v.block(l).begin(), v.block(l).end());
    EXPECT_EQ(concat, std::vector<double>(m.data().begin(), m.data().end()));
    EXPECT_THROW(Tensor3View(m, 4), ShapeError);
}

TEST(Dump, HeaderAndLittleEndianPayload) {
    std::ostringstream out;
    const std::size_t shape[] = {1, 1, 1, 2};
    const double values[] = {1.0, -2.5};
    write_dump(out, shape, "bhwc", values);
    const std::string bytes = out.str();
    const std::string header = R"({"shape":[1,1,1,2],"dtype":"f64","order":"bhwc"})";
    ASSERT_EQ(bytes.substr(0, header.size() + 1), header + "\n");
    ASSERT_EQ(bytes.size(), header.size() + 1 + 16);
    // 1.0 = 0x3FF0000000000000, little-endian: 00 .. 00 F0 3F
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + header.size() + 1;
    EXPECT_EQ(p[6], 0xF0);
    EXPECT_EQ(p[7], 0x3F);
}

TEST(Dump, RoundTripRandomTensors) {
    std::mt19937_64 rng(3);
    for (std::size_t trial = 0; trial < 10; ++trial) {
        const Shape4 s{1 + trial % 3, 2 + trial, 3, 1 + trial % 2};
        const Tensor4 t(s, oracle::uniform(s.size(), rng, -1e6, 1e6));
        std::stringstream io;
        const std::size_t shape[] = {s.b, s.h, s.w, s.c};
        write_dump(io, shape, "bhwc", t.data());
        EXPECT_EQ(dump_to_tensor4(read_dump(io)), t);
    }
}

TEST(Dump, TruncatedPayloadIsRejected) {
    std::stringstream io;
    io << R"({"shape":[2,2],"dtype":"f64","order":"rc"})" << '\n' << "abc";
    try {
        read_dump(io);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.kind(), FormatError::Kind::Truncated);
    }
}
