#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "convlower/engines.hpp"
#include "convlower/error.hpp"
#include "convlower/linear_nn.hpp"
#include "oracles.hpp"

using namespace convlower;

namespace {

const ConvGeometry kToy{2, 2, 1, 3, 2, 0, StridePolicy::Strict};

Tensor4 toy_input(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Tensor4({2, 4, 4, 1}, oracle::uniform(32, rng, 0.0, 1.0));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
    return m;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Relative error of an analytic gradient against central differences, taken
// over the whole tensor so near-zero entries do not dominate.
double fd_relative_error(std::span<double> params, std::span<const double> analytic,
                         const std::function<double()>& loss) {
    std::vector<double> numeric(params.size());
    for (std::size_t k = 0; k < params.size(); ++k)
        numeric[k] = oracle::central_difference(params[k], 1e-6, loss);
    return max_abs_diff(analytic, numeric) / std::max(max_abs(numeric), 1e-12);
}

}  // namespace

TEST(HeInit, MomentsMatchFanIn) {
    std::mt19937_64 rng(42);
    const auto w = he_init(100000, 16, rng);
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size());
    EXPECT_GE(var, 0.115);
    EXPECT_LE(var, 0.135);
    EXPECT_GE(mean, -0.01);
    EXPECT_LE(mean, 0.01);
}

TEST(HeInit, Deterministic) {
    std::mt19937_64 a(7), b(7);
    EXPECT_EQ(he_init(64, 9, a), he_init(64, 9, b));
}

TEST(Bijection, DenseAndBankRoundTrip) {
    std::mt19937_64 rng(3);
    const ConvGeometry g{3, 2, 2, 4, 1, 0, StridePolicy::Strict};
    const FilterBank bank(4, 3, 2, 2, oracle::uniform(48, rng));
    const LinearLayer dense = bank_to_dense(bank);
    EXPECT_EQ(dense.in_dim(), 12u);
    EXPECT_EQ(dense.out_dim(), 4u);
    EXPECT_EQ(dense_to_bank(dense, g), bank);
}

TEST(SharedInit, BothPathsStartFromTheSameWeights) {
    const SharedInit init = shared_init(kToy, 12, 16, 5);
    EXPECT_EQ(bank_to_dense(init.cnn.conv.bank).w, init.fc.dense1.w);
    EXPECT_EQ(init.cnn.head.w, init.fc.head.w);
    EXPECT_EQ(shared_init(kToy, 12, 16, 5).fc.dense1.w, init.fc.dense1.w);
    EXPECT_NE(shared_init(kToy, 12, 16, 6).fc.dense1.w, init.fc.dense1.w);
}

TEST(Forward, IdentityNetwork) {
    const ConvGeometry g{1, 1, 1, 1, 1, 0, StridePolicy::Strict};
    const Tensor4 x({1, 2, 2, 1}, {1, 2, 3, 4});
    const ForwardResult r = forward_cnn(x, {FilterBank(1, 1, 1, 1, {1}), g}, {Matrix2::identity(4)});
    EXPECT_EQ(r.y_hat, flatten_samples(x));
    EXPECT_EQ(mse(r.y_hat, flatten_samples(x)), 0.0);
}

TEST(Forward, ZeroWeightsGiveMeanSquare) {
    const Tensor4 x = toy_input(1);
    const ForwardResult r = forward_cnn(x, {FilterBank(3, 2, 2, 1), kToy}, {Matrix2(12, 16)});
    double ms = 0.0;
    for (double v : x.data()) ms += v * v;
    ms /= 32.0;
    EXPECT_NEAR(mse(r.y_hat, flatten_samples(x)), ms, 1e-15);
}

TEST(Forward, CnnAndFcPathsAgree) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Tensor4 x = toy_input(seed + 50);
        const SharedInit init = shared_init(kToy, 12, 16, seed);
        const ForwardResult a = forward_cnn(x, init.cnn.conv, init.cnn.head);
        const LoweredMatrix lm = lower(x, kToy);
        const ForwardResult b = forward_fc(lowered_view3(lm), init.fc.dense1, init.fc.head);
        EXPECT_LE(max_abs_diff(a.hidden.data(), b.hidden.data()), 1e-12);
        EXPECT_LE(max_abs_diff(a.y_hat.data(), b.y_hat.data()), 1e-12);
    }
}

TEST(Mse, Examples) {
    EXPECT_EQ(mse(Matrix2(1, 2, {1, 2}), Matrix2(1, 2, {1, 2})), 0.0);
    EXPECT_EQ(mse(Matrix2(1, 2), Matrix2(1, 2, {1, 3})), 5.0);
    EXPECT_THROW(mse(Matrix2(1, 2), Matrix2(2, 1)), ShapeError);
}

TEST(Mse, QuadraticHomogeneity) {
    std::mt19937_64 rng(6);
    const Matrix2 a(3, 4, oracle::uniform(12, rng));
    const Matrix2 b(3, 4, oracle::uniform(12, rng));
    Matrix2 a2 = a, b2 = b;
    for (double& v : a2.data()) v *= 3.0;
    for (double& v : b2.data()) v *= 3.0;
    EXPECT_NEAR(mse(a2, b2), 9.0 * mse(a, b), 1e-12);
}

TEST(Mse, GradientMatchesDefinition) {
    const Matrix2 g = mse_grad(Matrix2(1, 2, {1, 0}), Matrix2(1, 2, {0, 2}));
    EXPECT_EQ(g, Matrix2(1, 2, {1.0, -2.0}));
}

TEST(Optimizer, SgdScalarStep) {
    TrainConfig cfg;
    cfg.lr = 0.01;
    Optimizer opt(cfg);
    std::vector<double> w{1.0};
    const std::vector<double> g{0.5};
    opt.step("head", w, g);
    EXPECT_DOUBLE_EQ(w[0], 0.995);
}

TEST(Optimizer, ZeroGradientLeavesWeights) {
    for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
        TrainConfig cfg;
        cfg.optimizer = kind;
        Optimizer opt(cfg);
        std::vector<double> w{0.25, -3.0};
        const std::vector<double> g{0.0, 0.0};
        opt.step("conv", w, g);
        EXPECT_EQ(w, (std::vector<double>{0.25, -3.0}));
    }
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
    // bias-corrected first step is lr * g / (|g| + eps)
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Adam;
    cfg.lr = 0.001;
    Optimizer opt(cfg);
    std::vector<double> w{1.0, 1.0};
    const std::vector<double> g{4.0, -0.5};
    opt.step("dense1", w, g);
    EXPECT_NEAR(w[0], 1.0 - 0.001 * 4.0 / (4.0 + 1e-8), 1e-15);
    EXPECT_NEAR(w[1], 1.0 + 0.001 * 0.5 / (0.5 + 1e-8), 1e-15);
}

TEST(Optimizer, NonFiniteGradientNamesLayer) {
    Optimizer opt(TrainConfig{});
    std::vector<double> w{1.0};
    const std::vector<double> g{std::nan("")};
    try {
        opt.step("head", w, g);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_EQ(e.layer(), "head");
    }
}

TEST(Gradients, CnnMatchesFiniteDifferences) {
    const Tensor4 x = toy_input(17);
    const Matrix2 y = flatten_samples(x);
    CnnModel model = shared_init(kToy, 12, 16, 17).cnn;
    const CnnGradients g = cnn_gradients(model, x, y);
    auto loss = [&] { return mse(forward_cnn(x, model.conv, model.head).y_hat, y); };
    EXPECT_LE(fd_relative_error(model.conv.bank.data(), g.filters.data(), loss), 1e-6);
    EXPECT_LE(fd_relative_error(model.head.w.data(), g.head.data(), loss), 1e-6);
}

TEST(Gradients, FcMatchesFiniteDifferences) {
    const Tensor4 x = toy_input(18);
    const Matrix2 y = flatten_samples(x);
    const LoweredMatrix lm = lower(x, kToy);
    const Tensor3View view = lowered_view3(lm);
    FcModel model = shared_init(kToy, 12, 16, 18).fc;
    const FcGradients g = fc_gradients(model, view, y);
    auto loss = [&] { return mse(forward_fc(view, model.dense1, model.head).y_hat, y); };
    EXPECT_LE(fd_relative_error(model.dense1.w.data(), g.dense1.data(), loss), 1e-6);
    EXPECT_LE(fd_relative_error(model.head.w.data(), g.head.data(), loss), 1e-6);
}

TEST(Gradients, PathsAgreeThroughBijection) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Tensor4 x = toy_input(seed + 200);
        const Matrix2 y = flatten_samples(x);
        const SharedInit init = shared_init(kToy, 12, 16, seed);
        double loss_c = 0.0, loss_f = 0.0;
        const CnnGradients gc = cnn_gradients(init.cnn, x, y, &loss_c);
        const LoweredMatrix lm = lower(x, kToy);
        const FcGradients gf = fc_gradients(init.fc, lowered_view3(lm), y, &loss_f);
        EXPECT_NEAR(loss_c, loss_f, 1e-14);
        EXPECT_LE(max_abs_diff(bank_to_dense(gc.filters).w.data(), gf.dense1.data()), 1e-13);
        EXPECT_LE(max_abs_diff(gc.head.data(), gf.head.data()), 1e-13);
    }
}

TEST(Histogram, CountsAndEdges) {
    const std::vector<double> a{0.0, 0.1, 0.5, 1.0}, b{0.9};
    const auto edges = shared_edges(a, b, 2);
    ASSERT_EQ(edges.size(), 3u);
    EXPECT_EQ(edges.front(), 0.0);
    EXPECT_EQ(edges.back(), 1.0);
    EXPECT_EQ(histogram_counts(a, edges), (std::vector<std::size_t>{2, 2}));
    const std::vector<double> outside{-5.0, 5.0};
    EXPECT_EQ(histogram_counts(outside, edges), (std::vector<std::size_t>{1, 1}));
}

TEST(EquivalenceMetrics, IdenticalInputsGiveZero) {
    std::mt19937_64 rng(4);
    const Matrix2 v(5, 12, oracle::uniform(60, rng));
    const FilterBank bank(3, 2, 2, 1, oracle::uniform(12, rng));
    const EquivalenceMetrics m = equivalence_metrics(v, v, bank, bank_to_dense(bank), 5, 10);
    EXPECT_EQ(m.act_fnorm_over_n, 0.0);
    EXPECT_EQ(m.weight_fnorm, 0.0);
    EXPECT_EQ(m.cnn_counts, m.fc_counts);
    EXPECT_EQ(m.edges.size(), 11u);
}

TEST(EquivalenceMetrics, ActivationDifferenceIsScaledByN) {
    const Matrix2 v(2, 2, {3, 0, 0, 0});
    const Matrix2 u(2, 2, {0, 0, 0, 4});
    const FilterBank bank(1, 1, 1, 1, {1});
    const EquivalenceMetrics m = equivalence_metrics(v, u, bank, bank_to_dense(bank), 2);
    EXPECT_DOUBLE_EQ(m.act_fnorm_over_n, 2.5);
}

TEST(Experiment, ZeroEpochsLeavesPathsIdentical) {
    std::mt19937_64 rng(1);
    const Shape4 s{8, 6, 6, 1};
    const ExperimentData data{Tensor4(s, oracle::uniform(s.size(), rng, 0, 1)),
                              Tensor4(s, oracle::uniform(s.size(), rng, 0, 1)),
                              Tensor4(s, oracle::uniform(s.size(), rng, 0, 1))};
    TrainConfig cfg;
    cfg.epochs = 0;
    const ConvGeometry g{2, 2, 1, 4, 2, 0, StridePolicy::Strict};
    const ExperimentResult r = train_equivalence_experiment(data, g, cfg);
    EXPECT_EQ(r.metrics.weight_fnorm, 0.0);
    EXPECT_EQ(r.metrics.cnn_counts, r.metrics.fc_counts);
    EXPECT_TRUE(r.cnn.train_loss.empty());
}

TEST(Experiment, ShortRunKeepsPathsInLockstep) {
    std::mt19937_64 rng(2);
    const Shape4 s{20, 8, 8, 1};
    const ExperimentData data{Tensor4(s, oracle::uniform(s.size(), rng, 0, 1)),
                              Tensor4(s, oracle::uniform(s.size(), rng, 0, 1)),
                              Tensor4(s, oracle::uniform(s.size(), rng, 0, 1))};
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 6;
    const ConvGeometry g{4, 4, 1, 3, 2, 0, StridePolicy::Strict};
    const ExperimentResult r = train_equivalence_experiment(data, g, cfg);
    ASSERT_EQ(r.cnn.train_loss.size(), 5u);
    ASSERT_EQ(r.fc.val_loss.size(), 5u);
    for (std::size_t e = 0; e < 5; ++e) {
        EXPECT_NEAR(r.cnn.train_loss[e], r.fc.train_loss[e], 1e-12 * r.cnn.train_loss[e]);
        EXPECT_NEAR(r.cnn.val_loss[e], r.fc.val_loss[e], 1e-12 * r.cnn.val_loss[e]);
    }
    EXPECT_LT(r.cnn.train_loss.back(), r.cnn.train_loss.front());
    EXPECT_LE(r.metrics.weight_fnorm, 1e-12);
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.lr = -1.0;
    EXPECT_THROW(cfg.validate(), Error);
    EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::Adam);
    EXPECT_THROW(parse_optimizer("rmsprop"), Error);
}
