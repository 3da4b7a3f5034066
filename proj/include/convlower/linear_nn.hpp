#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "convlower/geometry.hpp"
#include "convlower/lowering.hpp"
#include "convlower/tensor.hpp"

namespace convlower {

/// Bias-free dense layer. Forward is row-vector times weights: y = x * w,
/// with w stored (in_dim x out_dim).
struct LinearLayer {
    Matrix2 w;

    std::size_t in_dim() const noexcept { return w.rows(); }
    std::size_t out_dim() const noexcept { return w.cols(); }
};

struct ConvLayer {
    FilterBank bank;
    ConvGeometry geom;
};

// Weight bijection between a filter bank (f, kh, kw, c_in) and a dense weight
// (kh*kw*c_in, f). Under it a conv layer and a dense layer over lowered
// patches compute the same linear map.
LinearLayer bank_to_dense(const FilterBank& bank);
FilterBank dense_to_bank(const LinearLayer& dense, const ConvGeometry& geom);

enum class OptimizerKind { Sgd, Adam };

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    double lr = 0.01;
    std::size_t batch_size = 128;
    std::size_t epochs = 400;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    AdamParams adam{};
    std::uint64_t seed = 42;
    std::size_t hist_bins = 50;

    void validate() const;
};

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);

/// `count` independent draws from Normal(0, 2 / fan_in).
std::vector<double> he_init(std::size_t count, std::size_t fan_in, std::mt19937_64& rng);

struct CnnModel {
    ConvLayer conv;
    LinearLayer head;
};

struct FcModel {
    LinearLayer dense1;
    LinearLayer head;
    ConvGeometry geom;
};

/// Both networks built from one seeded stream: first-layer weights are drawn in
/// the dense (ki, kj, d, f) row-major order, then the head. The conv bank is the
/// bijection image of the same draws.
struct SharedInit {
    CnnModel cnn;
    FcModel fc;
};

SharedInit shared_init(const ConvGeometry& geom, std::size_t head_in, std::size_t head_out,
                       std::uint64_t seed);

struct ForwardResult {
    Matrix2 hidden;  ///< first-layer output, one row per sample (V or U)
    Matrix2 y_hat;
};

/// Conv (direct engine) then head. `x` is unpadded; hidden rows are the
/// (h_out, w_out, f) feature maps flattened.
ForwardResult forward_cnn(const Tensor4& x, const ConvLayer& conv, const LinearLayer& head);

/// Dense layer applied to each sample's block of lowered patches, then head.
ForwardResult forward_fc(const Tensor3View& lowered, const LinearLayer& dense1,
                         const LinearLayer& head);

/// Mean over every element of (y_hat - y)^2.
double mse(const Matrix2& y_hat, const Matrix2& y);

/// d mse / d y_hat = 2 (y_hat - y) / element_count.
Matrix2 mse_grad(const Matrix2& y_hat, const Matrix2& y);

/// Rows of `x` flattened into a (b, h*w*c) matrix: identity-learning targets.
Matrix2 flatten_samples(const Tensor4& x);

struct CnnGradients {
    FilterBank filters;
    Matrix2 head;
};

struct FcGradients {
    Matrix2 dense1;
    Matrix2 head;
};

/// Analytic gradients of mse(forward(x), y). The conv filter gradient is the
/// sliding-window correlation of the padded input with dV, i.e. M^T dV.
CnnGradients cnn_gradients(const CnnModel& model, const Tensor4& x, const Matrix2& y,
                           double* loss = nullptr);
FcGradients fc_gradients(const FcModel& model, const Tensor3View& lowered, const Matrix2& y,
                         double* loss = nullptr);

/// Element-wise parameter update rule. Each parameter tensor gets its own slot
/// so Adam keeps separate moments and step counts.
class Optimizer {
public:
    explicit Optimizer(const TrainConfig& config);

    /// Throws NumericError naming `layer` if any gradient entry is not finite.
    void step(const std::string& layer, std::span<double> weights, std::span<const double> grad);

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
        std::uint64_t t = 0;
    };

    TrainConfig config_;
    std::vector<std::pair<std::string, Slot>> slots_;

    Slot& slot_for(const std::string& layer, std::size_t size);
};

/// One optimization step on a batch; returns the batch loss before the update.
double backward_and_step(CnnModel& model, const Tensor4& x, const Matrix2& y, Optimizer& opt);
double backward_and_step(FcModel& model, const Tensor3View& lowered, const Matrix2& y,
                         Optimizer& opt);

struct Histogram {
    std::vector<double> edges;         ///< bins + 1 ascending edges
    std::vector<std::size_t> counts;   ///< one per bin
};

struct TrainReport {
    std::vector<double> train_loss;  ///< per epoch, sample-weighted mean of batch losses
    std::vector<double> val_loss;    ///< per epoch, evaluated after the epoch's last step
    Histogram weights;               ///< first-layer weights, shared binning with the other path
};

struct EquivalenceMetrics {
    std::size_t n = 0;
    double act_fnorm_over_n = 0.0;  ///< ||V - U||_F / n
    double weight_fnorm = 0.0;      ///< ||flat(W_cnn) - flat(bijection^-1(W_fc))||_F
    std::vector<double> edges;
    std::vector<std::size_t> cnn_counts;
    std::vector<std::size_t> fc_counts;
};

/// Histogram of `values` over fixed edges; values outside fall into the end bins.
std::vector<std::size_t> histogram_counts(std::span<const double> values,
                                          std::span<const double> edges);

/// `bins` equal-width edges spanning the union of both value sets.
std::vector<double> shared_edges(std::span<const double> a, std::span<const double> b,
                                 std::size_t bins);

EquivalenceMetrics equivalence_metrics(const Matrix2& v, const Matrix2& u, const FilterBank& w_cnn,
                                       const LinearLayer& w_fc, std::size_t n,
                                       std::size_t bins = 50);

struct ExperimentData {
    Tensor4 train;
    Tensor4 val;
    Tensor4 probe;  ///< held-out images used for the V/U comparison
};

struct ExperimentResult {
    TrainReport cnn;
    TrainReport fc;
    EquivalenceMetrics metrics;
    CnnModel cnn_model;
    FcModel fc_model;
};

/// Trains the conv-first and the lowered dense-first network on the identity
/// task from a shared initialization and identical batch order, then compares
/// them. `geom.c_in` must match the data; the head maps to h*w*c of the input.
ExperimentResult train_equivalence_experiment(const ExperimentData& data, const ConvGeometry& geom,
                                              const TrainConfig& config);

}  // namespace convlower
