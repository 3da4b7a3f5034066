#include "convlower/linear_nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "convlower/engines.hpp"
#include "convlower/error.hpp"

namespace convlower {

LinearLayer bank_to_dense(const FilterBank& bank) { return {stretch_filters(bank).weights}; }

FilterBank dense_to_bank(const LinearLayer& dense, const ConvGeometry& geom) {
    if (dense.out_dim() != geom.f) {
        throw ShapeError("dense layer has " + std::to_string(dense.out_dim()) +
                         " outputs but geometry has " + std::to_string(geom.f) + " filters");
    }
    return unstretch_filters(dense.w, geom.kh, geom.kw, geom.c_in);
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("learning rate must be positive");
    if (batch_size == 0) throw Error("batch size must be >= 1");
    if (hist_bins == 0) throw Error("histogram needs at least one bin");
    if (optimizer == OptimizerKind::Adam) {
        if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
            throw Error("adam betas must lie in [0, 1)");
        }
        if (!(adam.eps > 0.0)) throw Error("adam epsilon must be positive");
    }
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    throw Error("unknown optimizer '" + name + "'");
}

std::vector<double> he_init(std::size_t count, std::size_t fan_in, std::mt19937_64& rng) {
    if (fan_in == 0) throw Error("he_init: fan_in must be >= 1");
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<double> w(count);
    for (double& v : w) v = dist(rng);
    return w;
}

SharedInit shared_init(const ConvGeometry& geom, std::size_t head_in, std::size_t head_out,
                       std::uint64_t seed) {
    geom.validate();
    std::mt19937_64 rng(seed);
    const std::size_t patch = geom.patch_size();
    Matrix2 first(patch, geom.f, he_init(patch * geom.f, patch, rng));
    Matrix2 head(head_in, head_out, he_init(head_in * head_out, head_in, rng));

    LinearLayer dense1{first};
    FilterBank bank = dense_to_bank(dense1, geom);
    return {CnnModel{ConvLayer{std::move(bank), geom}, LinearLayer{head}},
            FcModel{std::move(dense1), LinearLayer{std::move(head)}, geom}};
}

namespace {

void require_same_shape(const Matrix2& a, const Matrix2& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
}

Matrix2 apply_head(const Matrix2& hidden, const LinearLayer& head) {
    if (hidden.cols() != head.in_dim()) {
        throw ShapeError("head expects " + std::to_string(head.in_dim()) + " inputs, got " +
                         std::to_string(hidden.cols()));
    }
    return gemm(hidden, head.w);
}

void require_finite(const std::string& layer, std::span<const double> grad) {
    for (double g : grad) {
        if (!std::isfinite(g)) throw NumericError(layer, "non-finite gradient");
    }
}

}  // namespace

ForwardResult forward_cnn(const Tensor4& x, const ConvLayer& conv, const LinearLayer& head) {
    const Tensor4 v = conv_direct(x, conv.bank, conv.geom);
    const Shape4& s = v.shape();
    Matrix2 hidden(s.b, s.h * s.w * s.c, std::vector<double>(v.data().begin(), v.data().end()));
    Matrix2 y_hat = apply_head(hidden, head);
    return {std::move(hidden), std::move(y_hat)};
}

ForwardResult forward_fc(const Tensor3View& lowered, const LinearLayer& dense1,
                         const LinearLayer& head) {
    if (lowered.cols() != dense1.in_dim()) {
        throw ShapeError("dense1 expects " + std::to_string(dense1.in_dim()) +
                         " inputs per patch, lowered matrix has " + std::to_string(lowered.cols()));
    }
    const std::size_t positions = lowered.rows();
    const std::size_t f = dense1.out_dim();
    Matrix2 hidden(lowered.outer(), positions * f);
    for (std::size_t l = 0; l < lowered.outer(); ++l) {
        // U_l = M'[l] * W1, written straight into sample l's row.
        gemm_accumulate(lowered.block(l), dense1.w.data(), hidden.row(l), positions, f,
                        lowered.cols());
    }
    Matrix2 y_hat = apply_head(hidden, head);
    return {std::move(hidden), std::move(y_hat)};
}

double mse(const Matrix2& y_hat, const Matrix2& y) {
    require_same_shape(y_hat, y, "mse shape mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double r = y_hat.data()[k] - y.data()[k];
        acc += r * r;
    }
    return acc / static_cast<double>(y.size());
}

Matrix2 mse_grad(const Matrix2& y_hat, const Matrix2& y) {
    require_same_shape(y_hat, y, "mse shape mismatch");
    Matrix2 g(y.rows(), y.cols());
    const double scale = 2.0 / static_cast<double>(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) g.data()[k] = scale * (y_hat.data()[k] - y.data()[k]);
    return g;
}

Matrix2 flatten_samples(const Tensor4& x) {
    const Shape4& s = x.shape();
    return Matrix2(s.b, s.h * s.w * s.c, std::vector<double>(x.data().begin(), x.data().end()));
}

CnnGradients cnn_gradients(const CnnModel& model, const Tensor4& x, const Matrix2& y,
                           double* loss) {
    const ConvGeometry& g = model.conv.geom;
    const ForwardResult fwd = forward_cnn(x, model.conv, model.head);
    if (loss) *loss = mse(fwd.y_hat, y);
    const Matrix2 dy = mse_grad(fwd.y_hat, y);
    Matrix2 d_head = gemm(transpose(fwd.hidden), dy);
    const Matrix2 dv = gemm(dy, transpose(model.head.w));

    const Tensor4 xp = pad_zeros(x, g.pad);
    const OutputShape os = output_shape(g, x.shape().h, x.shape().w);
    FilterBank d_filters(g.f, g.kh, g.kw, g.c_in);
    for (std::size_t fi = 0; fi < g.f; ++fi)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj)
                for (std::size_t d = 0; d < g.c_in; ++d) {
                    double acc = 0.0;
                    for (std::size_t l = 0; l < x.shape().b; ++l)
                        for (std::size_t r = 0; r < os.h_out; ++r)
                            for (std::size_t c = 0; c < os.w_out; ++c)
                                acc += xp(l, r * g.stride + ki, c * g.stride + kj, d) *
                                       dv(l, (r * os.w_out + c) * g.f + fi);
                    d_filters(fi, ki, kj, d) = acc;
                }
    return {std::move(d_filters), std::move(d_head)};
}

FcGradients fc_gradients(const FcModel& model, const Tensor3View& lowered, const Matrix2& y,
                         double* loss) {
    const ForwardResult fwd = forward_fc(lowered, model.dense1, model.head);
    if (loss) *loss = mse(fwd.y_hat, y);
    const Matrix2 dy = mse_grad(fwd.y_hat, y);
    Matrix2 d_head = gemm(transpose(fwd.hidden), dy);
    const Matrix2 du = gemm(dy, transpose(model.head.w));

    // dW1 = sum_l M'[l]^T dU_l, blocks in sample order.
    const std::size_t positions = lowered.rows();
    const std::size_t f = model.dense1.out_dim();
    Matrix2 d_dense1(lowered.cols(), f);
    for (std::size_t l = 0; l < lowered.outer(); ++l) {
        const auto block = lowered.block(l);
        const Matrix2 block_t =
            transpose(Matrix2(positions, lowered.cols(), std::vector<double>(block.begin(), block.end())));
        gemm_accumulate(block_t.data(), du.row(l), d_dense1.data(), lowered.cols(), f, positions);
    }
    return {std::move(d_dense1), std::move(d_head)};
}

Optimizer::Optimizer(const TrainConfig& config) : config_(config) { config_.validate(); }

Optimizer::Slot& Optimizer::slot_for(const std::string& layer, std::size_t size) {
    for (auto& [name, slot] : slots_) {
        if (name == layer) return slot;
    }
    slots_.emplace_back(layer, Slot{std::vector<double>(size, 0.0), std::vector<double>(size, 0.0), 0});
    return slots_.back().second;
}

void Optimizer::step(const std::string& layer, std::span<double> weights,
                     std::span<const double> grad) {
    if (weights.size() != grad.size()) {
        throw ShapeError("gradient size does not match weights in layer '" + layer + "'");
    }
    require_finite(layer, grad);
    const double lr = config_.lr;
    if (config_.optimizer == OptimizerKind::Sgd) {
        for (std::size_t k = 0; k < weights.size(); ++k) weights[k] -= lr * grad[k];
        return;
    }
    Slot& s = slot_for(layer, weights.size());
    if (s.m.size() != weights.size()) throw ShapeError("optimizer slot '" + layer + "' changed size");
    const AdamParams& a = config_.adam;
    ++s.t;
    const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(s.t));
    for (std::size_t k = 0; k < weights.size(); ++k) {
        s.m[k] = a.beta1 * s.m[k] + (1.0 - a.beta1) * grad[k];
        s.v[k] = a.beta2 * s.v[k] + (1.0 - a.beta2) * grad[k] * grad[k];
        const double m_hat = s.m[k] / c1;
        const double v_hat = s.v[k] / c2;
        weights[k] -= lr * m_hat / (std::sqrt(v_hat) + a.eps);
    }
}

double backward_and_step(CnnModel& model, const Tensor4& x, const Matrix2& y, Optimizer& opt) {
    double loss = 0.0;
    const CnnGradients g = cnn_gradients(model, x, y, &loss);
    opt.step("conv", model.conv.bank.data(), g.filters.data());
    opt.step("head", model.head.w.data(), g.head.data());
    return loss;
}

double backward_and_step(FcModel& model, const Tensor3View& lowered, const Matrix2& y,
                         Optimizer& opt) {
    double loss = 0.0;
    const FcGradients g = fc_gradients(model, lowered, y, &loss);
    opt.step("dense1", model.dense1.w.data(), g.dense1.data());
    opt.step("head", model.head.w.data(), g.head.data());
    return loss;
}

std::vector<double> shared_edges(std::span<const double> a, std::span<const double> b,
                                 std::size_t bins) {
    if (bins == 0) throw Error("histogram needs at least one bin");
    double lo = INFINITY;
    double hi = -INFINITY;
    for (auto values : {a, b})
        for (double v : values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        lo = 0.0;
        hi = 0.0;
    }
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    std::vector<double> edges(bins + 1);
    for (std::size_t k = 0; k <= bins; ++k) {
        edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
    }
    edges.back() = hi;
    return edges;
}

std::vector<std::size_t> histogram_counts(std::span<const double> values,
                                          std::span<const double> edges) {
    if (edges.size() < 2) throw Error("histogram needs at least two edges");
    const std::size_t bins = edges.size() - 1;
    std::vector<std::size_t> counts(bins, 0);
    for (double v : values) {
        // Bin k holds [edges[k], edges[k+1]); the last bin is closed.
        auto it = std::upper_bound(edges.begin(), edges.end(), v);
        std::size_t k = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
        counts[std::min(k, bins - 1)] += 1;
    }
    return counts;
}

EquivalenceMetrics equivalence_metrics(const Matrix2& v, const Matrix2& u, const FilterBank& w_cnn,
                                       const LinearLayer& w_fc, std::size_t n, std::size_t bins) {
    require_same_shape(v, u, "activation shapes differ");
    if (n == 0) throw Error("equivalence_metrics: sample count must be >= 1");
    const ConvGeometry geom{w_cnn.kh(), w_cnn.kw(), w_cnn.c_in(), w_cnn.count(), 1, 0,
                            StridePolicy::Strict};
    const FilterBank fc_as_bank = dense_to_bank(w_fc, geom);

    std::vector<double> act_diff(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) act_diff[k] = v.data()[k] - u.data()[k];
    std::vector<double> w_diff(w_cnn.data().size());
    for (std::size_t k = 0; k < w_diff.size(); ++k) w_diff[k] = w_cnn.data()[k] - fc_as_bank.data()[k];

    EquivalenceMetrics m;
    m.n = n;
    m.act_fnorm_over_n = frobenius_norm(act_diff) / static_cast<double>(n);
    m.weight_fnorm = frobenius_norm(w_diff);
    m.edges = shared_edges(w_cnn.data(), w_fc.w.data(), bins);
    m.cnn_counts = histogram_counts(w_cnn.data(), m.edges);
    m.fc_counts = histogram_counts(w_fc.w.data(), m.edges);
    return m;
}

namespace {

Tensor4 gather_samples(const Tensor4& x, std::span<const std::size_t> idx) {
    const Shape4& s = x.shape();
    const std::size_t per = s.h * s.w * s.c;
    std::vector<double> data;
    data.reserve(idx.size() * per);
    for (std::size_t k : idx) {
        auto first = x.data().begin() + k * per;
        data.insert(data.end(), first, first + per);
    }
    return Tensor4({idx.size(), s.h, s.w, s.c}, std::move(data));
}

Matrix2 gather_blocks(const Matrix2& m, std::size_t rows_per_sample,
                      std::span<const std::size_t> idx) {
    const std::size_t per = rows_per_sample * m.cols();
    std::vector<double> data;
    data.reserve(idx.size() * per);
    for (std::size_t k : idx) {
        auto first = m.data().begin() + k * per;
        data.insert(data.end(), first, first + per);
    }
    return Matrix2(idx.size() * rows_per_sample, m.cols(), std::move(data));
}

}  // namespace

ExperimentResult train_equivalence_experiment(const ExperimentData& data, const ConvGeometry& geom,
                                              const TrainConfig& config) {
    config.validate();
    geom.validate();
    const Shape4 in = data.train.shape();
    for (const Tensor4* t : {&data.val, &data.probe}) {
        if (t->shape().h != in.h || t->shape().w != in.w || t->shape().c != in.c) {
            throw ShapeError("train, validation and probe images must share (h, w, c)");
        }
    }
    const OutputShape os = output_shape(geom, in.h, in.w);
    const std::size_t head_in = os.positions() * geom.f;
    const std::size_t head_out = in.h * in.w * in.c;

    SharedInit init = shared_init(geom, head_in, head_out, config.seed);
    CnnModel cnn = std::move(init.cnn);
    FcModel fc = std::move(init.fc);

    // The dense path only ever sees lowered inputs.
    const LoweredMatrix train_m = lower(data.train, geom);
    const LoweredMatrix val_m = lower(data.val, geom);
    const Matrix2 train_y = flatten_samples(data.train);
    const Matrix2 val_y = flatten_samples(data.val);
    const std::size_t positions = os.positions();

    Optimizer cnn_opt(config);
    Optimizer fc_opt(config);
    ExperimentResult result{{}, {}, {}, cnn, fc};

    std::mt19937_64 shuffle_rng(config.seed + 1);
    std::vector<std::size_t> order(in.b);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double cnn_sum = 0.0;
        double fc_sum = 0.0;
        for (std::size_t begin = 0; begin < in.b; begin += config.batch_size) {
            const std::size_t end = std::min(in.b, begin + config.batch_size);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            const Matrix2 y = gather_blocks(train_y, 1, idx);

            const Tensor4 xb = gather_samples(data.train, idx);
            cnn_sum += backward_and_step(cnn, xb, y, cnn_opt) * static_cast<double>(idx.size());

            const Matrix2 mb = gather_blocks(train_m.m, positions, idx);
            fc_sum += backward_and_step(fc, Tensor3View(mb, idx.size()), y, fc_opt) *
                      static_cast<double>(idx.size());
        }
        result.cnn.train_loss.push_back(cnn_sum / static_cast<double>(in.b));
        result.fc.train_loss.push_back(fc_sum / static_cast<double>(in.b));
        result.cnn.val_loss.push_back(mse(forward_cnn(data.val, cnn.conv, cnn.head).y_hat, val_y));
        result.fc.val_loss.push_back(
            mse(forward_fc(lowered_view3(val_m), fc.dense1, fc.head).y_hat, val_y));
    }

    const LoweredMatrix probe_m = lower(data.probe, geom);
    const Matrix2 v = forward_cnn(data.probe, cnn.conv, cnn.head).hidden;
    const Matrix2 u = forward_fc(lowered_view3(probe_m), fc.dense1, fc.head).hidden;
    result.metrics =
        equivalence_metrics(v, u, cnn.conv.bank, fc.dense1, data.probe.shape().b, config.hist_bins);
    result.cnn.weights = {result.metrics.edges, result.metrics.cnn_counts};
    result.fc.weights = {result.metrics.edges, result.metrics.fc_counts};
    result.cnn_model = std::move(cnn);
    result.fc_model = std::move(fc);
    return result;
}

}  // namespace convlower
