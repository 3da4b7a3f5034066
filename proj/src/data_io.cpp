#include "convlower/data_io.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "convlower/error.hpp"

namespace convlower {

namespace {

std::uint32_t read_be32(std::istream& in, const char* field) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError(FormatError::Kind::Truncated,
                          std::string("idx: truncated header reading ") + field);
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                       static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b, 4);
}

}  // namespace

Tensor4 load_idx_images(std::istream& in) {
    const std::uint32_t magic = read_be32(in, "magic");
    if (magic != kIdxImageMagic) {
        std::ostringstream msg;
        msg << "idx: unexpected magic 0x" << std::hex << std::setw(8) << std::setfill('0') << magic
            << " (expected 0x00000803)";
        throw FormatError(FormatError::Kind::BadMagic, msg.str());
    }
    const std::uint64_t n = read_be32(in, "count");
    const std::uint64_t rows = read_be32(in, "rows");
    const std::uint64_t cols = read_be32(in, "cols");
    if (n == 0 || rows == 0 || cols == 0) {
        throw FormatError(FormatError::Kind::BadHeader, "idx: zero-sized dimension");
    }
    // Each count fits in 32 bits, so n*rows fits in 64; guard the third factor.
    const std::uint64_t plane = rows * cols;
    if (n > (std::uint64_t{1} << 40) / plane) {
        throw FormatError(FormatError::Kind::Overflow, "idx: declared size overflows");
    }
    const std::size_t total = static_cast<std::size_t>(n * plane);
    std::vector<unsigned char> bytes(total);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total));
    if (static_cast<std::size_t>(in.gcount()) != total) {
        throw FormatError(FormatError::Kind::Truncated,
                          "idx: payload truncated (" + std::to_string(in.gcount()) + " of " +
                              std::to_string(total) + " bytes)");
    }
    std::vector<double> data(total);
    for (std::size_t k = 0; k < total; ++k) data[k] = static_cast<double>(bytes[k]) / 255.0;
    return Tensor4({static_cast<std::size_t>(n), static_cast<std::size_t>(rows),
                    static_cast<std::size_t>(cols), 1},
                   std::move(data));
}

Tensor4 load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::Io, "cannot open '" + path + "'");
    return load_idx_images(in);
}

void write_idx_images(std::ostream& out, std::size_t n, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
    if (pixels.size() != n * rows * cols) throw ShapeError("idx: pixel count does not match dims");
    write_be32(out, kIdxImageMagic);
    write_be32(out, static_cast<std::uint32_t>(n));
    write_be32(out, static_cast<std::uint32_t>(rows));
    write_be32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw FormatError(FormatError::Kind::Io, "idx: write failed");
}

void write_idx_images(const std::string& path, std::size_t n, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(FormatError::Kind::Io, "cannot open '" + path + "' for writing");
    write_idx_images(out, n, rows, cols, pixels);
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, std::uint64_t seed) {
    if (n > population) {
        throw Error("cannot sample " + std::to_string(n) + " of " + std::to_string(population) +
                    " without replacement");
    }
    std::vector<std::size_t> idx(population);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, population - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(n);
    return idx;
}

Tensor4 sample_without_replacement(const Tensor4& t, std::size_t n, std::uint64_t seed) {
    const Shape4& s = t.shape();
    const auto idx = sample_indices(s.b, n, seed);
    const std::size_t per = s.h * s.w * s.c;
    std::vector<double> data;
    data.reserve(n * per);
    for (std::size_t k : idx) {
        auto first = t.data().begin() + k * per;
        data.insert(data.end(), first, first + per);
    }
    return Tensor4({n, s.h, s.w, s.c}, std::move(data));
}

Tensor4 synthetic_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor4 t({n, h, w, 1});
    for (double& v : t.data()) v = unit(rng);
    return t;
}

DatasetSpec DatasetSpec::parse(const std::string& source) {
    DatasetSpec spec;
    if (source == "synthetic") return spec;
    if (source == "mnist") {
        const char* env = std::getenv("CONVLOWER_DATA_DIR");
        if (!env || !*env) throw Error("--data mnist needs CONVLOWER_DATA_DIR or mnist:<dir>");
        spec.idx_dir = env;
        return spec;
    }
    if (source.rfind("mnist:", 0) == 0 && source.size() > 6) {
        spec.idx_dir = source.substr(6);
        return spec;
    }
    throw Error("unknown data source '" + source + "' (expected synthetic, mnist or mnist:<dir>)");
}

std::string DatasetSpec::describe() const {
    return idx_dir ? "mnist:" + *idx_dir : std::string("synthetic");
}

ExperimentData load_experiment_data(const DatasetSpec& spec) {
    const std::size_t total = spec.n_train + spec.n_val + spec.n_probe;
    if (spec.n_train == 0 || spec.n_val == 0 || spec.n_probe == 0) {
        throw Error("dataset split sizes must be >= 1");
    }
    Tensor4 pool = spec.idx_dir ? load_idx_images(*spec.idx_dir + "/train-images-idx3-ubyte")
                                : synthetic_images(total, spec.synthetic_h, spec.synthetic_w, spec.seed);
    const Tensor4 picked = sample_without_replacement(pool, total, spec.seed);
    const Shape4 s = picked.shape();
    const std::size_t per = s.h * s.w * s.c;
    auto slice = [&](std::size_t begin, std::size_t count) {
        auto first = picked.data().begin() + begin * per;
        return Tensor4({count, s.h, s.w, s.c}, std::vector<double>(first, first + count * per));
    };
    return {slice(0, spec.n_train), slice(spec.n_train, spec.n_val),
            slice(spec.n_train + spec.n_val, spec.n_probe)};
}

nlohmann::json report_to_json(const ExperimentResult& r, const ConvGeometry& geom,
                              const TrainConfig& config, const DatasetSpec& data) {
    using nlohmann::json;
    json cfg = {
        {"data", data.describe()},
        {"n_train", data.n_train},
        {"n_val", data.n_val},
        {"n_probe", data.n_probe},
        {"kh", geom.kh},
        {"kw", geom.kw},
        {"stride", geom.stride},
        {"pad", geom.pad},
        {"filters", geom.f},
        {"lr", config.lr},
        {"batch", config.batch_size},
        {"epochs", config.epochs},
        {"optimizer", to_string(config.optimizer)},
        {"seed", config.seed},
        {"hist_bins", config.hist_bins},
        {"mse_reduction", "mean_all_elements"},
        {"pixel_scale", "byte/255"},
        {"dtype", "f64"},
    };
    if (config.optimizer == OptimizerKind::Adam) {
        cfg["adam"] = {{"beta1", config.adam.beta1}, {"beta2", config.adam.beta2}, {"eps", config.adam.eps}};
    }
    const auto& m = r.metrics;
    return {
        {"config", cfg},
        {"cnn", {{"train_loss", r.cnn.train_loss}, {"val_loss", r.cnn.val_loss}}},
        {"fc", {{"train_loss", r.fc.train_loss}, {"val_loss", r.fc.val_loss}}},
        {"metrics",
         {{"n", m.n},
          {"act_fnorm_over_n", m.act_fnorm_over_n},
          {"weight_fnorm", m.weight_fnorm},
          {"hist", {{"edges", m.edges}, {"cnn_counts", m.cnn_counts}, {"fc_counts", m.fc_counts}}}}},
    };
}

void write_loss_csv(std::ostream& out, const ExperimentResult& r) {
    out << "epoch,cnn_train,fc_train,cnn_val,fc_val\n";
    const auto old = out.precision(17);
    for (std::size_t e = 0; e < r.cnn.train_loss.size(); ++e) {
        out << e + 1 << ',' << r.cnn.train_loss[e] << ',' << r.fc.train_loss[e] << ','
            << r.cnn.val_loss[e] << ',' << r.fc.val_loss[e] << '\n';
    }
    out.precision(old);
}

}  // namespace convlower
