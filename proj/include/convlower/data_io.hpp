#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "convlower/geometry.hpp"
#include "convlower/linear_nn.hpp"
#include "convlower/tensor.hpp"

namespace convlower {

/// Magic number of an IDX file holding unsigned-byte images with three axes.
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

/// Parses an IDX image file: big-endian magic and (n, rows, cols) counts, then
/// n*rows*cols pixel bytes row-major. Pixels are scaled by 1/255 into an
/// (n, rows, cols, 1) tensor.
Tensor4 load_idx_images(std::istream& in);
Tensor4 load_idx_images(const std::string& path);

/// Writes raw pixel bytes in IDX image layout. `pixels` holds n*rows*cols values.
void write_idx_images(std::ostream& out, std::size_t n, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_images(const std::string& path, std::size_t n, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);

/// `n` distinct sample indices drawn from [0, population), deterministic in `seed`.
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, std::uint64_t seed);

/// Picks `n` distinct samples of `t` (partial Fisher-Yates).
Tensor4 sample_without_replacement(const Tensor4& t, std::size_t n, std::uint64_t seed);

/// Uniform [0, 1) images of shape (n, h, w, 1).
Tensor4 synthetic_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed);

struct DatasetSpec {
    /// Directory containing train-images-idx3-ubyte, or empty for synthetic data.
    std::optional<std::string> idx_dir;
    std::size_t n_train = 1000;
    std::size_t n_val = 1000;
    std::size_t n_probe = 1000;
    std::size_t synthetic_h = 28;
    std::size_t synthetic_w = 28;
    std::uint64_t seed = 42;

    /// Parses "synthetic", "mnist:<dir>" or "mnist" (directory from CONVLOWER_DATA_DIR).
    static DatasetSpec parse(const std::string& source);
    std::string describe() const;
};

/// Disjoint train / validation / probe splits drawn without replacement.
ExperimentData load_experiment_data(const DatasetSpec& spec);

/// Full report as JSON: config, per-path loss arrays, equivalence metrics.
nlohmann::json report_to_json(const ExperimentResult& r, const ConvGeometry& geom,
                              const TrainConfig& config, const DatasetSpec& data);

/// Loss curves as CSV with header epoch,cnn_train,fc_train,cnn_val,fc_val.
void write_loss_csv(std::ostream& out, const ExperimentResult& r);

}  // namespace convlower
