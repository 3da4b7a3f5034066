// convlower: shape queries, lowering dumps, convolution runs, engine
// verification, benchmarks and the CONV/FC equivalence experiment.
//
// Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "convlower/data_io.hpp"
#include "convlower/engines.hpp"
#include "convlower/error.hpp"
#include "convlower/geometry.hpp"
#include "convlower/harness.hpp"
#include "convlower/linear_nn.hpp"
#include "convlower/lowering.hpp"
#include "convlower/tensor.hpp"

namespace cl = convlower;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct GeometryFlags {
    std::size_t kh = 4;
    std::size_t kw = 4;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::string padding = "explicit";
    bool allow_truncate = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--kh", kh, "Kernel rows")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--kw", kw, "Kernel cols")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--stride", stride, "Stride along both axes")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--pad", pad, "Zero padding per side (used with --padding explicit)")
            ->capture_default_str();
        cmd->add_option("--padding", padding, "Padding mode: explicit, valid, half or full")
            ->capture_default_str()
            ->check(CLI::IsMember({"explicit", "valid", "half", "full"}));
        cmd->add_flag("--allow-truncate", allow_truncate,
                      "Floor-divide when the stride does not divide the swept span (default: reject)");
    }

    cl::ConvGeometry geometry(std::size_t c_in, std::size_t f) const {
        cl::ConvGeometry g;
        g.kh = kh;
        g.kw = kw;
        g.c_in = c_in;
        g.f = f;
        g.stride = stride;
        g.pad = cl::padding_for(cl::parse_padding_mode(padding), kh, kw, pad);
        g.policy = allow_truncate ? cl::StridePolicy::Truncate : cl::StridePolicy::Strict;
        return g;
    }
};

/// Reads either an IDX image file or a rank-4 tensor dump.
cl::Tensor4 read_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw cl::FormatError(cl::FormatError::Kind::Io, "cannot open '" + path + "'");
    unsigned char head[4] = {0, 0, 0, 0};
    in.read(reinterpret_cast<char*>(head), 4);
    in.clear();
    in.seekg(0);
    if (head[0] == 0 && head[1] == 0 && head[2] == 0x08 && head[3] == 0x03) {
        return cl::load_idx_images(in);
    }
    return cl::dump_to_tensor4(cl::read_dump(in));
}

cl::Tensor4 limit_batch(const cl::Tensor4& t, std::size_t limit) {
    if (limit == 0 || limit >= t.shape().b) return t;
    const cl::Shape4 s = t.shape();
    const std::size_t per = s.h * s.w * s.c;
    return cl::Tensor4({limit, s.h, s.w, s.c},
                       std::vector<double>(t.data().begin(), t.data().begin() + limit * per));
}

cl::FilterBank read_bank(const std::string& path) {
    const cl::Dump d = cl::read_dump(path);
    if (d.shape.size() != 4 || (!d.order.empty() && d.order != "fhwc")) {
        throw cl::FormatError(cl::FormatError::Kind::BadHeader,
                              "filter dump must be rank-4 with order fhwc");
    }
    return cl::FilterBank(d.shape[0], d.shape[1], d.shape[2], d.shape[3], d.data);
}

std::vector<std::size_t> parse_case_list(const std::string& text) {
    std::vector<std::size_t> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) values.push_back(std::stoul(item));
    return values;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convolution lowering (im2col) toolkit"};
    app.require_subcommand(1);

    // shapes
    auto* shapes = app.add_subcommand("shapes", "Output shape and lowered-matrix sizes for a geometry");
    shapes->set_help_flag("--help", "Print this help message and exit");
    GeometryFlags shapes_geom;
    std::size_t sh_h = 28, sh_w = 28, sh_c = 1, sh_f = 1, sh_b = 1;
    shapes->add_option("--h", sh_h, "Input rows")->capture_default_str()->check(CLI::PositiveNumber);
    shapes->add_option("--w", sh_w, "Input cols")->capture_default_str()->check(CLI::PositiveNumber);
    shapes->add_option("--c-in", sh_c, "Input channels")->capture_default_str()->check(CLI::PositiveNumber);
    shapes->add_option("--filters", sh_f, "Filter count f")->capture_default_str()->check(CLI::PositiveNumber);
    shapes->add_option("--batch", sh_b, "Batch size b")->capture_default_str()->check(CLI::PositiveNumber);
    shapes_geom.add_to(shapes);

    // lower
    auto* lower_cmd = app.add_subcommand("lower", "Lower an input to its patch matrix M");
    GeometryFlags lower_geom;
    std::string lower_input, lower_dump;
    std::size_t lower_limit = 0;
    unsigned lower_threads = 1;
    lower_cmd->add_option("--input", lower_input, "IDX image file or tensor dump")->required();
    lower_geom.add_to(lower_cmd);
    lower_cmd->add_option("--limit", lower_limit, "Use only the first N images (0 = all)")->capture_default_str();
    lower_cmd->add_option("--dump", lower_dump, "Write M as a tensor dump to this path (default: none)");
    lower_cmd->add_option("--threads", lower_threads, "Worker threads for im2col")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    // conv
    auto* conv_cmd = app.add_subcommand("conv", "Run one convolution engine");
    GeometryFlags conv_geom;
    std::string conv_engine = "direct", conv_input, conv_weights, conv_output;
    std::size_t conv_filters = 1;
    std::uint64_t conv_seed = 42;
    unsigned conv_threads = 1;
    conv_cmd->add_option("--engine", conv_engine, "direct, true2d, gemm or lazy")
        ->capture_default_str()
        ->check(CLI::IsMember({"direct", "true2d", "gemm", "lazy"}));
    conv_cmd->add_option("--input", conv_input, "IDX image file or tensor dump")->required();
    conv_cmd->add_option("--weights", conv_weights,
                         "Filter bank dump, shape (f,kh,kw,c_in) order fhwc (default: He-random)");
    conv_cmd->add_option("--filters", conv_filters, "Filter count when weights are random")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    conv_cmd->add_option("--seed", conv_seed, "Seed for random weights")->capture_default_str();
    conv_cmd->add_option("--output", conv_output, "Write the output tensor dump here (default: none)");
    conv_cmd->add_option("--threads", conv_threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    conv_geom.add_to(conv_cmd);

    // verify
    auto* verify_cmd = app.add_subcommand("verify", "Check im2col+GEMM and lazy engines against direct convolution");
    cl::VerifyOptions vopts;
    verify_cmd->add_option("--cases", vopts.cases, "Random cases")->capture_default_str()->check(CLI::PositiveNumber);
    verify_cmd->add_option("--seed", vopts.seed, "Seed; case k uses seed+k")->capture_default_str();
    verify_cmd->add_option("--tolerance", vopts.tolerance, "Max relative error")->capture_default_str();
    verify_cmd->add_flag("--inject-fault", vopts.inject_fault,
                         "Negative control: corrupt the GEMM engine output (must fail)");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Time every engine and report intermediate memory");
    std::size_t bench_reps = 5;
    unsigned bench_threads = 1;
    std::uint64_t bench_seed = 42;
    std::string bench_out = "-";
    std::vector<std::string> bench_cases;
    bench_cmd->add_option("--reps", bench_reps, "Timed repetitions after one warm-up")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--threads", bench_threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    bench_cmd->add_option("--seed", bench_seed, "Seed for inputs and filters")->capture_default_str();
    bench_cmd->add_option("--out", bench_out, "CSV destination, - for stdout")->capture_default_str();
    bench_cmd->add_option("--case", bench_cases,
                          "Geometry b,h,w,c_in,kh,kw,stride,pad,f (repeatable; default: 3 built-in cases)");

    // train-equiv
    auto* train_cmd = app.add_subcommand("train-equiv", "Train CONV-first and lowered FC-first networks side by side");
    std::string data_source = "synthetic", report_path = "report.json", csv_path, opt_name = "sgd";
    std::size_t n = 1000, n_val = 0, n_probe = 0, filters = 128, bins = 50;
    cl::TrainConfig tcfg;
    GeometryFlags train_geom;
    train_geom.stride = 2;
    train_cmd->add_option("--data", data_source,
                          "synthetic, mnist:<dir>, or mnist (directory from $CONVLOWER_DATA_DIR)")
        ->capture_default_str();
    train_cmd->add_option("--n", n, "Training images")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--n-val", n_val, "Validation images (0 = same as --n)")->capture_default_str();
    train_cmd->add_option("--n-probe", n_probe, "Held-out images for the V/U comparison (0 = same as --n)")
        ->capture_default_str();
    train_geom.add_to(train_cmd);
    train_cmd->add_option("--filters", filters, "Filter count f")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", tcfg.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--batch", tcfg.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", tcfg.epochs, "Epochs")->capture_default_str();
    train_cmd->add_option("--opt", opt_name, "sgd or adam")->capture_default_str()->check(CLI::IsMember({"sgd", "adam"}));
    train_cmd->add_option("--beta1", tcfg.adam.beta1, "Adam beta1")->capture_default_str();
    train_cmd->add_option("--beta2", tcfg.adam.beta2, "Adam beta2")->capture_default_str();
    train_cmd->add_option("--eps", tcfg.adam.eps, "Adam epsilon")->capture_default_str();
    train_cmd->add_option("--seed", tcfg.seed, "Seed for data sampling, init and batch order")->capture_default_str();
    train_cmd->add_option("--bins", bins, "Weight histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--out", report_path, "Report JSON path")->capture_default_str();
    train_cmd->add_option("--csv", csv_path, "Loss-curve CSV path (default: none)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (shapes->parsed()) {
            const cl::ConvGeometry g = shapes_geom.geometry(sh_c, sh_f);
            const cl::OutputShape os = cl::output_shape(g, sh_h, sh_w);
            json out = {{"h_out", os.h_out},
                        {"w_out", os.w_out},
                        {"c_out", os.c_out},
                        {"patches", os.positions()},
                        {"patch_dim", g.patch_size()},
                        {"pad", g.pad},
                        {"m_shape", {sh_b * os.positions(), g.patch_size()}},
                        {"m3_shape", {sh_b, os.positions(), g.patch_size()}}};
            std::cout << out.dump() << '\n';
            return kExitOk;
        }

        if (lower_cmd->parsed()) {
            const cl::Tensor4 x = limit_batch(read_input(lower_input), lower_limit);
            const cl::ConvGeometry g = lower_geom.geometry(x.shape().c, 1);
            const cl::LoweredMatrix lm = cl::lower(x, g, lower_threads);
            if (!lower_dump.empty()) cl::write_dump(lower_dump, lm.m);
            json out = {{"input_shape", {x.shape().b, x.shape().h, x.shape().w, x.shape().c}},
                        {"m_shape", {lm.m.rows(), lm.m.cols()}},
                        {"m3_shape", {lm.batch(), lm.out.positions(), lm.m.cols()}},
                        {"bytes", lm.m.size() * sizeof(double)}};
            std::cout << out.dump() << '\n';
            return kExitOk;
        }

        if (conv_cmd->parsed()) {
            const cl::Tensor4 x = read_input(conv_input);
            cl::FilterBank bank = [&] {
                if (!conv_weights.empty()) return read_bank(conv_weights);
                const cl::ConvGeometry g = conv_geom.geometry(x.shape().c, conv_filters);
                std::mt19937_64 rng(conv_seed);
                cl::LinearLayer dense{cl::Matrix2(g.patch_size(), g.f,
                                                  cl::he_init(g.patch_size() * g.f, g.patch_size(), rng))};
                return cl::dense_to_bank(dense, g);
            }();
            const cl::ConvGeometry g = conv_geom.geometry(x.shape().c, bank.count());
            const cl::Tensor4 y = cl::run_engine(cl::parse_engine(conv_engine), x, bank, g, conv_threads);
            if (!conv_output.empty()) cl::write_dump(conv_output, y);
            double sum = 0.0;
            for (double v : y.data()) sum += v;
            json out = {{"engine", conv_engine},
                        {"output_shape", {y.shape().b, y.shape().h, y.shape().w, y.shape().c}},
                        {"checksum", sum}};
            std::cout << out.dump() << '\n';
            return kExitOk;
        }

        if (verify_cmd->parsed()) {
            const cl::VerifyResult r = cl::run_verify(vopts);
            std::cout << r.to_json().dump() << '\n';
            return r.passed() ? kExitOk : kExitVerifyFailed;
        }

        if (bench_cmd->parsed()) {
            std::vector<cl::ConvCase> cases;
            for (const auto& text : bench_cases) {
                const auto v = parse_case_list(text);
                if (v.size() != 9) throw cl::Error("--case needs 9 values: b,h,w,c_in,kh,kw,stride,pad,f");
                cases.push_back({{v[0], v[1], v[2], v[3]},
                                 {v[4], v[5], v[3], v[8], v[6], v[7], cl::StridePolicy::Strict}});
            }
            if (cases.empty()) cases = cl::default_bench_cases();
            const cl::BenchReport r = cl::run_bench(cases, bench_reps, bench_threads, bench_seed);
            if (bench_out == "-") {
                r.write_csv(std::cout);
            } else {
                std::ofstream out(bench_out);
                if (!out) throw cl::FormatError(cl::FormatError::Kind::Io, "cannot open '" + bench_out + "'");
                r.write_csv(out);
            }
            const bool match = r.checksums_match();
            std::cerr << json{{"rows", r.rows.size()}, {"checksums_match", match}}.dump() << '\n';
            return match ? kExitOk : kExitVerifyFailed;
        }

        if (train_cmd->parsed()) {
            cl::DatasetSpec data = cl::DatasetSpec::parse(data_source);
            data.n_train = n;
            data.n_val = n_val == 0 ? n : n_val;
            data.n_probe = n_probe == 0 ? n : n_probe;
            data.seed = tcfg.seed;
            tcfg.optimizer = cl::parse_optimizer(opt_name);
            tcfg.hist_bins = bins;
            tcfg.validate();

            const cl::ExperimentData d = cl::load_experiment_data(data);
            const cl::ConvGeometry g = train_geom.geometry(d.train.shape().c, filters);
            const cl::ExperimentResult r = cl::train_equivalence_experiment(d, g, tcfg);

            const json report = cl::report_to_json(r, g, tcfg, data);
            std::ofstream out(report_path);
            if (!out) throw cl::FormatError(cl::FormatError::Kind::Io, "cannot open '" + report_path + "'");
            out << report.dump(2) << '\n';
            if (!csv_path.empty()) {
                std::ofstream csv(csv_path);
                if (!csv) throw cl::FormatError(cl::FormatError::Kind::Io, "cannot open '" + csv_path + "'");
                cl::write_loss_csv(csv, r);
            }
            std::cout << json{{"act_fnorm_over_n", r.metrics.act_fnorm_over_n},
                              {"weight_fnorm", r.metrics.weight_fnorm},
                              {"report", report_path}}
                             .dump()
                      << '\n';
            return kExitOk;
        }
    } catch (const cl::FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const cl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitUsage;
}
