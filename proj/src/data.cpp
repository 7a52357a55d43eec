#include "bbh/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace bbh {

Dataset toy_regression(std::size_t n_points, double x_lo, double x_hi, double noise_std,
                       std::uint64_t seed) {
    if (n_points == 0) throw ContractError("toy_regression: need at least one point");
    if (!(x_lo < x_hi)) {
        throw ContractError(msg("toy_regression: empty range [", x_lo, ", ", x_hi, ")"));
    }
    Rng rng = make_rng(seed, 0xD47A);
    std::vector<double> xs(n_points), ys(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        xs[i] = uniform(rng, x_lo, x_hi);
        ys[i] = xs[i] * xs[i] * xs[i] + noise_std * gauss(rng);
    }
    Dataset d;
    d.inputs = Tensor({n_points, 1}, std::move(xs));
    d.targets = std::move(ys);
    d.split = "train";
    d.provenance = msg("toy cubic, n=", n_points, ", seed=", seed);
    return d;
}

// ---------------------------------------------------------------------------
// IDX format
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace

Tensor load_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(msg("cannot open '", path, "'"));
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 4) {
        throw FormatError(msg(path, ": truncated IDX header at byte offset ", bytes.size()));
    }
    if (bytes[0] != 0 || bytes[1] != 0) {
        throw FormatError(msg(path, ": bad IDX magic at byte offset 0"));
    }
    if (bytes[2] != 0x08) {
        throw FormatError(msg(path, ": unsupported IDX type code at byte offset 2 (want 0x08)"));
    }
    const std::size_t rank = bytes[3];
    const std::size_t header = 4 + 4 * rank;
    if (bytes.size() < header) {
        throw FormatError(msg(path, ": truncated IDX extents at byte offset ", bytes.size()));
    }
    Shape shape(rank);
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        shape[i] = read_be32(bytes.data() + 4 + 4 * i);
        total *= shape[i];
    }
    if (bytes.size() != header + total) {
        throw FormatError(msg(path, ": IDX payload has ", bytes.size() - header,
                              " bytes, header demands ", total, " (byte offset ", bytes.size(),
                              ")"));
    }
    std::vector<double> data(total);
    for (std::size_t i = 0; i < total; ++i) data[i] = double(bytes[header + i]);
    return Tensor(std::move(shape), std::move(data));
}

void write_idx(const std::string& path, const Tensor& t) {
    if (t.rank() > 255) throw ContractError("write_idx: rank exceeds IDX limit");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(msg("cannot write '", path, "'"));
    unsigned char header[4] = {0, 0, 0x08, static_cast<unsigned char>(t.rank())};
    out.write(reinterpret_cast<const char*>(header), 4);
    for (std::size_t e : t.shape()) {
        unsigned char be[4] = {static_cast<unsigned char>(e >> 24),
                               static_cast<unsigned char>(e >> 16),
                               static_cast<unsigned char>(e >> 8),
                               static_cast<unsigned char>(e)};
        out.write(reinterpret_cast<const char*>(be), 4);
    }
    std::vector<unsigned char> payload(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t.data()[i];
        if (v < 0.0 || v > 255.0 || v != std::floor(v)) {
            throw ContractError(msg("write_idx: value ", v, " is not a byte"));
        }
        payload[i] = static_cast<unsigned char>(v);
    }
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError(msg("short write to '", path, "'"));
}

Tensor normalize(const Tensor& images) {
    std::vector<double> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const double v = images.data()[i];
        if (v < 0.0 || v > 255.0) {
            throw ContractError(msg("normalize: value ", v, " outside [0, 255]"));
        }
        out[i] = v / 255.0;
    }
    return Tensor(images.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0) throw ContractError("batch_indices: batch size must be positive");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, 0xBA7C ^ (epoch * 0x9E3779B97F4A7C15ULL));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

Dataset take(const Dataset& data, const std::vector<std::size_t>& idx) {
    const std::size_t row = data.inputs.size() / data.size();
    Shape shape = data.inputs.shape();
    shape[0] = idx.size();
    std::vector<double> inputs(idx.size() * row);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= data.size()) {
            throw IndexError(msg("take: index ", idx[i], " out of range for ", data.size()));
        }
        std::copy_n(data.inputs.data().begin() + idx[i] * row, row, inputs.begin() + i * row);
    }
    Dataset out;
    out.inputs = Tensor(std::move(shape), std::move(inputs));
    if (!data.labels.empty()) {
        out.labels.reserve(idx.size());
        for (std::size_t i : idx) out.labels.push_back(data.labels[i]);
    }
    if (!data.targets.empty()) {
        out.targets.reserve(idx.size());
        for (std::size_t i : idx) out.targets.push_back(data.targets[i]);
    }
    out.split = data.split;
    out.provenance = data.provenance;
    return out;
}

Dataset subset(const Dataset& data, std::size_t count) {
    if (count == 0 || count >= data.size()) return data;
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return take(data, idx);
}

// ---------------------------------------------------------------------------
// Synthetic image tasks
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kImg = 28;

// Class prototype: oriented grating plus a class-positioned blob.
double prototype_pixel(int cls, std::size_t y, std::size_t x) {
    const double theta = cls * 0.31415926535;
    const double freq = 2.0 + (cls % 3);
    const double phase = 0.7 * cls;
    const double u = (double(x) * std::cos(theta) + double(y) * std::sin(theta)) / double(kImg);
    double v = 0.5 + 0.45 * std::sin(2.0 * 3.14159265358979 * freq * u + phase);

    const double cx = 7.0 + 14.0 * ((cls * 3) % 5) / 4.0;
    const double cy = 7.0 + 14.0 * ((cls * 7) % 5) / 4.0;
    const double dx = double(x) - cx, dy = double(y) - cy;
    v += 0.5 * std::exp(-(dx * dx + dy * dy) / 18.0);
    return std::clamp(v, 0.0, 1.0);
}

}  // namespace

Dataset synthetic_digits(std::size_t count, std::uint64_t seed, const std::string& split) {
    Rng rng = make_rng(seed, 0x5D16 ^ std::hash<std::string>{}(split));
    std::vector<double> pixels(count * kImg * kImg);
    std::vector<int> labels(count);
    std::uniform_int_distribution<int> cls_pick(0, 9);
    std::uniform_int_distribution<int> shift_pick(-2, 2);
    for (std::size_t i = 0; i < count; ++i) {
        const int cls = cls_pick(rng);
        labels[i] = cls;
        const double amp = uniform(rng, 0.65, 1.0);
        const int sy = shift_pick(rng), sx = shift_pick(rng);
        for (std::size_t y = 0; y < kImg; ++y) {
            for (std::size_t x = 0; x < kImg; ++x) {
                const std::size_t py = (y + kImg + sy) % kImg;
                const std::size_t px = (x + kImg + sx) % kImg;
                double v = amp * prototype_pixel(cls, py, px) + 0.12 * gauss(rng);
                v = std::clamp(v, 0.0, 1.0);
                pixels[(i * kImg + y) * kImg + x] = std::floor(v * 255.0 + 0.5);
            }
        }
    }
    Dataset d;
    d.inputs = Tensor({count, kImg, kImg, 1}, std::move(pixels));
    d.labels = std::move(labels);
    d.split = split;
    d.provenance = msg("synthetic digits, n=", count, ", seed=", seed);
    return d;
}

Dataset uniform_noise_images(std::size_t count, std::size_t height, std::size_t width,
                             std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x01CE);
    std::vector<double> pixels(count * height * width);
    std::uniform_int_distribution<int> byte_pick(0, 255);
    for (double& v : pixels) v = byte_pick(rng);
    Dataset d;
    d.inputs = Tensor({count, height, width, 1}, std::move(pixels));
    d.labels.assign(count, 0);
    d.split = "outlier";
    d.provenance = msg("uniform noise, n=", count, ", seed=", seed);
    return d;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         const std::string& split) {
    Tensor images = load_idx(images_path);
    Tensor labels_t = load_idx(labels_path);
    if (labels_t.rank() != 1) {
        throw FormatError(msg(labels_path, ": label file must be rank-1, got ",
                              shape_str(labels_t.shape())));
    }
    if (images.rank() < 1 || images.shape()[0] != labels_t.shape()[0]) {
        throw FormatError(msg("image/label count mismatch: ", shape_str(images.shape()),
                              " vs ", shape_str(labels_t.shape())));
    }
    // images arrive {N, H, W}; carry an explicit trailing channel
    if (images.rank() == 3) {
        Shape s = images.shape();
        images = Tensor({s[0], s[1], s[2], 1}, images.data());
    }
    Dataset d;
    d.inputs = std::move(images);
    d.labels.reserve(labels_t.size());
    for (double v : labels_t.data()) d.labels.push_back(static_cast<int>(v));
    d.split = split;
    d.provenance = msg("idx files: ", images_path);
    return d;
}

}  // namespace bbh
