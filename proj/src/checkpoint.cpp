#include "bbh/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace bbh {

namespace {

constexpr char kMagic[4] = {'B', 'B', 'H', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

double get_f64(const unsigned char* p) {
    const std::uint64_t bits = get_u64(p);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ExperimentConfig& config,
                     const std::vector<NamedTensor>& tensors) {
    std::string meta = "[config]\n" + serialize_config(config) + "[tensors]\n";
    for (const NamedTensor& t : tensors) {
        meta += "tensor " + t.name + " " + std::to_string(t.value.rank());
        for (std::size_t e : t.value.shape()) meta += " " + std::to_string(e);
        meta += "\n";
    }

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, meta.size());
    out += meta;
    for (const NamedTensor& t : tensors) {
        for (double v : t.value.data()) put_f64(out, v);
    }

    std::ofstream file(path, std::ios::binary);
    if (!file) throw IoError(msg("cannot write checkpoint '", path, "'"));
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError(msg("short write to checkpoint '", path, "'"));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError(msg("cannot open checkpoint '", path, "'"));
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(file)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 16) throw FormatError(msg(path, ": truncated checkpoint header"));
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(msg(path, ": bad checkpoint magic"));
    }
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kVersion) {
        throw FormatError(msg(path, ": unsupported checkpoint version ", version));
    }
    const std::uint64_t meta_len = get_u64(bytes.data() + 8);
    if (bytes.size() < 16 + meta_len) {
        throw FormatError(msg(path, ": truncated checkpoint metadata"));
    }
    const std::string meta(bytes.begin() + 16, bytes.begin() + 16 + meta_len);

    const std::size_t cfg_at = meta.find("[config]\n");
    const std::size_t tensors_at = meta.find("[tensors]\n");
    if (cfg_at != 0 || tensors_at == std::string::npos) {
        throw FormatError(msg(path, ": malformed checkpoint metadata"));
    }
    Checkpoint ck;
    ck.config = parse_config(meta.substr(9, tensors_at - 9));

    std::istringstream manifest(meta.substr(tensors_at + 10));
    std::string line;
    std::size_t offset = 16 + meta_len;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string tag, name;
        std::size_t rank = 0;
        if (!(fields >> tag >> name >> rank) || tag != "tensor") {
            throw FormatError(msg(path, ": malformed manifest line '", line, "'"));
        }
        Shape shape(rank);
        for (std::size_t i = 0; i < rank; ++i) {
            if (!(fields >> shape[i])) {
                throw FormatError(msg(path, ": manifest extents missing for tensor ", name));
            }
        }
        const std::size_t count = shape_size(shape);
        if (offset + count * 8 > bytes.size()) {
            throw FormatError(msg(path, ": payload truncated at tensor ", name));
        }
        std::vector<double> data(count);
        for (std::size_t i = 0; i < count; ++i) data[i] = get_f64(bytes.data() + offset + i * 8);
        offset += count * 8;
        ck.tensors.push_back({name, Tensor(std::move(shape), std::move(data))});
    }
    if (offset != bytes.size()) {
        throw FormatError(msg(path, ": ", bytes.size() - offset,
                              " trailing bytes after the last tensor"));
    }
    return ck;
}

std::unique_ptr<Posterior> restore_posterior(const Checkpoint& ck) {
    NetworkSpec spec = build_network(ck.config);
    Rng rng = make_rng(ck.config.seed, 0x7421);  // init overwritten below

    std::unique_ptr<Posterior> posterior;
    switch (ck.config.train.method) {
        case Method::bbh:
            posterior = std::make_unique<HypernetPosterior>(ck.config.train.hypernet, spec, rng);
            break;
        case Method::bbb:
        case Method::bbb_kernel:
        case Method::bbb_avb:
            posterior = std::make_unique<FactorizedGaussianPosterior>(
                spec, rng, ck.config.train.gaussian_init_sigma);
            break;
        case Method::dropout:
            posterior =
                std::make_unique<DropoutPosterior>(spec, ck.config.train.dropout_rate, rng);
            break;
        case Method::map:
            posterior = std::make_unique<PointPosterior>(spec, rng);
            break;
        case Method::ensemble: {
            // member weights are stored as m<i>.w.<name>
            std::size_t members = 0;
            for (const NamedTensor& t : ck.tensors) {
                std::size_t idx = 0;
                if (t.name.size() > 1 && t.name[0] == 'm') {
                    idx = std::stoul(t.name.substr(1, t.name.find('.') - 1));
                    members = std::max(members, idx + 1);
                }
            }
            if (members == 0) throw FormatError("ensemble checkpoint carries no member tensors");
            std::vector<WeightSet> sets(members);
            for (const NamedTensor& t : ck.tensors) {
                const std::size_t dot = t.name.find('.');
                const std::size_t idx = std::stoul(t.name.substr(1, dot - 1));
                const std::string wname = t.name.substr(dot + 3);  // skip ".w."
                sets[idx][wname] = t.value;
            }
            return std::make_unique<EnsemblePosterior>(spec, std::move(sets));
        }
    }

    auto& params = posterior->parameters();
    if (params.size() != ck.tensors.size()) {
        throw FormatError(msg("checkpoint carries ", ck.tensors.size(), " tensors, posterior ",
                              "family demands ", params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != ck.tensors[i].name) {
            throw FormatError(msg("checkpoint tensor '", ck.tensors[i].name,
                                  "' does not match parameter '", params[i].name, "'"));
        }
        if (params[i].value.shape() != ck.tensors[i].value.shape()) {
            throw FormatError(msg("checkpoint tensor '", ck.tensors[i].name, "' has shape ",
                                  shape_str(ck.tensors[i].value.shape()), ", parameter demands ",
                                  shape_str(params[i].value.shape())));
        }
        params[i].value = ck.tensors[i].value;
    }
    return posterior;
}

void save_posterior(const std::string& path, const ExperimentConfig& config,
                    const Posterior& posterior) {
    save_checkpoint(path, config, posterior.parameters());
}

}  // namespace bbh
