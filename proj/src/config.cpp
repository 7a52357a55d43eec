#include "bbh/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace bbh {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

struct RawEntry {
    std::string value;
    std::size_t line = 0;
    bool used = false;
};

class RawConfig {
public:
    explicit RawConfig(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        std::size_t number = 0;
        while (std::getline(in, line)) {
            ++number;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(msg("line ", number, ": expected 'key = value', got '", line,
                                      "'"));
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(msg("line ", number, ": empty key"));
            auto [it, inserted] = entries_.emplace(key, RawEntry{value, number});
            if (!inserted) {
                throw ConfigError(msg("duplicate key '", key, "' at lines ", it->second.line,
                                      " and ", number));
            }
        }
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    const std::string* take(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return nullptr;
        it->second.used = true;
        return &it->second.value;
    }

    void fail_on_unused() const {
        for (const auto& [key, entry] : entries_) {
            if (!entry.used) {
                throw ConfigError(msg("unknown key '", key, "' at line ", entry.line));
            }
        }
    }

private:
    std::map<std::string, RawEntry> entries_;
};

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(msg(key, ": expected a real number, got '", value, "'"));
    }
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(msg(key, ": expected a nonnegative integer, got '", value, "'"));
    }
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& value, Parse parse) {
    std::vector<T> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(msg(key, ": empty list element in '", value, "'"));
        out.push_back(parse(key, item));
    }
    if (out.empty()) throw ConfigError(msg(key, ": empty list"));
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += fmt_double(v[i]);
    }
    return s;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    RawConfig raw(text);
    ExperimentConfig cfg;

    if (const std::string* v = raw.take("train.method")) cfg.train.method = method_from(*v);
    const bool is_bbh = cfg.train.method == Method::bbh;

    // per-method defaults before explicit overrides
    cfg.train.lr = is_bbh ? 1e-4 : 1e-3;
    cfg.train.anneal_fraction = is_bbh ? 0.5 : 0.0;
    cfg.train.steps = 1500;
    cfg.train.batch = 128;

    if (const std::string* v = raw.take("train.lr")) {
        cfg.train.lr = parse_double("train.lr", *v);
        if (cfg.train.lr <= 0.0) throw ConfigError(msg("train.lr: must be positive, got ", *v));
    }
    if (const std::string* v = raw.take("train.steps")) {
        cfg.train.steps = parse_count("train.steps", *v);
        if (cfg.train.steps == 0) throw ConfigError("train.steps: must be at least 1");
    }
    if (const std::string* v = raw.take("train.batch")) {
        cfg.train.batch = parse_count("train.batch", *v);
        if (cfg.train.batch == 0) throw ConfigError("train.batch: must be at least 1");
    }
    if (const std::string* v = raw.take("train.kl_samples")) {
        cfg.train.kl_samples = parse_count("train.kl_samples", *v);
        if (cfg.train.kl_samples < 2) throw ConfigError("train.kl_samples: need at least 2");
    }
    if (const std::string* v = raw.take("train.prior_samples")) {
        cfg.train.prior_samples = parse_count("train.prior_samples", *v);
        if (cfg.train.prior_samples == 0) throw ConfigError("train.prior_samples: need at least 1");
    }
    if (const std::string* v = raw.take("train.anneal_fraction")) {
        cfg.train.anneal_fraction = parse_double("train.anneal_fraction", *v);
        if (cfg.train.anneal_fraction < 0.0 || cfg.train.anneal_fraction > 1.0) {
            throw ConfigError(msg("train.anneal_fraction: must lie in [0, 1], got ", *v));
        }
    }
    if (const std::string* v = raw.take("train.kl_scale")) {
        cfg.train.kl_scale = parse_double("train.kl_scale", *v);
        if (cfg.train.kl_scale <= 0.0) {
            throw ConfigError(msg("train.kl_scale: must be positive, got ", *v));
        }
    }
    if (const std::string* v = raw.take("train.gaussian_init_sigma")) {
        cfg.train.gaussian_init_sigma = parse_double("train.gaussian_init_sigma", *v);
        if (cfg.train.gaussian_init_sigma <= 0.0) {
            throw ConfigError("train.gaussian_init_sigma: must be positive");
        }
    }

    if (cfg.train.method == Method::ensemble) {
        if (const std::string* v = raw.take("train.ensemble_k")) {
            cfg.train.ensemble_k = parse_count("train.ensemble_k", *v);
            if (cfg.train.ensemble_k == 0) throw ConfigError("train.ensemble_k: need at least 1");
        }
    } else if (raw.has("train.ensemble_k")) {
        throw ConfigError(msg("train.ensemble_k: only valid for method ensemble, method is ",
                              method_name(cfg.train.method)));
    }
    if (cfg.train.method == Method::dropout) {
        if (const std::string* v = raw.take("train.dropout_rate")) {
            cfg.train.dropout_rate = parse_double("train.dropout_rate", *v);
            if (cfg.train.dropout_rate < 0.0 || cfg.train.dropout_rate >= 1.0) {
                throw ConfigError(msg("train.dropout_rate: must lie in [0, 1), got ", *v));
            }
        }
    } else if (raw.has("train.dropout_rate")) {
        throw ConfigError(msg("train.dropout_rate: only valid for method dropout, method is ",
                              method_name(cfg.train.method)));
    }

    if (is_bbh) {
        if (const std::string* v = raw.take("hypernet.arch")) {
            if (*v == "single") cfg.train.hypernet.arch = HypernetConfig::Arch::single;
            else if (*v == "layer_wise") cfg.train.hypernet.arch = HypernetConfig::Arch::layer_wise;
            else if (*v == "sliced_layer_wise")
                cfg.train.hypernet.arch = HypernetConfig::Arch::sliced_layer_wise;
            else throw ConfigError(msg("hypernet.arch: unknown architecture '", *v, "'"));
        }
        if (const std::string* v = raw.take("hypernet.hidden")) {
            cfg.train.hypernet.hidden = parse_list<std::size_t>(
                "hypernet.hidden", *v,
                [](const std::string& k, const std::string& s) { return parse_count(k, s); });
            for (std::size_t h : cfg.train.hypernet.hidden) {
                if (h == 0) throw ConfigError("hypernet.hidden: extents must be positive");
            }
        }
        if (const std::string* v = raw.take("hypernet.noise_dim")) {
            cfg.train.hypernet.noise_dim = parse_count("hypernet.noise_dim", *v);
            if (cfg.train.hypernet.noise_dim == 0) {
                throw ConfigError("hypernet.noise_dim: must be positive");
            }
        }
        if (const std::string* v = raw.take("hypernet.noise_mode")) {
            if (*v == "shared") cfg.train.hypernet.noise_mode = HypernetConfig::NoiseMode::shared;
            else if (*v == "independent")
                cfg.train.hypernet.noise_mode = HypernetConfig::NoiseMode::independent;
            else throw ConfigError(msg("hypernet.noise_mode: expected shared|independent, got '",
                                       *v, "'"));
        }
    } else {
        for (const char* key : {"hypernet.arch", "hypernet.hidden", "hypernet.noise_dim",
                                "hypernet.noise_mode"}) {
            if (raw.has(key)) {
                throw ConfigError(msg(key, ": only valid for method bbh, method is ",
                                      method_name(cfg.train.method)));
            }
        }
    }

    if (const std::string* v = raw.take("network.kind")) {
        if (*v == "mlp") cfg.net_kind = ExperimentConfig::NetKind::mlp;
        else if (*v == "lenet") cfg.net_kind = ExperimentConfig::NetKind::lenet;
        else throw ConfigError(msg("network.kind: expected mlp|lenet, got '", *v, "'"));
    }
    if (const std::string* v = raw.take("network.extents")) {
        cfg.mlp_extents = parse_list<std::size_t>(
            "network.extents", *v,
            [](const std::string& k, const std::string& s) { return parse_count(k, s); });
        if (cfg.mlp_extents.size() < 2) throw ConfigError("network.extents: need at least 2");
        for (std::size_t e : cfg.mlp_extents) {
            if (e == 0) throw ConfigError("network.extents: extents must be positive");
        }
    }
    if (const std::string* v = raw.take("network.classes")) {
        cfg.lenet_classes = parse_count("network.classes", *v);
        if (cfg.lenet_classes < 2) throw ConfigError("network.classes: need at least 2");
    }

    if (const std::string* v = raw.take("data.kind")) {
        if (*v == "toy") cfg.data_kind = ExperimentConfig::DataKind::toy;
        else if (*v == "idx") cfg.data_kind = ExperimentConfig::DataKind::idx;
        else if (*v == "synth") cfg.data_kind = ExperimentConfig::DataKind::synth;
        else throw ConfigError(msg("data.kind: expected toy|idx|synth, got '", *v, "'"));
    }
    if (const std::string* v = raw.take("data.train_images")) cfg.train_images = *v;
    if (const std::string* v = raw.take("data.train_labels")) cfg.train_labels = *v;
    if (const std::string* v = raw.take("data.test_images")) cfg.test_images = *v;
    if (const std::string* v = raw.take("data.test_labels")) cfg.test_labels = *v;
    if (const std::string* v = raw.take("data.outlier_images")) cfg.outlier_images = *v;
    if (const std::string* v = raw.take("data.train_count")) {
        cfg.train_count = parse_count("data.train_count", *v);
    }
    if (const std::string* v = raw.take("data.test_count")) {
        cfg.test_count = parse_count("data.test_count", *v);
    }
    if (const std::string* v = raw.take("data.outlier_count")) {
        cfg.outlier_count = parse_count("data.outlier_count", *v);
        if (cfg.outlier_count == 0) throw ConfigError("data.outlier_count: need at least 1");
    }
    if (const std::string* v = raw.take("data.toy_points")) {
        cfg.toy_points = parse_count("data.toy_points", *v);
        if (cfg.toy_points == 0) throw ConfigError("data.toy_points: need at least 1");
    }
    if (const std::string* v = raw.take("data.toy_x_lo")) {
        cfg.toy_x_lo = parse_double("data.toy_x_lo", *v);
    }
    if (const std::string* v = raw.take("data.toy_x_hi")) {
        cfg.toy_x_hi = parse_double("data.toy_x_hi", *v);
    }
    if (const std::string* v = raw.take("data.toy_noise_std")) {
        cfg.toy_noise_std = parse_double("data.toy_noise_std", *v);
        if (cfg.toy_noise_std < 0.0) throw ConfigError("data.toy_noise_std: must be nonnegative");
    }
    if (cfg.data_kind == ExperimentConfig::DataKind::toy && !(cfg.toy_x_lo < cfg.toy_x_hi)) {
        throw ConfigError("data.toy_x_lo: toy range is empty");
    }

    if (const std::string* v = raw.take("eval.samples")) {
        cfg.eval_samples = parse_count("eval.samples", *v);
        if (cfg.eval_samples == 0) throw ConfigError("eval.samples: need at least 1");
    }
    if (const std::string* v = raw.take("eval.eps")) {
        cfg.eps_grid = parse_list<double>(
            "eval.eps", *v,
            [](const std::string& k, const std::string& s) { return parse_double(k, s); });
        for (std::size_t i = 0; i < cfg.eps_grid.size(); ++i) {
            if (cfg.eps_grid[i] < 0.0 || (i > 0 && cfg.eps_grid[i] <= cfg.eps_grid[i - 1])) {
                throw ConfigError("eval.eps: must be nonnegative and strictly increasing");
            }
        }
    }
    if (const std::string* v = raw.take("eval.attack_count")) {
        cfg.attack_count = parse_count("eval.attack_count", *v);
        if (cfg.attack_count == 0) throw ConfigError("eval.attack_count: need at least 1");
    }
    if (const std::string* v = raw.take("eval.attack_samples")) {
        cfg.attack_samples = parse_count("eval.attack_samples", *v);
        if (cfg.attack_samples == 0) throw ConfigError("eval.attack_samples: need at least 1");
    }
    if (const std::string* v = raw.take("eval.diag_samples")) {
        cfg.diag_samples = parse_count("eval.diag_samples", *v);
        if (cfg.diag_samples < 2) throw ConfigError("eval.diag_samples: need at least 2");
    }
    if (const std::string* v = raw.take("eval.diag_coords")) {
        cfg.diag_coords = parse_count("eval.diag_coords", *v);
        if (cfg.diag_coords == 0) throw ConfigError("eval.diag_coords: need at least 1");
    }

    if (const std::string* v = raw.take("out.dir")) cfg.out_dir = *v;
    if (const std::string* v = raw.take("seed")) {
        cfg.seed = parse_count("seed", *v);
        cfg.train.seed = cfg.seed;
    } else {
        cfg.train.seed = cfg.seed;
    }

    raw.fail_on_unused();

    if (cfg.data_kind == ExperimentConfig::DataKind::idx) {
        for (const auto& [key, value] :
             std::initializer_list<std::pair<const char*, const std::string*>>{
                 {"data.train_images", &cfg.train_images},
                 {"data.train_labels", &cfg.train_labels},
                 {"data.test_images", &cfg.test_images},
                 {"data.test_labels", &cfg.test_labels}}) {
            if (value->empty()) {
                throw ConfigError(msg(key, ": required for data.kind = idx"));
            }
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(msg("cannot open config '", path, "'"));
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["train.method"] = method_name(cfg.train.method);
    kv["train.lr"] = fmt_double(cfg.train.lr);
    kv["train.steps"] = std::to_string(cfg.train.steps);
    kv["train.batch"] = std::to_string(cfg.train.batch);
    kv["train.kl_samples"] = std::to_string(cfg.train.kl_samples);
    kv["train.prior_samples"] = std::to_string(cfg.train.prior_samples);
    kv["train.anneal_fraction"] = fmt_double(cfg.train.anneal_fraction);
    if (cfg.train.kl_scale > 0.0) kv["train.kl_scale"] = fmt_double(cfg.train.kl_scale);
    kv["train.gaussian_init_sigma"] = fmt_double(cfg.train.gaussian_init_sigma);
    if (cfg.train.method == Method::ensemble) {
        kv["train.ensemble_k"] = std::to_string(cfg.train.ensemble_k);
    }
    if (cfg.train.method == Method::dropout) {
        kv["train.dropout_rate"] = fmt_double(cfg.train.dropout_rate);
    }
    if (cfg.train.method == Method::bbh) {
        switch (cfg.train.hypernet.arch) {
            case HypernetConfig::Arch::single: kv["hypernet.arch"] = "single"; break;
            case HypernetConfig::Arch::layer_wise: kv["hypernet.arch"] = "layer_wise"; break;
            case HypernetConfig::Arch::sliced_layer_wise:
                kv["hypernet.arch"] = "sliced_layer_wise";
                break;
        }
        kv["hypernet.hidden"] = join(cfg.train.hypernet.hidden);
        kv["hypernet.noise_dim"] = std::to_string(cfg.train.hypernet.noise_dim);
        kv["hypernet.noise_mode"] =
            cfg.train.hypernet.noise_mode == HypernetConfig::NoiseMode::shared ? "shared"
                                                                               : "independent";
    }
    kv["network.kind"] = cfg.net_kind == ExperimentConfig::NetKind::mlp ? "mlp" : "lenet";
    if (cfg.net_kind == ExperimentConfig::NetKind::mlp) {
        kv["network.extents"] = join(cfg.mlp_extents);
    } else {
        kv["network.classes"] = std::to_string(cfg.lenet_classes);
    }
    switch (cfg.data_kind) {
        case ExperimentConfig::DataKind::toy: kv["data.kind"] = "toy"; break;
        case ExperimentConfig::DataKind::idx: kv["data.kind"] = "idx"; break;
        case ExperimentConfig::DataKind::synth: kv["data.kind"] = "synth"; break;
    }
    if (!cfg.train_images.empty()) kv["data.train_images"] = cfg.train_images;
    if (!cfg.train_labels.empty()) kv["data.train_labels"] = cfg.train_labels;
    if (!cfg.test_images.empty()) kv["data.test_images"] = cfg.test_images;
    if (!cfg.test_labels.empty()) kv["data.test_labels"] = cfg.test_labels;
    if (!cfg.outlier_images.empty()) kv["data.outlier_images"] = cfg.outlier_images;
    kv["data.train_count"] = std::to_string(cfg.train_count);
    kv["data.test_count"] = std::to_string(cfg.test_count);
    kv["data.outlier_count"] = std::to_string(cfg.outlier_count);
    if (cfg.data_kind == ExperimentConfig::DataKind::toy) {
        kv["data.toy_points"] = std::to_string(cfg.toy_points);
        kv["data.toy_x_lo"] = fmt_double(cfg.toy_x_lo);
        kv["data.toy_x_hi"] = fmt_double(cfg.toy_x_hi);
        kv["data.toy_noise_std"] = fmt_double(cfg.toy_noise_std);
    }
    kv["eval.samples"] = std::to_string(cfg.eval_samples);
    kv["eval.eps"] = join(cfg.eps_grid);
    kv["eval.attack_count"] = std::to_string(cfg.attack_count);
    kv["eval.attack_samples"] = std::to_string(cfg.attack_samples);
    kv["eval.diag_samples"] = std::to_string(cfg.diag_samples);
    kv["eval.diag_coords"] = std::to_string(cfg.diag_coords);
    kv["out.dir"] = cfg.out_dir;
    kv["seed"] = std::to_string(cfg.seed);

    std::string out;
    for (const auto& [key, value] : kv) out += key + " = " + value + "\n";
    return out;
}

NetworkSpec build_network(const ExperimentConfig& cfg) {
    if (cfg.net_kind == ExperimentConfig::NetKind::mlp) return build_mlp(cfg.mlp_extents);
    return build_lenet(cfg.lenet_classes);
}

}  // namespace bbh
