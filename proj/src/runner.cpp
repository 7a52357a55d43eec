#include "bbh/runner.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <ostream>

#include "bbh/checkpoint.hpp"
#include "bbh/data.hpp"

namespace fs = std::filesystem;

namespace bbh {

namespace {

struct ClassificationData {
    Dataset train;  // normalized inputs
    Dataset test;
    Dataset outlier;
};

Dataset normalized(Dataset d) {
    d.inputs = normalize(d.inputs);
    return d;
}

ClassificationData load_classification_data(const ExperimentConfig& cfg) {
    ClassificationData out;
    if (cfg.data_kind == ExperimentConfig::DataKind::idx) {
        out.train = normalized(
            subset(load_idx_dataset(cfg.train_images, cfg.train_labels, "train"),
                   cfg.train_count));
        out.test = normalized(
            subset(load_idx_dataset(cfg.test_images, cfg.test_labels, "test"), cfg.test_count));
    } else if (cfg.data_kind == ExperimentConfig::DataKind::synth) {
        out.train = normalized(synthetic_digits(cfg.train_count, cfg.seed, "train"));
        out.test = normalized(synthetic_digits(cfg.test_count, cfg.seed, "test"));
    } else {
        throw ConfigError("classification run demands data.kind = idx or synth");
    }

    if (!cfg.outlier_images.empty()) {
        Tensor images = load_idx(cfg.outlier_images);
        if (images.rank() == 3) {
            Shape s = images.shape();
            images = Tensor({s[0], s[1], s[2], 1}, images.data());
        }
        Dataset d;
        d.inputs = std::move(images);
        d.split = "outlier";
        d.provenance = cfg.outlier_images;
        out.outlier = normalized(subset(d, cfg.outlier_count));
    } else {
        const Shape& s = out.test.inputs.shape();
        out.outlier =
            normalized(uniform_noise_images(cfg.outlier_count, s[1], s[2], cfg.seed + 17));
    }
    return out;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
}

std::vector<WeightSelector> default_selection(const NetworkSpec& spec, std::size_t coords) {
    const ParamLayer& first = spec.param_layers().front();
    const std::size_t n = std::min(coords, shape_size(first.kernel_shape));
    return {{first.kernel, 0, n}};
}

void write_diagnostics(const ExperimentConfig& cfg, Posterior& posterior,
                       std::vector<std::string>& files) {
    Rng rng = make_rng(cfg.seed, 0xD1A6);
    WeightDiagnostics diag =
        weight_diagnostics(posterior, cfg.diag_samples,
                           default_selection(posterior.network(), cfg.diag_coords), rng);
    write_text_file(out_path(cfg, "histograms.csv"), histogram_csv(diag));
    write_text_file(out_path(cfg, "correlations.csv"), correlation_csv(diag));
    files.push_back("histograms.csv");
    files.push_back("correlations.csv");
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(cfg.out_dir);

    ClassificationData data = load_classification_data(cfg);
    NetworkSpec spec = build_network(cfg);

    log << "training method=" << method_name(cfg.train.method) << " steps=" << cfg.train.steps
        << " n=" << data.train.size() << "\n";
    TrainResult trained = train(cfg.train, spec, data.train);

    Rng eval_rng = make_rng(cfg.seed, 0xE7A1);
    PredictiveResult in_pred =
        predictive_distribution(*trained.posterior, data.test.inputs, cfg.eval_samples, eval_rng);
    const double acc = accuracy(in_pred.probs, data.test.labels);
    const double in_auc = entropy_cdf_auc(in_pred.entropy);

    Rng outlier_rng = make_rng(cfg.seed, 0xE7A2);
    PredictiveResult out_pred = predictive_distribution(*trained.posterior, data.outlier.inputs,
                                                        cfg.eval_samples, outlier_rng);
    const double outlier_auc = entropy_cdf_auc(out_pred.entropy);

    const std::size_t n_attack = std::min(cfg.attack_count, data.test.size());
    std::vector<std::size_t> head(n_attack);
    for (std::size_t i = 0; i < n_attack; ++i) head[i] = i;
    Dataset attack_set = take(data.test, head);
    Rng attack_rng = make_rng(cfg.seed, 0xA77C);
    AdversarialSweep sweep =
        adversarial_sweep(*trained.posterior, attack_set.inputs, attack_set.labels,
                          cfg.eps_grid, cfg.attack_samples, attack_rng);

    const auto t1 = std::chrono::steady_clock::now();
    MetricsRow row;
    row.method = method_name(cfg.train.method);
    row.error_pct = 100.0 * (1.0 - acc);
    row.in_auc = in_auc;
    row.outlier_auc = outlier_auc;
    row.runtime_s = std::chrono::duration<double>(t1 - t0).count();
    row.seed = cfg.seed;

    std::vector<std::string> files;
    write_text_file(out_path(cfg, "metrics.csv"), metrics_csv(row));
    files.push_back("metrics.csv");
    write_text_file(out_path(cfg, "sweep.csv"), sweep_csv(sweep));
    files.push_back("sweep.csv");
    write_text_file(out_path(cfg, "sweep.svg"), sweep_svg(sweep));
    files.push_back("sweep.svg");
    write_text_file(out_path(cfg, "training_log.csv"), training_log_csv(trained.log));
    files.push_back("training_log.csv");
    write_diagnostics(cfg, *trained.posterior, files);

    const std::string ckpt = out_path(cfg, "checkpoint.bbh");
    save_posterior(ckpt, cfg, *trained.posterior);
    files.push_back("checkpoint.bbh");
    files.push_back("manifest.txt");
    write_manifest(out_path(cfg, "manifest.txt"), files);

    log << "method=" << row.method << " error_pct=" << row.error_pct << " in_auc=" << row.in_auc
        << " outlier_auc=" << row.outlier_auc << " runtime_s=" << row.runtime_s << "\n";

    ExperimentOutcome outcome;
    outcome.metrics = row;
    outcome.sweep = sweep;
    outcome.checkpoint_path = ckpt;
    return outcome;
}

void run_toy(const ExperimentConfig& cfg, std::ostream& log) {
    if (cfg.data_kind != ExperimentConfig::DataKind::toy) {
        throw ConfigError("toy run demands data.kind = toy");
    }
    fs::create_directories(cfg.out_dir);

    Dataset data =
        toy_regression(cfg.toy_points, cfg.toy_x_lo, cfg.toy_x_hi, cfg.toy_noise_std, cfg.seed);
    NetworkSpec spec = build_network(cfg);

    log << "training method=" << method_name(cfg.train.method) << " steps=" << cfg.train.steps
        << " toy n=" << data.size() << "\n";
    TrainResult trained = train(cfg.train, spec, data);

    // predictive grid two units beyond the training range on both sides
    const double lo = cfg.toy_x_lo - 2.0, hi = cfg.toy_x_hi + 2.0;
    const std::size_t grid = 121;
    std::vector<double> xs(grid);
    for (std::size_t i = 0; i < grid; ++i) {
        xs[i] = lo + (hi - lo) * double(i) / double(grid - 1);
    }
    Rng rng = make_rng(cfg.seed, 0x70F);
    RegressionPredictive pred = predictive_regression(
        *trained.posterior, Tensor({grid, 1}, xs), cfg.eval_samples, rng);

    std::vector<std::string> files;
    write_text_file(out_path(cfg, "toy_predictive.csv"), toy_predictive_csv(xs, pred));
    files.push_back("toy_predictive.csv");
    write_text_file(out_path(cfg, "toy.svg"),
                    toy_svg(xs, pred, data.inputs.data(), data.targets));
    files.push_back("toy.svg");
    write_text_file(out_path(cfg, "training_log.csv"), training_log_csv(trained.log));
    files.push_back("training_log.csv");
    save_posterior(out_path(cfg, "checkpoint.bbh"), cfg, *trained.posterior);
    files.push_back("checkpoint.bbh");
    files.push_back("manifest.txt");
    write_manifest(out_path(cfg, "manifest.txt"), files);

    log << "toy run done, method=" << method_name(cfg.train.method) << "\n";
}

MetricsRow run_eval(const std::string& checkpoint_path, const std::string& outlier_override,
                    std::ostream& log) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    if (!outlier_override.empty()) ck.config.outlier_images = outlier_override;
    std::unique_ptr<Posterior> posterior = restore_posterior(ck);
    ClassificationData data = load_classification_data(ck.config);

    Rng in_rng = make_rng(ck.config.seed, 0xE7A1);
    PredictiveResult in_pred = predictive_distribution(*posterior, data.test.inputs,
                                                       ck.config.eval_samples, in_rng);
    Rng out_rng = make_rng(ck.config.seed, 0xE7A2);
    PredictiveResult out_pred = predictive_distribution(*posterior, data.outlier.inputs,
                                                        ck.config.eval_samples, out_rng);

    MetricsRow row;
    row.method = method_name(ck.config.train.method);
    row.error_pct = 100.0 * (1.0 - accuracy(in_pred.probs, data.test.labels));
    row.in_auc = entropy_cdf_auc(in_pred.entropy);
    row.outlier_auc = entropy_cdf_auc(out_pred.entropy);
    row.seed = ck.config.seed;

    log << "method=" << row.method << " error_pct=" << row.error_pct << " in_auc=" << row.in_auc
        << " outlier_auc=" << row.outlier_auc << "\n";
    return row;
}

AdversarialSweep run_attack(const std::string& checkpoint_path, const std::vector<double>& eps,
                            std::ostream& log) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    std::unique_ptr<Posterior> posterior = restore_posterior(ck);
    ClassificationData data = load_classification_data(ck.config);

    const std::size_t n_attack = std::min(ck.config.attack_count, data.test.size());
    std::vector<std::size_t> head(n_attack);
    for (std::size_t i = 0; i < n_attack; ++i) head[i] = i;
    Dataset attack_set = take(data.test, head);

    Rng rng = make_rng(ck.config.seed, 0xA77C);
    const std::vector<double>& grid = eps.empty() ? ck.config.eps_grid : eps;
    AdversarialSweep sweep = adversarial_sweep(*posterior, attack_set.inputs, attack_set.labels,
                                               grid, ck.config.attack_samples, rng);

    const fs::path dir = fs::path(checkpoint_path).parent_path();
    write_text_file((dir / "sweep.csv").string(), sweep_csv(sweep));
    write_text_file((dir / "sweep.svg").string(), sweep_svg(sweep));
    for (std::size_t i = 0; i < sweep.epsilons.size(); ++i) {
        log << "eps=" << sweep.epsilons[i] << " accuracy=" << sweep.accuracy[i]
            << " mean_entropy=" << sweep.mean_entropy[i] << "\n";
    }
    return sweep;
}

std::vector<WeightSelector> parse_weight_selector(const std::string& text) {
    std::vector<WeightSelector> out;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t comma = text.find(',', at);
        if (comma == std::string::npos) comma = text.size();
        std::string item = text.substr(at, comma - at);
        at = comma + 1;
        if (item.empty()) continue;

        WeightSelector sel;
        const std::size_t bracket = item.find('[');
        if (bracket == std::string::npos) {
            sel.name = item;
        } else {
            if (item.back() != ']') {
                throw ConfigError(msg("weight selector '", item, "': missing ']'"));
            }
            sel.name = item.substr(0, bracket);
            const std::string range = item.substr(bracket + 1, item.size() - bracket - 2);
            const std::size_t colon = range.find(':');
            try {
                if (colon == std::string::npos) {
                    sel.begin = std::stoul(range);
                    sel.end = sel.begin + 1;
                } else {
                    sel.begin = std::stoul(range.substr(0, colon));
                    sel.end = std::stoul(range.substr(colon + 1));
                }
            } catch (const std::exception&) {
                throw ConfigError(msg("weight selector '", item, "': bad index range"));
            }
        }
        out.push_back(std::move(sel));
    }
    if (out.empty()) throw ConfigError("empty weight selector");
    return out;
}

WeightDiagnostics run_diagnose(const std::string& checkpoint_path, const std::string& selector,
                               std::size_t samples, std::ostream& log) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    std::unique_ptr<Posterior> posterior = restore_posterior(ck);

    std::vector<WeightSelector> selection =
        selector.empty() ? default_selection(posterior->network(), ck.config.diag_coords)
                         : parse_weight_selector(selector);
    Rng rng = make_rng(ck.config.seed, 0xD1A6);
    const std::size_t s = samples ? samples : ck.config.diag_samples;
    WeightDiagnostics diag = weight_diagnostics(*posterior, s, selection, rng);

    const fs::path dir = fs::path(checkpoint_path).parent_path();
    write_text_file((dir / "histograms.csv").string(), histogram_csv(diag));
    write_text_file((dir / "correlations.csv").string(), correlation_csv(diag));
    log << "diagnostics over " << diag.labels.size() << " coordinates, " << s << " samples\n";
    return diag;
}

void run_grid(const std::string& dir, std::ostream& log) {
    std::vector<fs::path> configs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".cfg") configs.push_back(entry.path());
    }
    if (configs.empty()) throw ConfigError(msg("no .cfg files in '", dir, "'"));
    std::sort(configs.begin(), configs.end());

    std::string summary = "config,method,error_pct,in_auc,outlier_auc,runtime_s,seed\n";
    for (const fs::path& path : configs) {
        log << "=== " << path.filename().string() << "\n";
        ExperimentConfig cfg = load_config(path.string());
        if (cfg.data_kind == ExperimentConfig::DataKind::toy) {
            run_toy(cfg, log);
            continue;
        }
        ExperimentOutcome outcome = run_experiment(cfg, log);
        const MetricsRow& r = outcome.metrics;
        summary += path.filename().string() + "," + r.method + "," + msg(r.error_pct) + "," +
                   msg(r.in_auc) + "," + msg(r.outlier_auc) + "," + msg(r.runtime_s) + "," +
                   std::to_string(r.seed) + "\n";
    }
    write_text_file((fs::path(dir) / "grid_summary.csv").string(), summary);
    log << "grid summary written to " << (fs::path(dir) / "grid_summary.csv").string() << "\n";
}

}  // namespace bbh
