#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bbh/runner.hpp"

namespace {

std::vector<double> parse_eps_list(const std::string& text) {
    std::vector<double> out;
    std::size_t at = 0;
    while (at < text.size()) {
        std::size_t comma = text.find(',', at);
        if (comma == std::string::npos) comma = text.size();
        out.push_back(std::stod(text.substr(at, comma - at)));
        at = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayes-by-hypernet experiments: variational training, uncertainty "
                 "evaluation, adversarial sweeps and posterior diagnostics"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, outlier_path, eps_text, selector, grid_dir;
    std::size_t diag_samples = 0;

    CLI::App* train_cmd = app.add_subcommand("train", "train and evaluate one experiment");
    train_cmd->add_option("config", config_path, "experiment config file")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "re-evaluate a checkpoint");
    eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--outlier", outlier_path, "IDX image file overriding the outlier set");

    CLI::App* attack_cmd = app.add_subcommand("attack", "adversarial sweep from a checkpoint");
    attack_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
    attack_cmd->add_option("--eps", eps_text, "comma-separated perturbation grid");

    CLI::App* diag_cmd = app.add_subcommand("diagnose", "posterior weight diagnostics");
    diag_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
    diag_cmd->add_option("--weights", selector, "selector: name | name[i] | name[a:b], commas");
    diag_cmd->add_option("--samples", diag_samples, "posterior samples for the diagnostics");

    CLI::App* toy_cmd = app.add_subcommand("toy", "toy regression uncertainty run");
    toy_cmd->add_option("config", config_path, "experiment config file")->required();

    CLI::App* grid_cmd = app.add_subcommand("grid", "run every .cfg in a directory");
    grid_cmd->add_option("dir", grid_dir, "directory of config files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            bbh::run_experiment(bbh::load_config(config_path), std::cout);
        } else if (eval_cmd->parsed()) {
            bbh::run_eval(checkpoint_path, outlier_path, std::cout);
        } else if (attack_cmd->parsed()) {
            bbh::run_attack(checkpoint_path,
                            eps_text.empty() ? std::vector<double>{} : parse_eps_list(eps_text),
                            std::cout);
        } else if (diag_cmd->parsed()) {
            bbh::run_diagnose(checkpoint_path, selector, diag_samples, std::cout);
        } else if (toy_cmd->parsed()) {
            bbh::run_toy(bbh::load_config(config_path), std::cout);
        } else if (grid_cmd->parsed()) {
            bbh::run_grid(grid_dir, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
