#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lpr/experiment.hpp"

namespace {

std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw lpr::ConfigError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

lpr::ExperimentConfig load_config(const std::string &path, std::uint64_t *seed_override,
                                  int *eval_every_override) {
    lpr::ExperimentConfig cfg = lpr::parse_config(path.empty() ? "" : read_file(path));
    if (seed_override) cfg.seed = *seed_override;
    if (eval_every_override) cfg.eval_every = *eval_every_override;
    cfg.validate();
    return cfg;
}

std::vector<std::string> split_values(const std::string &csv) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(csv);
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Latent prototype routing experiments on synthetic clustered data"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int eval_every = 0;
    bool eval_set = false;

    auto add_common = [&](CLI::App *cmd) {
        cmd->add_option("--config", config_path, "JSON config file (omit for all defaults)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "seed override")->each([&](const std::string &) {
            seed_set = true;
        });
        cmd->add_option("--eval-every", eval_every, "evaluation cadence override")
            ->each([&](const std::string &) { eval_set = true; });
    };

    CLI::App *run = app.add_subcommand("run", "run one experiment");
    add_common(run);

    CLI::App *grid = app.add_subcommand("grid", "run an ablation grid");
    add_common(grid);
    std::string axis_name;
    std::string values_csv;
    grid->add_option("--axis", axis_name,
                     "latent_dim | reg_strength | nk_setting | diversity_kind | metric_kind")
        ->required();
    grid->add_option("--values", values_csv, "comma-separated axis values")->required();

    CLI::App *defaults = app.add_subcommand("defaults", "print the default config");

    CLI11_PARSE(app, argc, argv);

    try {
        if (defaults->parsed()) {
            std::cout << lpr::serialize_config(lpr::ExperimentConfig{});
            return 0;
        }
        lpr::ExperimentConfig cfg = load_config(config_path, seed_set ? &seed : nullptr,
                                                eval_set ? &eval_every : nullptr);
        if (run->parsed()) {
            const lpr::ExperimentSummary s = lpr::run_experiment(cfg, out_dir);
            const lpr::EvalPoint &fin = s.final_eval;
            std::cout << "config " << lpr::hash_hex(s.cfg_hash) << "\n"
                      << "final step " << fin.step << ": test_loss " << fin.test_loss
                      << ", gini_hard " << fin.gini_hard << ", min_max_hard " << fin.min_max_hard
                      << "\n";
            if (s.diverged) {
                std::cerr << "training diverged at step " << s.diverged_step << "\n";
                return 3;
            }
            return 0;
        }
        const lpr::GridAxis axis = lpr::grid_axis_from(axis_name);
        const auto values = split_values(values_csv);
        if (values.empty()) throw lpr::ConfigError("grid: --values is empty");
        const auto cells = lpr::run_grid(cfg, axis, values, out_dir);
        for (const auto &cell : cells) {
            std::cout << axis_name << "=" << cell.value << ": test_loss "
                      << cell.summary.final_eval.test_loss << ", gini_hard "
                      << cell.summary.final_eval.gini_hard << ", min_max_hard "
                      << cell.summary.final_eval.min_max_hard
                      << (cell.summary.diverged ? " (diverged)" : "") << "\n";
        }
        return 0;
    } catch (const lpr::ConfigError &err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception &err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
}
