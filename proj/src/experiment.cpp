#include "lpr/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace lpr {

namespace {

// Shortest round-trippable decimal form, stable across runs.
std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

void write_file(const std::string &path, const std::string &content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NumericError("cannot open " + path + " for writing");
    out << content;
}

} // namespace

std::string result_csv_header(int experts) {
    std::string h = "config_hash,step,test_loss,gini_hard,gini_soft,min_max_hard,min_max_soft";
    for (int e = 0; e < experts; ++e) h += ",load_" + std::to_string(e);
    return h + "\n";
}

std::string result_csv_row(std::uint64_t cfg_hash, const EvalPoint &ev) {
    std::string row = hash_hex(cfg_hash);
    row += "," + std::to_string(ev.step);
    row += "," + fmt_num(ev.test_loss);
    row += "," + fmt_num(ev.gini_hard);
    row += "," + fmt_num(ev.gini_soft);
    row += "," + fmt_num(ev.min_max_hard);
    row += "," + fmt_num(ev.min_max_soft);
    for (double l : ev.loads_hard.loads) row += "," + fmt_num(l);
    return row + "\n";
}

std::string heatmap_tsv(const std::vector<LoadVector> &per_layer_loads) {
    std::string out;
    for (const LoadVector &layer : per_layer_loads) {
        const double total = layer.total();
        for (int e = 0; e < layer.experts(); ++e) {
            if (e > 0) out += "\t";
            out += fmt_num(total > 0.0 ? layer.loads[e] / total : 0.0);
        }
        out += "\n";
    }
    return out;
}

ExperimentSummary run_experiment(const ExperimentConfig &cfg, const std::string &out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::uint64_t h = config_hash(cfg);

    std::string csv = result_csv_header(cfg.experts);
    TrainHooks hooks;
    hooks.on_eval = [&](const EvalPoint &ev) { csv += result_csv_row(h, ev); };
    const TrainOutcome outcome = train(cfg, hooks);

    write_file(out_dir + "/results.csv", csv);
    write_file(out_dir + "/heatmap.tsv", heatmap_tsv({outcome.final_eval().loads_hard}));

    nlohmann::json summary;
    summary["config_hash"] = hash_hex(h);
    summary["diverged"] = outcome.diverged;
    if (outcome.diverged) {
        summary["diverged_step"] = outcome.diverged_step;
        summary["diagnostic"] = outcome.diagnostic;
    }
    const EvalPoint &fin = outcome.final_eval();
    summary["final"] = {{"step", fin.step},
                        {"test_loss", fin.test_loss},
                        {"gini_hard", fin.gini_hard},
                        {"gini_soft", fin.gini_soft},
                        {"min_max_hard", fin.min_max_hard},
                        {"min_max_soft", fin.min_max_soft}};
    summary["loads_hard"] = fin.loads_hard.loads;
    summary["loads_soft"] = fin.loads_soft.loads;
    write_file(out_dir + "/summary.json", summary.dump(2) + "\n");

    ExperimentSummary s;
    s.cfg_hash = h;
    s.diverged = outcome.diverged;
    s.diverged_step = outcome.diverged_step;
    s.final_eval = fin;
    return s;
}

GridAxis grid_axis_from(const std::string &name) {
    if (name == "latent_dim") return GridAxis::LatentDim;
    if (name == "reg_strength") return GridAxis::RegStrength;
    if (name == "nk_setting") return GridAxis::NkSetting;
    if (name == "diversity_kind") return GridAxis::DiversityKind;
    if (name == "metric_kind") return GridAxis::MetricKind;
    throw ConfigError("grid axis: unknown axis '" + name + "'");
}

std::string grid_axis_name(GridAxis axis) {
    switch (axis) {
    case GridAxis::LatentDim: return "latent_dim";
    case GridAxis::RegStrength: return "reg_strength";
    case GridAxis::NkSetting: return "nk_setting";
    case GridAxis::DiversityKind: return "diversity_kind";
    case GridAxis::MetricKind: return "metric_kind";
    }
    return "?";
}

ExperimentConfig apply_axis(const ExperimentConfig &base, GridAxis axis,
                            const std::string &value) {
    ExperimentConfig cfg = base;
    try {
        switch (axis) {
        case GridAxis::LatentDim:
            cfg.d_latent = std::stoi(value);
            break;
        case GridAxis::RegStrength:
            cfg.beta_rs = std::stod(value);
            break;
        case GridAxis::NkSetting: {
            const auto dash = value.find('-');
            if (dash == std::string::npos)
                throw ConfigError("nk_setting value must look like 'M-k', got '" + value + "'");
            cfg.experts = std::stoi(value.substr(0, dash));
            cfg.top_k = std::stoi(value.substr(dash + 1));
            break;
        }
        case GridAxis::DiversityKind: {
            ExperimentConfig probe = parse_config("{\"diversity\": {\"kind\": \"" + value + "\"}}");
            cfg.div_kind = probe.div_kind;
            break;
        }
        case GridAxis::MetricKind: {
            const auto kind = metric_from_name(value);
            if (!kind) throw ConfigError("metric_kind: unknown kind '" + value + "'");
            cfg.metric.kind = *kind;
            break;
        }
        }
    } catch (const std::invalid_argument &) {
        throw ConfigError("grid value '" + value + "' is not valid for axis " +
                          grid_axis_name(axis));
    }
    cfg.validate();
    return cfg;
}

std::vector<GridCell> run_grid(const ExperimentConfig &base, GridAxis axis,
                               const std::vector<std::string> &values,
                               const std::string &out_dir) {
    std::filesystem::create_directories(out_dir);
    std::string csv = "axis,value,config_hash,test_loss,gini_hard,gini_soft,min_max_hard,"
                      "min_max_soft,diverged\n";
    std::vector<GridCell> cells;
    for (const std::string &value : values) {
        const ExperimentConfig cfg = apply_axis(base, axis, value);
        std::string tag = value;
        for (char &c : tag)
            if (c == '.' || c == '/') c = '_';
        const std::string cell_dir = out_dir + "/cell_" + tag;
        GridCell cell;
        cell.value = value;
        cell.summary = run_experiment(cfg, cell_dir);
        const EvalPoint &fin = cell.summary.final_eval;
        csv += grid_axis_name(axis) + "," + value + "," + hash_hex(cell.summary.cfg_hash) + "," +
               fmt_num(fin.test_loss) + "," + fmt_num(fin.gini_hard) + "," +
               fmt_num(fin.gini_soft) + "," + fmt_num(fin.min_max_hard) + "," +
               fmt_num(fin.min_max_soft) + "," + (cell.summary.diverged ? "1" : "0") + "\n";
        cells.push_back(std::move(cell));
    }
    write_file(out_dir + "/grid_results.csv", csv);
    return cells;
}

} // namespace lpr
