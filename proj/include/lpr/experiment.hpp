#pragma once

#include <string>
#include <vector>

#include "lpr/config.hpp"
#include "lpr/trainer.hpp"

namespace lpr {

// One line of results.csv: fixed columns, then the hard per-expert loads of
// the single MoE layer.
std::string result_csv_header(int experts);
std::string result_csv_row(std::uint64_t cfg_hash, const EvalPoint &ev);

struct ExperimentSummary {
    std::uint64_t cfg_hash = 0;
    bool diverged = false;
    int diverged_step = -1;
    EvalPoint final_eval;
};

// Runs one experiment and writes results.csv, summary.json and heatmap.tsv
// into out_dir (created if missing).
ExperimentSummary run_experiment(const ExperimentConfig &cfg, const std::string &out_dir);

// Layer x expert matrix of per-layer-normalized loads, tab separated.
std::string heatmap_tsv(const std::vector<LoadVector> &per_layer_loads);

enum class GridAxis { LatentDim, RegStrength, NkSetting, DiversityKind, MetricKind };

GridAxis grid_axis_from(const std::string &name);
std::string grid_axis_name(GridAxis axis);

// Applies one axis value ("16", "0.01", "64-1", "euclidean", "kl") on top of
// the base config.
ExperimentConfig apply_axis(const ExperimentConfig &base, GridAxis axis,
                            const std::string &value);

struct GridCell {
    std::string value;
    ExperimentSummary summary;
};

// One experiment per value, same seed in every cell; a diverged cell is
// recorded and the grid continues. Writes grid_results.csv plus one
// subdirectory per cell.
std::vector<GridCell> run_grid(const ExperimentConfig &base, GridAxis axis,
                               const std::vector<std::string> &values,
                               const std::string &out_dir);

} // namespace lpr
