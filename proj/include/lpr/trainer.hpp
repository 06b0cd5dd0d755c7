#pragma once

#include <functional>
#include <vector>

#include "lpr/balance.hpp"
#include "lpr/config.hpp"
#include "lpr/moe.hpp"
#include "lpr/router.hpp"

namespace lpr {

// View of one trainable tensor and its gradient buffer. Weight decay skips
// tensors with decay = false (biases and prototype log-variances).
struct ParamRef {
    Matrix *value;
    Matrix *grad;
    bool decay;
};

struct AdamWState {
    std::vector<Matrix> m, v;
    long step = 0;
};

AdamWState make_adamw_state(const std::vector<ParamRef> &params);

// Scales all gradients to global norm <= max_norm; returns the pre-clip norm.
double clip_global_norm(const std::vector<ParamRef> &params, double max_norm);

// One AdamW update with decoupled weight decay. Throws TrainError (with the
// step index) when a gradient is non-finite.
void adamw_step(std::vector<ParamRef> &params, AdamWState &state, const AdamWConfig &cfg,
                double lr);

// L_task + beta_rs (beta_div L_div + beta_align L_align + beta_kl L_KL).
double total_loss(double task, const LprLosses &reg, const LprConfig &cfg);

struct RunRecord {
    int step = 0;
    double task_loss = 0.0;
    double kl = 0.0;
    double diversity = 0.0;
    double alignment = 0.0;
    double total = 0.0;
    double gini_hard = 0.0;    // training-batch loads, single MoE layer
    double min_max_hard = 0.0;
    double lr = 0.0;
};

struct EvalPoint {
    int step = 0;
    double test_loss = 0.0;
    double gini_hard = 0.0;
    double gini_soft = 0.0;
    double min_max_hard = 0.0;
    double min_max_soft = 0.0;
    LoadVector loads_hard;
    LoadVector loads_soft;
};

struct TrainHooks {
    std::function<void(const RunRecord &)> on_step;
    std::function<void(const EvalPoint &)> on_eval;
    // Skips the regularizer gradient paths while still logging their values;
    // exists so tests can pin the beta_rs = 0 equivalence exactly.
    bool skip_reg_gradients = false;
};

// The trained model, exposed for tests and post-run inspection.
struct MoEModel {
    RouterKind kind = RouterKind::Lpr;
    LprRouter router;
    Matrix vanilla_keys; // M x d_model when kind != Lpr
    std::vector<ExpertNet> experts;
};

struct TrainOutcome {
    bool diverged = false;
    int diverged_step = -1;
    std::string diagnostic;
    std::vector<RunRecord> records;
    std::vector<EvalPoint> evals; // always starts with the step-0 snapshot
    MoEModel model;

    const EvalPoint &final_eval() const { return evals.back(); }
};

// Deterministic given the config (including the seed): same config, bit
// identical outcome. Evaluation routes on posterior means, never on samples.
TrainOutcome train(const ExperimentConfig &cfg, const TrainHooks &hooks = {});

} // namespace lpr
