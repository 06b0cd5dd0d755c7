#pragma once

#include <vector>

#include "lpr/matrix.hpp"
#include "lpr/rng.hpp"
#include "lpr/router.hpp"

namespace lpr {

// One expert: a two-layer feed-forward net with SiLU hidden activation.
struct ExpertNet {
    Matrix w_in;  // d_model x d_ff
    Matrix b_in;  // 1 x d_ff
    Matrix w_out; // d_ff x d_model
    Matrix b_out; // 1 x d_model
};

struct ExpertGrads {
    Matrix w_in, b_in, w_out, b_out;
};

std::vector<ExpertNet> init_experts(RngState &rng, int experts, int d_model, int d_ff);
std::vector<ExpertGrads> make_expert_grads(const std::vector<ExpertNet> &experts);

// Skewed-cluster synthetic corpus: tokens drawn from Zipf-weighted Gaussian
// clusters, regression targets from per-cluster linear maps.
struct SyntheticCorpusSpec {
    int n_clusters = 16;
    int d_model = 32;
    Matrix cluster_means;              // n_clusters x d_model
    std::vector<double> mixing_weights; // sums to 1, Zipf with exponent s
    double noise_std = 0.3;
    std::vector<Matrix> target_maps;   // per-cluster d_model x d_model
};

// Normalized c^-s weights for ranks 1..n (s = 0 gives the uniform vector).
std::vector<double> zipf_weights(int n, double s);

// anisotropy in [0, 1) concentrates that fraction of the cluster-mean variance
// along one shared direction, giving the corpus a dominant subspace.
// target_rank limits the rank of the per-cluster linear maps (0 = full rank).
SyntheticCorpusSpec make_corpus(RngState &rng, int n_clusters, int d_model, double zipf_s,
                                double noise_std, double mean_scale, double target_scale,
                                double anisotropy = 0.0, int target_rank = 0);

struct Batch {
    Matrix x;                 // B x d_model
    Matrix targets;           // B x d_model
    std::vector<int> cluster; // diagnostics
};

Batch generate_batch(const SyntheticCorpusSpec &spec, RngState &rng, int batch);

// Routed forward pass: y_t = sum over selected experts of w * E(x_t), plus the
// mean-squared-error task loss against the targets. Hidden pre-activations are
// cached for the backward pass.
struct MoEOutput {
    Matrix y; // B x d_model
    double task_loss = 0.0;
    Matrix hidden_pre;  // (B*k) x d_ff, row t*k+j belongs to slot j of token t
    Matrix expert_out;  // (B*k) x d_model
};

MoEOutput moe_forward(const std::vector<ExpertNet> &experts, const RoutingDecision &dec,
                      const Matrix &x, const Matrix &targets);

// Backward of the task loss. Accumulates expert parameter gradients (selected
// experts only) and returns dL/d(topk_w) for the router path.
Matrix moe_backward(const std::vector<ExpertNet> &experts, const RoutingDecision &dec,
                    const Matrix &x, const Matrix &targets, const MoEOutput &out,
                    std::vector<ExpertGrads> &grads);

// Switch-style balance penalty M * sum_e f_e * pbar_e, where f_e is the
// fraction of (token, slot) assignments landing on e and pbar_e the mean
// routing probability. Equals 1 at perfect balance, M at total collapse.
double aux_balance_loss(const RoutingDecision &dec);

// dL/d(probs) of the penalty, with the assignment fractions treated as
// constants, scaled by `scale`.
Matrix aux_balance_loss_backward(const RoutingDecision &dec, double scale);

} // namespace lpr
