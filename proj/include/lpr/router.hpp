#pragma once

#include <vector>

#include "lpr/matrix.hpp"
#include "lpr/metrics.hpp"
#include "lpr/rng.hpp"

namespace lpr {

// ---- encoder -----------------------------------------------------------------

enum class EncoderMode { Deterministic, Variational };
enum class EncodePass { Train, Eval }; // Train samples z; Eval routes on the mean

// Token encoder into the routing latent space: z = SiLU(RMSNorm(x)) W + b.
// The deterministic projection (w1, b1) produces a point latent; the
// variational head produces the posterior (mean, log-variance) instead.
struct EncoderParams {
    Matrix w1, b1; // d_model x d_latent, 1 x d_latent
    Matrix mu_w, mu_b, logvar_w, logvar_b;
    EncoderMode mode = EncoderMode::Variational;

    int d_model() const { return mode == EncoderMode::Variational ? mu_w.rows() : w1.rows(); }
    int d_latent() const { return mode == EncoderMode::Variational ? mu_w.cols() : w1.cols(); }
};

EncoderParams make_encoder(RngState &rng, int d_model, int d_latent, EncoderMode mode,
                           double logvar_bias_init = 0.0);

struct EncoderGrads {
    Matrix w1, b1, mu_w, mu_b, logvar_w, logvar_b;
};

struct EncodeResult {
    Matrix hidden;  // SiLU(RMSNorm(x)), cached for the backward pass
    Matrix mean;    // B x d_latent
    Matrix log_var; // empty in deterministic mode (point mass)
    Matrix eps;     // noise draw; empty unless variational Train pass
    Matrix z;       // the routed latent
    bool variational = false;
};

EncodeResult encode(const EncoderParams &params, const Matrix &x, RngState &rng, EncodePass pass);

// Chains gradients w.r.t. the encoder outputs (posterior mean/log-variance
// and/or the routed latent z) into the parameter gradients. Null inputs are
// treated as zero.
void encoder_backward(const EncoderParams &params, const EncodeResult &res, const Matrix *d_mean,
                      const Matrix *d_log_var, const Matrix *d_z, EncoderGrads &grads);

// ---- prototypes ----------------------------------------------------------------

struct ExpertPrototypes {
    Matrix means;    // M x d_latent
    Matrix log_vars; // M x d_latent
    bool unit_ball = true;

    int count() const { return means.rows(); }
    int dim() const { return means.cols(); }
};

enum class PrototypeInit { Hyperspherical, Gaussian, Orthogonal };

// Rows drawn i.i.d. Gaussian then l2-normalized onto the unit sphere.
ExpertPrototypes hyperspherical_init(RngState &rng, int experts, int d_latent);
ExpertPrototypes prototype_init(RngState &rng, int experts, int d_latent, PrototypeInit kind);

// Scales any prototype mean with norm > 1 back onto the unit ball.
void project_unit_ball(ExpertPrototypes &protos);

GaussianBatch prototype_batch(const ExpertPrototypes &protos);

// ---- routing --------------------------------------------------------------------

struct RoutingDecision {
    std::vector<int> topk_idx; // B*k, row-major
    Matrix topk_w;             // B x k, renormalized over the selected set
    Matrix probs;              // B x M
    Matrix scores;             // B x M
    int k = 0;

    int tokens() const { return probs.rows(); }
    int experts() const { return probs.cols(); }
    int idx(int t, int j) const { return topk_idx[static_cast<std::size_t>(t) * k + j]; }
};

// Top-k over a precomputed score matrix; ties break toward the lower expert
// index. Weights are the softmax probabilities renormalized over the winners.
RoutingDecision decision_from_scores(const Matrix &scores, int k);

// Token view the metric consumes: the posterior mean for point metrics, the
// full posterior for distributional ones (which require a variational
// encoder). Routing never depends on the latent sample, so training-time and
// inference-time decisions agree.
GaussianBatch routing_tokens(const EncodeResult &latents, const MetricKind &kind);

RoutingDecision route(const EncodeResult &latents, const ExpertPrototypes &protos,
                      const MetricKind &kind, int k);

// Baseline router: scores = x K^T over raw expert keys, no encoder.
RoutingDecision vanilla_route(const Matrix &x, const Matrix &expert_keys, int k);

// dL/d(probs) from dL/d(topk_w) with the selection treated as constant.
// With k = 1 the renormalized weight is identically 1 and carries no
// gradient; the unnormalized gate probability's gradient is used instead so
// top-1 routing still trains.
Matrix topk_weight_backward(const RoutingDecision &dec, const Matrix &d_topk_w);

// ---- regularization losses ---------------------------------------------------------

// Mean over tokens of KL(N(mean, var) || N(0, I)). Point-mass latents are a
// contract violation.
double kl_loss(const EncodeResult &latents);

enum class DiversityKind { Orthogonal, Cosine, Euclidean };
enum class DiversityTarget { Prototypes, Tokens, Both };

// Orthogonal: |G G^T - I|_F^2 on row-normalized targets. Cosine: mean pairwise
// cosine clamped below at 0. Euclidean: mean exp(-pairwise squared distance).
double diversity_loss(const Matrix &target, DiversityKind kind);

// d(loss)/d(target) scaled by `scale`, accumulated into d_target.
void diversity_loss_backward(const Matrix &target, DiversityKind kind, double scale,
                             Matrix &d_target);

// Mean over tokens of |stopgrad(z) - probs K_mean|^2.
double alignment_loss(const Matrix &z, const Matrix &probs, const ExpertPrototypes &protos);

// ---- EMA prototype adaptation ---------------------------------------------------

enum class EmaMode { Hard, Soft };

// mean_e <- lambda mean_e + (1-lambda) E[z over B_e]. Hard assigns tokens whose
// top-k set contains e (experts with no tokens are untouched); soft weights all
// tokens by their routing probabilities. Applies the unit-ball projection
// afterwards when enabled.
void ema_update(ExpertPrototypes &protos, const Matrix &z, const RoutingDecision &dec,
                double lambda, EmaMode mode);

// ---- combined losses & gradients -----------------------------------------------

struct LprLosses {
    double kl = 0.0;
    double diversity = 0.0;
    double alignment = 0.0;
    double total_reg = 0.0;
};

struct LprRouter {
    EncoderParams enc;
    ExpertPrototypes protos;
};

struct RouterGrads {
    EncoderGrads enc;
    Matrix proto_means;
    Matrix proto_log_vars;
};

RouterGrads make_router_grads(const LprRouter &router);

struct LprConfig {
    MetricKind metric;
    DiversityKind div_kind = DiversityKind::Orthogonal;
    DiversityTarget div_target = DiversityTarget::Prototypes;
    double beta_rs = 0.01;
    double beta_div = 1.0;
    double beta_align = 0.05;
    double beta_kl = 0.01;
};

// Applies dL/d(scores) through the metric. Token-side gradients continue
// through the encoder; prototype-side gradients land on the prototype
// parameters. Either side can be disabled (the alignment loss stops the token
// side entirely).
void scores_backward(const LprRouter &router, const EncodeResult &enc, const MetricKind &kind,
                     const Matrix &d_scores, bool token_side, bool proto_side, RouterGrads &grads);

// Regularizer values plus analytic gradients, reusing a forward pass's
// latents and routing probabilities. Gradients accumulate into `grads` scaled
// by beta_rs * beta_i; a zero scale contributes exactly nothing.
LprLosses lpr_reg_losses_and_grads(const LprRouter &router, const EncodeResult &enc,
                                   const Matrix &probs, const LprConfig &cfg, RouterGrads &grads);

// Convenience form running its own encode/score/softmax forward.
LprLosses lpr_losses_and_grads(const LprRouter &router, const Matrix &x, const LprConfig &cfg,
                               RngState &rng, RouterGrads &grads);

} // namespace lpr
