#pragma once

// Shared helpers for the gradient-check suites: parameter flattening and
// independent loss re-evaluations used as finite-difference oracles.

#include <string>
#include <vector>

#include "lpr/moe.hpp"
#include "lpr/numerics.hpp"
#include "lpr/router.hpp"

namespace lpr::testing {

struct ParamView {
    std::string name;
    Matrix *value;
    Matrix *grad;
};

inline std::vector<ParamView> router_param_views(LprRouter &router, RouterGrads &grads,
                                                 bool include_proto_log_vars) {
    std::vector<ParamView> views;
    if (router.enc.mode == EncoderMode::Deterministic) {
        views.push_back({"enc.w1", &router.enc.w1, &grads.enc.w1});
        views.push_back({"enc.b1", &router.enc.b1, &grads.enc.b1});
    } else {
        views.push_back({"enc.mu_w", &router.enc.mu_w, &grads.enc.mu_w});
        views.push_back({"enc.mu_b", &router.enc.mu_b, &grads.enc.mu_b});
        views.push_back({"enc.logvar_w", &router.enc.logvar_w, &grads.enc.logvar_w});
        views.push_back({"enc.logvar_b", &router.enc.logvar_b, &grads.enc.logvar_b});
    }
    views.push_back({"proto.means", &router.protos.means, &grads.proto_means});
    if (include_proto_log_vars)
        views.push_back({"proto.log_vars", &router.protos.log_vars, &grads.proto_log_vars});
    return views;
}

// The regularization objective as the gradient defines it: the stop-gradient
// operands of the alignment term (the token-side latents fed to the metric and
// the reconstruction target z) stay frozen at their base-point values while
// parameters move.
inline double reg_loss_at(const LprRouter &router, const Matrix &x, const LprConfig &cfg,
                          std::uint64_t seed, const GaussianBatch &frozen_tokens,
                          const Matrix &frozen_z) {
    RngState rng(seed);
    const EncodeResult enc = encode(router.enc, x, rng, EncodePass::Train);
    const double kl = enc.variational ? kl_loss(enc) : 0.0;
    double div = 0.0;
    if (cfg.div_target != DiversityTarget::Tokens)
        div += diversity_loss(router.protos.means, cfg.div_kind);
    if (cfg.div_target != DiversityTarget::Prototypes)
        div += diversity_loss(enc.variational ? enc.mean : enc.z, cfg.div_kind);
    const Matrix scores = score_matrix(frozen_tokens, prototype_batch(router.protos), cfg.metric);
    const Matrix probs = softmax_rows(scores);
    double align = 0.0;
    {
        const Matrix agg = matmul(probs, router.protos.means);
        for (std::size_t i = 0; i < agg.size(); ++i) {
            const double r = agg.data()[i] - frozen_z.data()[i];
            align += r * r;
        }
        align /= frozen_z.rows();
    }
    return cfg.beta_rs * (cfg.beta_div * div + cfg.beta_align * align + cfg.beta_kl * kl);
}

// Runs the A2-style check for one configuration: analytic gradients from
// lpr_losses_and_grads against central finite differences of reg_loss_at.
// Returns the worst relative error across all router parameters.
inline double reg_gradcheck_worst_rel_err(LprRouter router, const Matrix &x, const LprConfig &cfg,
                                          std::uint64_t seed, double h = 1e-5) {
    RouterGrads grads = make_router_grads(router);
    RngState rng(seed);
    const LprLosses losses = lpr_losses_and_grads(router, x, cfg, rng, grads);
    (void)losses;

    RngState capture_rng(seed);
    const EncodeResult enc0 = encode(router.enc, x, capture_rng, EncodePass::Train);
    GaussianBatch frozen_tokens = routing_tokens(enc0, cfg.metric);
    const Matrix frozen_z = enc0.z;

    double worst = 0.0;
    auto views = router_param_views(router, grads, metric_uses_variance(cfg.metric.kind));
    for (ParamView &view : views) {
        const Matrix fd = finite_diff_grad(
            [&](const Matrix &probe) {
                const Matrix saved = *view.value;
                *view.value = probe;
                const double val =
                    reg_loss_at(router, x, cfg, seed, frozen_tokens, frozen_z);
                *view.value = saved;
                return val;
            },
            *view.value, h);
        for (std::size_t i = 0; i < fd.size(); ++i)
            worst = std::max(worst, rel_err(fd.data()[i], view.grad->data()[i]));
    }
    return worst;
}

} // namespace lpr::testing
