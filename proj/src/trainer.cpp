#include "lpr/trainer.hpp"

#include <cmath>

#include "lpr/numerics.hpp"

namespace lpr {

namespace {
constexpr double kPi = 3.14159265358979323846;
// Initial posterior log-variance: starts the routing noise well below the
// latent signal so train-time and eval-time routing agree from early on.
constexpr double kEncoderLogVarBias = -4.0;
} // namespace

void LrSchedule::validate() const {
    for (double f : {warmup_frac, stable_frac, decay_frac})
        if (f < 0.0 || f > 1.0)
            throw ParamError("schedule: phase fractions must lie in [0, 1]");
    const double sum = warmup_frac + stable_frac + decay_frac;
    if (std::abs(sum - 1.0) > 1e-6)
        throw ParamError("schedule: phase fractions sum to " + std::to_string(sum) +
                         ", expected 1");
    if (base_lr <= 0.0) throw ParamError("schedule: base_lr must be positive");
    if (min_lr_ratio < 0.0 || min_lr_ratio > 1.0)
        throw ParamError("schedule: min_lr_ratio must lie in [0, 1]");
    if (total_steps < 0) throw ParamError("schedule: total_steps must be non-negative");
}

double lr_at(const LrSchedule &s, int step) {
    if (step < 0 || step > s.total_steps)
        throw ParamError("lr_at: step " + std::to_string(step) + " outside [0, " +
                         std::to_string(s.total_steps) + "]");
    const int warmup = static_cast<int>(std::lround(s.warmup_frac * s.total_steps));
    const int decay = static_cast<int>(std::lround(s.decay_frac * s.total_steps));
    const int decay_start = s.total_steps - decay;
    const double min_lr = s.base_lr * s.min_lr_ratio;
    if (step < warmup)
        return s.base_lr * static_cast<double>(step) / warmup;
    if (step <= decay_start || decay == 0)
        return s.base_lr;
    const double u = static_cast<double>(step - decay_start) / decay;
    return min_lr + (s.base_lr - min_lr) * 0.5 * (1.0 + std::cos(kPi * u));
}

AdamWState make_adamw_state(const std::vector<ParamRef> &params) {
    AdamWState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const ParamRef &p : params) {
        st.m.push_back(zeros_like(*p.value));
        st.v.push_back(zeros_like(*p.value));
    }
    return st;
}

double clip_global_norm(const std::vector<ParamRef> &params, double max_norm) {
    double sq = 0.0;
    for (const ParamRef &p : params)
        sq += frobenius_sq(*p.grad);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (const ParamRef &p : params)
            for (std::size_t i = 0; i < p.grad->size(); ++i) p.grad->data()[i] *= scale;
    }
    return norm;
}

void adamw_step(std::vector<ParamRef> &params, AdamWState &state, const AdamWConfig &cfg,
                double lr) {
    const long t = state.step + 1;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i].grad->all_finite())
            throw TrainError("non-finite gradient at step " + std::to_string(t));
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix &w = *params[i].value;
        Matrix &g = *params[i].grad;
        Matrix &m = state.m[i];
        Matrix &v = state.v[i];
        const double decay_mult =
            params[i].decay ? 1.0 - lr * cfg.weight_decay : 1.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.data()[j];
            m.data()[j] = cfg.beta1 * m.data()[j] + (1.0 - cfg.beta1) * gj;
            v.data()[j] = cfg.beta2 * v.data()[j] + (1.0 - cfg.beta2) * gj * gj;
            const double mhat = m.data()[j] / bc1;
            const double vhat = v.data()[j] / bc2;
            w.data()[j] = decay_mult * w.data()[j] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
    state.step = t;
}

double total_loss(double task, const LprLosses &reg, const LprConfig &cfg) {
    return task + cfg.beta_rs * (cfg.beta_div * reg.diversity + cfg.beta_align * reg.alignment +
                                 cfg.beta_kl * reg.kl);
}

namespace {

struct TrainState {
    MoEModel model;
    RouterGrads router_grads;
    Matrix vanilla_key_grads;
    std::vector<ExpertGrads> expert_grads;
    std::vector<ParamRef> params;
    AdamWState opt;
};

std::vector<ParamRef> collect_params(TrainState &ts, const ExperimentConfig &cfg) {
    std::vector<ParamRef> refs;
    if (ts.model.kind == RouterKind::Lpr) {
        EncoderParams &e = ts.model.router.enc;
        EncoderGrads &ge = ts.router_grads.enc;
        if (e.mode == EncoderMode::Deterministic) {
            refs.push_back({&e.w1, &ge.w1, true});
            refs.push_back({&e.b1, &ge.b1, false});
        } else {
            refs.push_back({&e.mu_w, &ge.mu_w, true});
            refs.push_back({&e.mu_b, &ge.mu_b, false});
            refs.push_back({&e.logvar_w, &ge.logvar_w, true});
            refs.push_back({&e.logvar_b, &ge.logvar_b, false});
        }
        refs.push_back({&ts.model.router.protos.means, &ts.router_grads.proto_means, true});
        if (metric_uses_variance(cfg.metric.kind))
            refs.push_back(
                {&ts.model.router.protos.log_vars, &ts.router_grads.proto_log_vars, false});
    } else {
        refs.push_back({&ts.model.vanilla_keys, &ts.vanilla_key_grads, true});
    }
    for (std::size_t e = 0; e < ts.model.experts.size(); ++e) {
        refs.push_back({&ts.model.experts[e].w_in, &ts.expert_grads[e].w_in, true});
        refs.push_back({&ts.model.experts[e].b_in, &ts.expert_grads[e].b_in, false});
        refs.push_back({&ts.model.experts[e].w_out, &ts.expert_grads[e].w_out, true});
        refs.push_back({&ts.model.experts[e].b_out, &ts.expert_grads[e].b_out, false});
    }
    return refs;
}

void zero_grads(std::vector<ParamRef> &params) {
    for (ParamRef &p : params) p.grad->fill(0.0);
}

void clamp_prototype_log_vars(ExpertPrototypes &protos) {
    for (std::size_t i = 0; i < protos.log_vars.size(); ++i)
        protos.log_vars.data()[i] = clamp_log_var(protos.log_vars.data()[i]);
}

RoutingDecision forward_decision(const MoEModel &model, const ExperimentConfig &cfg,
                                 const EncodeResult *enc, const Matrix &x) {
    if (model.kind == RouterKind::Lpr)
        return route(*enc, model.router.protos, cfg.metric, cfg.top_k);
    return vanilla_route(x, model.vanilla_keys, cfg.top_k);
}

EvalPoint evaluate(const MoEModel &model, const ExperimentConfig &cfg, const Batch &eval_batch,
                   int step) {
    EvalPoint ev;
    ev.step = step;
    RngState unused(0); // Eval pass never samples
    RoutingDecision dec;
    if (model.kind == RouterKind::Lpr) {
        const EncodeResult enc = encode(model.router.enc, eval_batch.x, unused, EncodePass::Eval);
        dec = route(enc, model.router.protos, cfg.metric, cfg.top_k);
    } else {
        dec = vanilla_route(eval_batch.x, model.vanilla_keys, cfg.top_k);
    }
    const MoEOutput out = moe_forward(model.experts, dec, eval_batch.x, eval_batch.targets);
    ev.test_loss = out.task_loss;
    accumulate_loads(ev.loads_hard, dec, LoadMode::HardCount);
    accumulate_loads(ev.loads_soft, dec, LoadMode::SoftProb);
    ev.gini_hard = gini(ev.loads_hard);
    ev.gini_soft = gini(ev.loads_soft);
    ev.min_max_hard = min_max_ratio(ev.loads_hard);
    ev.min_max_soft = min_max_ratio(ev.loads_soft);
    return ev;
}

} // namespace

TrainOutcome train(const ExperimentConfig &cfg, const TrainHooks &hooks) {
    cfg.validate();
    LrSchedule schedule = cfg.schedule;
    schedule.total_steps = cfg.steps;

    RngState corpus_rng(sub_seed(cfg.seed, 1));
    RngState init_rng(sub_seed(cfg.seed, 2));
    RngState batch_rng(sub_seed(cfg.seed, 3));
    RngState noise_rng(sub_seed(cfg.seed, 4));
    RngState eval_rng(sub_seed(cfg.seed, 5));

    const SyntheticCorpusSpec corpus =
        make_corpus(corpus_rng, cfg.corpus.clusters, cfg.d_model, cfg.corpus.zipf_s,
                    cfg.corpus.noise_std, cfg.corpus.mean_scale, cfg.corpus.target_scale,
                    cfg.corpus.anisotropy, cfg.corpus.target_rank);
    const Batch eval_batch = generate_batch(corpus, eval_rng, cfg.eval_tokens);

    TrainState ts;
    ts.model.kind = cfg.router;
    ts.model.experts = init_experts(init_rng, cfg.experts, cfg.d_model, cfg.d_ff);
    if (cfg.router == RouterKind::Lpr) {
        ts.model.router.enc = make_encoder(init_rng, cfg.d_model, cfg.d_latent, cfg.encoder, kEncoderLogVarBias);
        ts.model.router.protos = prototype_init(init_rng, cfg.experts, cfg.d_latent, cfg.init);
        ts.model.router.protos.unit_ball = cfg.unit_ball;
        ts.router_grads = make_router_grads(ts.model.router);
    } else {
        // Raw unit-variance keys: the baseline carries the full score-variance
        // growth with dimension, exactly the regime the diagnostic measures.
        ts.model.vanilla_keys = sample_gaussian(init_rng, cfg.experts, cfg.d_model);
        ts.vanilla_key_grads = zeros_like(ts.model.vanilla_keys);
    }
    ts.expert_grads = make_expert_grads(ts.model.experts);
    ts.params = collect_params(ts, cfg);
    ts.opt = make_adamw_state(ts.params);

    const LprConfig lpr_cfg = cfg.lpr_config();

    TrainOutcome outcome;
    outcome.evals.push_back(evaluate(ts.model, cfg, eval_batch, 0));
    if (hooks.on_eval) hooks.on_eval(outcome.evals.back());

    for (int step = 1; step <= cfg.steps; ++step) {
        const Batch batch = generate_batch(corpus, batch_rng, cfg.batch_size);
        zero_grads(ts.params);

        EncodeResult enc;
        if (cfg.router == RouterKind::Lpr)
            enc = encode(ts.model.router.enc, batch.x, noise_rng, EncodePass::Train);
        RoutingDecision dec = forward_decision(ts.model, cfg, &enc, batch.x);
        const MoEOutput out = moe_forward(ts.model.experts, dec, batch.x, batch.targets);

        // Task-loss path: experts, then the gating weights back to the scores.
        const Matrix d_topk = moe_backward(ts.model.experts, dec, batch.x, batch.targets, out,
                                           ts.expert_grads);
        Matrix dp = topk_weight_backward(dec, d_topk);
        double aux = 0.0;
        if (cfg.router == RouterKind::VanillaAux) {
            aux = aux_balance_loss(dec);
            const Matrix dp_aux = aux_balance_loss_backward(dec, cfg.aux_coef);
            for (std::size_t i = 0; i < dp.size(); ++i) dp.data()[i] += dp_aux.data()[i];
        }
        const Matrix ds = softmax_rows_backward(dec.probs, dp);
        LprLosses reg;
        if (cfg.router == RouterKind::Lpr) {
            scores_backward(ts.model.router, enc, cfg.metric, ds, /*token_side=*/true,
                            /*proto_side=*/true, ts.router_grads);
            if (hooks.skip_reg_gradients) {
                LprConfig off = lpr_cfg;
                off.beta_rs = 0.0;
                reg = lpr_reg_losses_and_grads(ts.model.router, enc, dec.probs, off,
                                               ts.router_grads);
                reg.total_reg = 0.0;
            } else {
                reg = lpr_reg_losses_and_grads(ts.model.router, enc, dec.probs, lpr_cfg,
                                               ts.router_grads);
            }
        } else {
            const Matrix dkeys = matmul_tn(ds, batch.x);
            for (std::size_t i = 0; i < dkeys.size(); ++i)
                ts.vanilla_key_grads.data()[i] += dkeys.data()[i];
        }

        const double total = total_loss(out.task_loss, reg, lpr_cfg) +
                             (cfg.router == RouterKind::VanillaAux ? cfg.aux_coef * aux : 0.0);

        RunRecord rec;
        rec.step = step;
        rec.task_loss = out.task_loss;
        rec.kl = reg.kl;
        rec.diversity = reg.diversity;
        rec.alignment = reg.alignment;
        rec.total = total;
        rec.lr = lr_at(schedule, step);
        LoadVector batch_loads;
        accumulate_loads(batch_loads, dec, LoadMode::HardCount);
        rec.gini_hard = gini(batch_loads);
        rec.min_max_hard = min_max_ratio(batch_loads);

        if (!std::isfinite(total)) {
            outcome.diverged = true;
            outcome.diverged_step = step;
            outcome.diagnostic = "non-finite loss at step " + std::to_string(step);
            outcome.records.push_back(rec);
            if (hooks.on_step) hooks.on_step(rec);
            break;
        }

        try {
            clip_global_norm(ts.params, cfg.optimizer.clip_norm);
            adamw_step(ts.params, ts.opt, cfg.optimizer, rec.lr);
        } catch (const TrainError &err) {
            outcome.diverged = true;
            outcome.diverged_step = step;
            outcome.diagnostic = err.what();
            outcome.records.push_back(rec);
            if (hooks.on_step) hooks.on_step(rec);
            break;
        }

        if (cfg.router == RouterKind::Lpr) {
            if (cfg.unit_ball) project_unit_ball(ts.model.router.protos);
            clamp_prototype_log_vars(ts.model.router.protos);
            if (cfg.ema.enabled)
                ema_update(ts.model.router.protos, enc.z, dec, cfg.ema.lambda, cfg.ema.mode);
        }

        outcome.records.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);

        if (step % cfg.eval_every == 0 || step == cfg.steps) {
            outcome.evals.push_back(evaluate(ts.model, cfg, eval_batch, step));
            if (hooks.on_eval) hooks.on_eval(outcome.evals.back());
        }
    }

    outcome.model = std::move(ts.model);
    return outcome;
}

} // namespace lpr
