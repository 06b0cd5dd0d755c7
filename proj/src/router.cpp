#include "lpr/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lpr/numerics.hpp"

namespace lpr {

namespace {

Matrix gaussian_scaled(RngState &rng, int rows, int cols, double scale) {
    Matrix m = sample_gaussian(rng, rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] *= scale;
    return m;
}

} // namespace

// ---- encoder -----------------------------------------------------------------

EncoderParams make_encoder(RngState &rng, int d_model, int d_latent, EncoderMode mode,
                           double logvar_bias_init) {
    if (d_latent > d_model)
        throw ParamError("encoder: d_latent=" + std::to_string(d_latent) +
                         " must not exceed d_model=" + std::to_string(d_model));
    if (d_latent < 1 || d_model < 1)
        throw ParamError("encoder: dims must be positive");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    EncoderParams p;
    p.mode = mode;
    if (mode == EncoderMode::Deterministic) {
        p.w1 = gaussian_scaled(rng, d_model, d_latent, scale);
        p.b1 = Matrix(1, d_latent);
    } else {
        p.mu_w = gaussian_scaled(rng, d_model, d_latent, scale);
        p.mu_b = Matrix(1, d_latent);
        p.logvar_w = gaussian_scaled(rng, d_model, d_latent, scale);
        p.logvar_b = Matrix(1, d_latent, logvar_bias_init);
    }
    return p;
}

EncodeResult encode(const EncoderParams &params, const Matrix &x, RngState &rng,
                    EncodePass pass) {
    if (x.cols() != params.d_model())
        throw ShapeError("encode: tokens " + x.shape() + " vs d_model=" +
                         std::to_string(params.d_model()));
    EncodeResult res;
    res.hidden = apply_silu(rms_norm_rows(x));
    if (params.mode == EncoderMode::Deterministic) {
        res.mean = add_bias_rows(matmul(res.hidden, params.w1), params.b1);
        res.z = res.mean;
        res.variational = false;
        return res;
    }
    res.variational = true;
    res.mean = add_bias_rows(matmul(res.hidden, params.mu_w), params.mu_b);
    res.log_var = add_bias_rows(matmul(res.hidden, params.logvar_w), params.logvar_b);
    if (pass == EncodePass::Train) {
        res.eps = sample_gaussian(rng, x.rows(), params.d_latent());
        res.z = res.mean;
        for (int t = 0; t < res.z.rows(); ++t) {
            double *zt = res.z.row(t);
            const double *lv = res.log_var.row(t);
            const double *et = res.eps.row(t);
            for (int j = 0; j < res.z.cols(); ++j)
                zt[j] += std::exp(0.5 * lv[j]) * et[j];
        }
    } else {
        res.z = res.mean;
    }
    return res;
}

void encoder_backward(const EncoderParams &params, const EncodeResult &res, const Matrix *d_mean,
                      const Matrix *d_log_var, const Matrix *d_z, EncoderGrads &grads) {
    auto accumulate = [&](const Matrix &dout, Matrix &gw, Matrix &gb) {
        Matrix dw = matmul_tn(res.hidden, dout);
        if (gw.empty()) gw = Matrix(dw.rows(), dw.cols());
        for (std::size_t i = 0; i < dw.size(); ++i) gw.data()[i] += dw.data()[i];
        Matrix db = colsum(dout);
        if (gb.empty()) gb = Matrix(1, db.cols());
        for (std::size_t i = 0; i < db.size(); ++i) gb.data()[i] += db.data()[i];
    };

    if (params.mode == EncoderMode::Deterministic) {
        if (d_mean == nullptr && d_z == nullptr) return;
        Matrix dout(res.mean.rows(), res.mean.cols());
        if (d_mean)
            for (std::size_t i = 0; i < dout.size(); ++i) dout.data()[i] += d_mean->data()[i];
        if (d_z)
            for (std::size_t i = 0; i < dout.size(); ++i) dout.data()[i] += d_z->data()[i];
        accumulate(dout, grads.w1, grads.b1);
        return;
    }

    Matrix dmu(res.mean.rows(), res.mean.cols());
    Matrix dlv(res.mean.rows(), res.mean.cols());
    if (d_mean)
        for (std::size_t i = 0; i < dmu.size(); ++i) dmu.data()[i] += d_mean->data()[i];
    if (d_log_var)
        for (std::size_t i = 0; i < dlv.size(); ++i) dlv.data()[i] += d_log_var->data()[i];
    if (d_z) {
        // z = mean + exp(log_var/2) * eps; in Eval passes eps is empty and z == mean.
        for (std::size_t i = 0; i < dmu.size(); ++i) dmu.data()[i] += d_z->data()[i];
        if (!res.eps.empty()) {
            for (std::size_t i = 0; i < dlv.size(); ++i)
                dlv.data()[i] += d_z->data()[i] * 0.5 *
                                 std::exp(0.5 * res.log_var.data()[i]) * res.eps.data()[i];
        }
    }
    accumulate(dmu, grads.mu_w, grads.mu_b);
    accumulate(dlv, grads.logvar_w, grads.logvar_b);
}

// ---- prototypes ----------------------------------------------------------------

ExpertPrototypes hyperspherical_init(RngState &rng, int experts, int d_latent) {
    if (experts < 1 || d_latent < 1)
        throw ParamError("hyperspherical_init: experts and d_latent must be positive");
    ExpertPrototypes p;
    p.means = sample_gaussian(rng, experts, d_latent);
    for (int e = 0; e < experts; ++e) {
        double *row = p.means.row(e);
        double n = l2_norm(row, d_latent);
        while (n < 1e-12) { // astronomically unlikely, but keep the contract exact
            for (int j = 0; j < d_latent; ++j) row[j] = rng.gaussian();
            n = l2_norm(row, d_latent);
        }
        for (int j = 0; j < d_latent; ++j) row[j] /= n;
    }
    p.log_vars = Matrix(experts, d_latent);
    return p;
}

ExpertPrototypes prototype_init(RngState &rng, int experts, int d_latent, PrototypeInit kind) {
    if (kind == PrototypeInit::Hyperspherical) return hyperspherical_init(rng, experts, d_latent);
    if (kind == PrototypeInit::Gaussian) {
        ExpertPrototypes p;
        p.means = sample_gaussian(rng, experts, d_latent);
        p.log_vars = Matrix(experts, d_latent);
        return p;
    }
    // Orthogonal: Gram-Schmidt within blocks of d_latent rows.
    ExpertPrototypes p = hyperspherical_init(rng, experts, d_latent);
    for (int e = 0; e < experts; ++e) {
        double *row = p.means.row(e);
        const int block_start = (e / d_latent) * d_latent;
        for (int prev = block_start; prev < e; ++prev) {
            const double proj = dot(row, p.means.row(prev), d_latent);
            const double *pr = p.means.row(prev);
            for (int j = 0; j < d_latent; ++j) row[j] -= proj * pr[j];
        }
        double n = l2_norm(row, d_latent);
        while (n < 1e-9) {
            for (int j = 0; j < d_latent; ++j) row[j] = rng.gaussian();
            for (int prev = block_start; prev < e; ++prev) {
                const double proj = dot(row, p.means.row(prev), d_latent);
                const double *pr = p.means.row(prev);
                for (int j = 0; j < d_latent; ++j) row[j] -= proj * pr[j];
            }
            n = l2_norm(row, d_latent);
        }
        for (int j = 0; j < d_latent; ++j) row[j] /= n;
    }
    return p;
}

void project_unit_ball(ExpertPrototypes &protos) {
    for (int e = 0; e < protos.count(); ++e) {
        double *row = protos.means.row(e);
        const double n = l2_norm(row, protos.dim());
        if (n > 1.0)
            for (int j = 0; j < protos.dim(); ++j) row[j] /= n;
    }
}

GaussianBatch prototype_batch(const ExpertPrototypes &protos) {
    return GaussianBatch{protos.means, protos.log_vars};
}

// ---- routing --------------------------------------------------------------------

RoutingDecision decision_from_scores(const Matrix &scores, int k) {
    const int experts = scores.cols();
    if (k < 1 || k > experts)
        throw ParamError("route: k=" + std::to_string(k) + " must be in [1, " +
                         std::to_string(experts) + "]");
    RoutingDecision dec;
    dec.k = k;
    dec.scores = scores;
    dec.probs = softmax_rows(scores);
    const int b = scores.rows();
    dec.topk_idx.assign(static_cast<std::size_t>(b) * k, 0);
    dec.topk_w = Matrix(b, k);
    std::vector<int> order(experts);
#pragma omp parallel for schedule(static) firstprivate(order) if (b > 1)
    for (int t = 0; t < b; ++t) {
        const double *pt = dec.probs.row(t);
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [pt](int a, int c) {
                              if (pt[a] != pt[c]) return pt[a] > pt[c];
                              return a < c; // ties break toward the lower index
                          });
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += pt[order[j]];
        double *wt = dec.topk_w.row(t);
        for (int j = 0; j < k; ++j) {
            dec.topk_idx[static_cast<std::size_t>(t) * k + j] = order[j];
            wt[j] = pt[order[j]] / denom;
        }
    }
    return dec;
}

GaussianBatch routing_tokens(const EncodeResult &latents, const MetricKind &kind) {
    if (is_distributional(kind.kind)) {
        if (!latents.variational)
            throw ParamError("routing: " + metric_name(kind.kind) +
                             " requires a variational encoder");
        return GaussianBatch{latents.mean, latents.log_var};
    }
    // Point metrics score the posterior mean, keeping training-time and
    // inference-time routing identical; the sampled latent feeds the
    // alignment loss instead.
    return GaussianBatch{latents.mean, Matrix()};
}

RoutingDecision route(const EncodeResult &latents, const ExpertPrototypes &protos,
                      const MetricKind &kind, int k) {
    const Matrix scores = score_matrix(routing_tokens(latents, kind), prototype_batch(protos), kind);
    return decision_from_scores(scores, k);
}

RoutingDecision vanilla_route(const Matrix &x, const Matrix &expert_keys, int k) {
    if (x.cols() != expert_keys.cols())
        throw ShapeError("vanilla_route: tokens " + x.shape() + " vs keys " +
                         expert_keys.shape());
    return decision_from_scores(matmul_nt(x, expert_keys), k);
}

Matrix topk_weight_backward(const RoutingDecision &dec, const Matrix &d_topk_w) {
    if (d_topk_w.rows() != dec.tokens() || d_topk_w.cols() != dec.k)
        throw ShapeError("topk_weight_backward: " + d_topk_w.shape() + " vs topk " +
                         dec.topk_w.shape());
    Matrix dp(dec.tokens(), dec.experts());
    const int k = dec.k;
#pragma omp parallel for schedule(static) if (dec.tokens() > 1)
    for (int t = 0; t < dec.tokens(); ++t) {
        const double *pt = dec.probs.row(t);
        const double *wt = dec.topk_w.row(t);
        const double *dw = d_topk_w.row(t);
        double *dpt = dp.row(t);
        if (k == 1) {
            // Renormalized top-1 weight is constant; use the gate probability's
            // gradient so the router still receives a training signal.
            dpt[dec.idx(t, 0)] += dw[0];
            continue;
        }
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += pt[dec.idx(t, j)];
        double wsum = 0.0;
        for (int j = 0; j < k; ++j) wsum += dw[j] * wt[j];
        for (int j = 0; j < k; ++j)
            dpt[dec.idx(t, j)] += (dw[j] - wsum) / denom;
    }
    return dp;
}

// ---- regularization losses ---------------------------------------------------------

double kl_loss(const EncodeResult &latents) {
    if (!latents.variational)
        throw ParamError("kl_loss: undefined for point-mass (deterministic) latents");
    const int b = latents.mean.rows();
    const int d = latents.mean.cols();
    double acc = 0.0;
    for (int t = 0; t < b; ++t) {
        const double *mu = latents.mean.row(t);
        const double *lv = latents.log_var.row(t);
        for (int j = 0; j < d; ++j)
            acc += 0.5 * (mu[j] * mu[j] + std::exp(lv[j]) - lv[j] - 1.0);
    }
    return acc / b;
}

namespace {

// Row-normalized copy plus the norms; rows below 1e-12 become zero rows.
Matrix normalize_rows(const Matrix &m, std::vector<double> &norms) {
    Matrix g = m;
    norms.assign(m.rows(), 0.0);
    for (int i = 0; i < m.rows(); ++i) {
        const double n = l2_norm(m.row(i), m.cols());
        norms[i] = n;
        double *gi = g.row(i);
        if (n < 1e-12) {
            for (int j = 0; j < m.cols(); ++j) gi[j] = 0.0;
        } else {
            for (int j = 0; j < m.cols(); ++j) gi[j] /= n;
        }
    }
    return g;
}

} // namespace

double diversity_loss(const Matrix &target, DiversityKind kind) {
    const int n = target.rows();
    if (n < 2) return 0.0;
    switch (kind) {
    case DiversityKind::Orthogonal: {
        std::vector<double> norms;
        const Matrix g = normalize_rows(target, norms);
        const Matrix gram = matmul_nt(g, g);
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double c = gram(i, j) - (i == j ? 1.0 : 0.0);
                acc += c * c;
            }
        return acc;
    }
    case DiversityKind::Cosine: {
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                acc += std::max(0.0, cosine_sim(target.row(i), target.row(j), target.cols()));
        return 2.0 * acc / (static_cast<double>(n) * (n - 1));
    }
    case DiversityKind::Euclidean: {
        double acc = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                double q = 0.0;
                const double *a = target.row(i);
                const double *b = target.row(j);
                for (int c = 0; c < target.cols(); ++c) {
                    const double d = a[c] - b[c];
                    q += d * d;
                }
                acc += std::exp(-q);
            }
        return 2.0 * acc / (static_cast<double>(n) * (n - 1));
    }
    }
    throw ParamError("diversity_loss: unknown kind");
}

void diversity_loss_backward(const Matrix &target, DiversityKind kind, double scale,
                             Matrix &d_target) {
    const int n = target.rows();
    const int d = target.cols();
    if (n < 2 || scale == 0.0) return;
    if (d_target.empty()) d_target = Matrix(n, d);
    switch (kind) {
    case DiversityKind::Orthogonal: {
        std::vector<double> norms;
        const Matrix g = normalize_rows(target, norms);
        Matrix gram = matmul_nt(g, g);
        for (int i = 0; i < n; ++i) gram(i, i) -= 1.0;
        // d|C|^2/dG = 4 C G, then back through the row normalization.
        const Matrix dg = matmul(gram, g);
        for (int i = 0; i < n; ++i) {
            if (norms[i] < 1e-12) continue;
            const double *gi = g.row(i);
            const double *dgi = dg.row(i);
            const double inner = dot(dgi, gi, d);
            double *out = d_target.row(i);
            for (int j = 0; j < d; ++j)
                out[j] += scale * 4.0 * (dgi[j] - inner * gi[j]) / norms[i];
        }
        return;
    }
    case DiversityKind::Cosine: {
        const double w = scale * 2.0 / (static_cast<double>(n) * (n - 1));
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double *a = target.row(i);
                const double *b = target.row(j);
                const double na = l2_norm(a, d);
                const double nb = l2_norm(b, d);
                if (na < 1e-12 || nb < 1e-12) continue;
                const double c = dot(a, b, d) / (na * nb);
                if (c <= 0.0) continue;
                double *da = d_target.row(i);
                double *db = d_target.row(j);
                for (int q = 0; q < d; ++q) {
                    da[q] += w * (b[q] / (na * nb) - c * a[q] / (na * na));
                    db[q] += w * (a[q] / (na * nb) - c * b[q] / (nb * nb));
                }
            }
        return;
    }
    case DiversityKind::Euclidean: {
        const double w = scale * 2.0 / (static_cast<double>(n) * (n - 1));
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                const double *a = target.row(i);
                const double *b = target.row(j);
                double q = 0.0;
                for (int c = 0; c < d; ++c) {
                    const double diff = a[c] - b[c];
                    q += diff * diff;
                }
                const double e = std::exp(-q);
                double *da = d_target.row(i);
                double *db = d_target.row(j);
                for (int c = 0; c < d; ++c) {
                    const double diff = a[c] - b[c];
                    da[c] += w * (-2.0 * e * diff);
                    db[c] += w * (2.0 * e * diff);
                }
            }
        return;
    }
    }
    throw ParamError("diversity_loss_backward: unknown kind");
}

double alignment_loss(const Matrix &z, const Matrix &probs, const ExpertPrototypes &protos) {
    if (probs.rows() != z.rows() || probs.cols() != protos.count() || z.cols() != protos.dim())
        throw ShapeError("alignment_loss: z " + z.shape() + ", probs " + probs.shape() +
                         ", prototypes " + protos.means.shape());
    const Matrix agg = matmul(probs, protos.means);
    double acc = 0.0;
    for (std::size_t i = 0; i < agg.size(); ++i) {
        const double r = agg.data()[i] - z.data()[i];
        acc += r * r;
    }
    return acc / z.rows();
}

// ---- EMA ---------------------------------------------------------------------------

void ema_update(ExpertPrototypes &protos, const Matrix &z, const RoutingDecision &dec,
                double lambda, EmaMode mode) {
    if (lambda < 0.0 || lambda > 1.0)
        throw ParamError("ema_update: lambda=" + std::to_string(lambda) + " outside [0, 1]");
    if (z.rows() != dec.tokens() || z.cols() != protos.dim())
        throw ShapeError("ema_update: latents " + z.shape() + " vs prototypes " +
                         protos.means.shape());
    const int m = protos.count();
    const int d = protos.dim();
    if (mode == EmaMode::Hard) {
        Matrix sums(m, d);
        std::vector<double> counts(m, 0.0);
        for (int t = 0; t < dec.tokens(); ++t)
            for (int j = 0; j < dec.k; ++j) {
                const int e = dec.idx(t, j);
                counts[e] += 1.0;
                double *se = sums.row(e);
                const double *zt = z.row(t);
                for (int c = 0; c < d; ++c) se[c] += zt[c];
            }
        for (int e = 0; e < m; ++e) {
            if (counts[e] == 0.0) continue; // unassigned experts stay put
            double *me = protos.means.row(e);
            const double *se = sums.row(e);
            for (int c = 0; c < d; ++c)
                me[c] = lambda * me[c] + (1.0 - lambda) * se[c] / counts[e];
        }
    } else {
        const Matrix weighted = matmul_tn(dec.probs, z); // M x d
        const Matrix mass = colsum(dec.probs);           // 1 x M
        for (int e = 0; e < m; ++e) {
            if (mass(0, e) < 1e-30) continue;
            double *me = protos.means.row(e);
            const double *we = weighted.row(e);
            for (int c = 0; c < d; ++c)
                me[c] = lambda * me[c] + (1.0 - lambda) * we[c] / mass(0, e);
        }
    }
    if (protos.unit_ball) project_unit_ball(protos);
}

// ---- combined losses & gradients -----------------------------------------------

RouterGrads make_router_grads(const LprRouter &router) {
    RouterGrads g;
    if (router.enc.mode == EncoderMode::Deterministic) {
        g.enc.w1 = zeros_like(router.enc.w1);
        g.enc.b1 = zeros_like(router.enc.b1);
    } else {
        g.enc.mu_w = zeros_like(router.enc.mu_w);
        g.enc.mu_b = zeros_like(router.enc.mu_b);
        g.enc.logvar_w = zeros_like(router.enc.logvar_w);
        g.enc.logvar_b = zeros_like(router.enc.logvar_b);
    }
    g.proto_means = zeros_like(router.protos.means);
    g.proto_log_vars = zeros_like(router.protos.log_vars);
    return g;
}

void scores_backward(const LprRouter &router, const EncodeResult &enc, const MetricKind &kind,
                     const Matrix &d_scores, bool token_side, bool proto_side,
                     RouterGrads &grads) {
    const GaussianBatch tokens = routing_tokens(enc, kind);
    const GaussianBatch protos = prototype_batch(router.protos);
    const int b = tokens.count();
    const int m = protos.count();
    const int d = tokens.dim();
    const bool distributional = is_distributional(kind.kind);
    const bool proto_var = metric_uses_variance(kind.kind);

    if (token_side) {
        Matrix d_tok_mean(b, d);
        Matrix d_tok_lv = distributional ? Matrix(b, d) : Matrix();
        // Each token row is owned by one iteration, so this pass is race-free.
#pragma omp parallel for schedule(static) if (b > 1)
        for (int t = 0; t < b; ++t) {
            const double *tm = tokens.mean.row(t);
            const double *tv = tokens.log_var.empty() ? nullptr : tokens.log_var.row(t);
            for (int e = 0; e < m; ++e) {
                const double g = d_scores(t, e);
                if (g == 0.0) continue;
                metric_score_backward(kind, tm, tv, protos.mean.row(e),
                                      protos.log_var.empty() ? nullptr : protos.log_var.row(e), d,
                                      g, d_tok_mean.row(t),
                                      distributional ? d_tok_lv.row(t) : nullptr, nullptr,
                                      nullptr);
            }
        }
        if (distributional)
            encoder_backward(router.enc, enc, &d_tok_mean, &d_tok_lv, nullptr, grads.enc);
        else
            encoder_backward(router.enc, enc, &d_tok_mean, nullptr, nullptr, grads.enc);
    }

    if (proto_side) {
        // Second masked pass, parallel over experts for the same reason.
#pragma omp parallel for schedule(static) if (m > 1)
        for (int e = 0; e < m; ++e) {
            const double *pm = protos.mean.row(e);
            const double *pv = protos.log_var.empty() ? nullptr : protos.log_var.row(e);
            for (int t = 0; t < b; ++t) {
                const double g = d_scores(t, e);
                if (g == 0.0) continue;
                metric_score_backward(kind, tokens.mean.row(t),
                                      tokens.log_var.empty() ? nullptr : tokens.log_var.row(t), pm,
                                      pv, d, g, nullptr, nullptr, grads.proto_means.row(e),
                                      proto_var ? grads.proto_log_vars.row(e) : nullptr);
            }
        }
    }
}

LprLosses lpr_reg_losses_and_grads(const LprRouter &router, const EncodeResult &enc,
                                   const Matrix &probs, const LprConfig &cfg,
                                   RouterGrads &grads) {
    LprLosses losses;

    // KL toward the standard Gaussian prior; absent for point-mass encoders.
    if (enc.variational) {
        losses.kl = kl_loss(enc);
        const double s = cfg.beta_rs * cfg.beta_kl;
        if (s != 0.0) {
            const int b = enc.mean.rows();
            Matrix dmu = enc.mean;
            for (std::size_t i = 0; i < dmu.size(); ++i) dmu.data()[i] *= s / b;
            Matrix dlv(enc.log_var.rows(), enc.log_var.cols());
            for (std::size_t i = 0; i < dlv.size(); ++i)
                dlv.data()[i] = s * 0.5 * (std::exp(enc.log_var.data()[i]) - 1.0) / b;
            encoder_backward(router.enc, enc, &dmu, &dlv, nullptr, grads.enc);
        }
    }

    // Diversity on the configured target(s).
    {
        const bool on_protos = cfg.div_target != DiversityTarget::Tokens;
        const bool on_tokens = cfg.div_target != DiversityTarget::Prototypes;
        const double s = cfg.beta_rs * cfg.beta_div;
        if (on_protos) {
            losses.diversity += diversity_loss(router.protos.means, cfg.div_kind);
            if (s != 0.0)
                diversity_loss_backward(router.protos.means, cfg.div_kind, s, grads.proto_means);
        }
        if (on_tokens) {
            // The routed representation is the posterior mean; spreading it is
            // what keeps the token cloud from collapsing in routing space.
            const Matrix &tokens = enc.variational ? enc.mean : enc.z;
            losses.diversity += diversity_loss(tokens, cfg.div_kind);
            if (s != 0.0) {
                Matrix dt(tokens.rows(), tokens.cols());
                diversity_loss_backward(tokens, cfg.div_kind, s, dt);
                if (enc.variational)
                    encoder_backward(router.enc, enc, &dt, nullptr, nullptr, grads.enc);
                else
                    encoder_backward(router.enc, enc, nullptr, nullptr, &dt, grads.enc);
            }
        }
    }

    // Alignment: detached latents reconstructed from softly aggregated
    // prototypes. Gradients reach only the prototype side, through both the
    // aggregation and the routing probabilities.
    losses.alignment = alignment_loss(enc.z, probs, router.protos);
    {
        const double s = cfg.beta_rs * cfg.beta_align;
        if (s != 0.0) {
            const int b = enc.z.rows();
            Matrix agg = matmul(probs, router.protos.means);
            Matrix da(agg.rows(), agg.cols());
            for (std::size_t i = 0; i < da.size(); ++i)
                da.data()[i] = s * 2.0 * (agg.data()[i] - enc.z.data()[i]) / b;
            Matrix dk = matmul_tn(probs, da);
            for (std::size_t i = 0; i < dk.size(); ++i)
                grads.proto_means.data()[i] += dk.data()[i];
            const Matrix dp = matmul_nt(da, router.protos.means);
            const Matrix ds = softmax_rows_backward(probs, dp);
            scores_backward(router, enc, cfg.metric, ds, /*token_side=*/false,
                            /*proto_side=*/true, grads);
        }
    }

    losses.total_reg = cfg.beta_rs * (cfg.beta_div * losses.diversity +
                                      cfg.beta_align * losses.alignment +
                                      cfg.beta_kl * losses.kl);
    return losses;
}

LprLosses lpr_losses_and_grads(const LprRouter &router, const Matrix &x, const LprConfig &cfg,
                               RngState &rng, RouterGrads &grads) {
    const EncodeResult enc = encode(router.enc, x, rng, EncodePass::Train);
    const Matrix scores =
        score_matrix(routing_tokens(enc, cfg.metric), prototype_batch(router.protos), cfg.metric);
    const Matrix probs = softmax_rows(scores);
    return lpr_reg_losses_and_grads(router, enc, probs, cfg, grads);
}

} // namespace lpr
