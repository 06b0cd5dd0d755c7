#include "lpr/moe.hpp"

#include <cmath>

#include "lpr/numerics.hpp"

namespace lpr {

std::vector<ExpertNet> init_experts(RngState &rng, int experts, int d_model, int d_ff) {
    if (experts < 1 || d_model < 1 || d_ff < 1)
        throw ParamError("init_experts: dims must be positive");
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    const double out_scale = 1.0 / std::sqrt(static_cast<double>(d_ff));
    std::vector<ExpertNet> nets(experts);
    for (auto &net : nets) {
        net.w_in = sample_gaussian(rng, d_model, d_ff);
        for (std::size_t i = 0; i < net.w_in.size(); ++i) net.w_in.data()[i] *= in_scale;
        net.b_in = Matrix(1, d_ff);
        net.w_out = sample_gaussian(rng, d_ff, d_model);
        for (std::size_t i = 0; i < net.w_out.size(); ++i) net.w_out.data()[i] *= out_scale;
        net.b_out = Matrix(1, d_model);
    }
    return nets;
}

std::vector<ExpertGrads> make_expert_grads(const std::vector<ExpertNet> &experts) {
    std::vector<ExpertGrads> grads(experts.size());
    for (std::size_t e = 0; e < experts.size(); ++e) {
        grads[e].w_in = zeros_like(experts[e].w_in);
        grads[e].b_in = zeros_like(experts[e].b_in);
        grads[e].w_out = zeros_like(experts[e].w_out);
        grads[e].b_out = zeros_like(experts[e].b_out);
    }
    return grads;
}

std::vector<double> zipf_weights(int n, double s) {
    if (n < 1) throw ParamError("zipf_weights: n must be positive");
    if (s < 0.0) throw ParamError("zipf_weights: exponent must be non-negative");
    std::vector<double> w(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        w[i] = std::pow(static_cast<double>(i + 1), -s);
        total += w[i];
    }
    for (double &v : w) v /= total;
    return w;
}

SyntheticCorpusSpec make_corpus(RngState &rng, int n_clusters, int d_model, double zipf_s,
                                double noise_std, double mean_scale, double target_scale,
                                double anisotropy, int target_rank) {
    if (noise_std < 0.0) throw ParamError("make_corpus: noise_std must be non-negative");
    if (anisotropy < 0.0 || anisotropy >= 1.0)
        throw ParamError("make_corpus: anisotropy must lie in [0, 1)");
    SyntheticCorpusSpec spec;
    spec.n_clusters = n_clusters;
    spec.d_model = d_model;
    spec.mixing_weights = zipf_weights(n_clusters, zipf_s);
    spec.noise_std = noise_std;
    spec.cluster_means = sample_gaussian(rng, n_clusters, d_model);
    for (std::size_t i = 0; i < spec.cluster_means.size(); ++i)
        spec.cluster_means.data()[i] *= mean_scale;
    if (anisotropy > 0.0) {
        // Blend every mean toward one shared unit direction, preserving the
        // expected squared norm.
        Matrix axis = sample_gaussian(rng, 1, d_model);
        const double norm = l2_norm(axis.row(0), d_model);
        for (int j = 0; j < d_model; ++j) axis(0, j) /= norm;
        const double residual = std::sqrt(1.0 - anisotropy * anisotropy);
        const double shared = anisotropy * std::sqrt(static_cast<double>(d_model));
        for (int c = 0; c < n_clusters; ++c) {
            const double coeff = rng.gaussian();
            double *row = spec.cluster_means.row(c);
            for (int j = 0; j < d_model; ++j)
                row[j] = residual * row[j] + mean_scale * shared * coeff * axis(0, j);
        }
    }
    if (target_rank < 0 || target_rank > d_model)
        throw ParamError("make_corpus: target_rank must lie in [0, d_model]");
    spec.target_maps.reserve(n_clusters);
    if (target_rank == 0 || target_rank == d_model) {
        const double map_scale = target_scale / std::sqrt(static_cast<double>(d_model));
        for (int c = 0; c < n_clusters; ++c) {
            Matrix map = sample_gaussian(rng, d_model, d_model);
            for (std::size_t i = 0; i < map.size(); ++i) map.data()[i] *= map_scale;
            spec.target_maps.push_back(std::move(map));
        }
    } else {
        // A = L R / sqrt(r), scaled to match the full-rank map's output variance.
        const double map_scale = target_scale / std::sqrt(static_cast<double>(d_model));
        for (int c = 0; c < n_clusters; ++c) {
            const Matrix left = sample_gaussian(rng, d_model, target_rank);
            const Matrix right = sample_gaussian(rng, target_rank, d_model);
            Matrix map = matmul(left, right);
            const double scale = map_scale / std::sqrt(static_cast<double>(target_rank));
            for (std::size_t i = 0; i < map.size(); ++i) map.data()[i] *= scale;
            spec.target_maps.push_back(std::move(map));
        }
    }
    return spec;
}

Batch generate_batch(const SyntheticCorpusSpec &spec, RngState &rng, int batch) {
    if (batch < 1) throw ParamError("generate_batch: batch must be positive");
    Batch out;
    out.x = Matrix(batch, spec.d_model);
    out.cluster.resize(batch);
    for (int t = 0; t < batch; ++t) {
        const int c = rng.categorical(spec.mixing_weights);
        out.cluster[t] = c;
        double *xt = out.x.row(t);
        const double *mean = spec.cluster_means.row(c);
        for (int j = 0; j < spec.d_model; ++j)
            xt[j] = mean[j] + spec.noise_std * rng.gaussian();
    }
    out.targets = Matrix(batch, spec.d_model);
    for (int t = 0; t < batch; ++t) {
        const Matrix &map = spec.target_maps[out.cluster[t]];
        const double *xt = out.x.row(t);
        double *yt = out.targets.row(t);
        for (int j = 0; j < spec.d_model; ++j) {
            double acc = 0.0;
            for (int i = 0; i < spec.d_model; ++i) acc += xt[i] * map(i, j);
            yt[j] = acc;
        }
    }
    return out;
}

MoEOutput moe_forward(const std::vector<ExpertNet> &experts, const RoutingDecision &dec,
                      const Matrix &x, const Matrix &targets) {
    const int b = x.rows();
    const int d_model = x.cols();
    if (static_cast<int>(experts.size()) != dec.experts())
        throw ShapeError("moe_forward: " + std::to_string(experts.size()) + " experts vs " +
                         std::to_string(dec.experts()) + " routed");
    if (b != dec.tokens())
        throw ShapeError("moe_forward: tokens " + x.shape() + " vs decision for " +
                         std::to_string(dec.tokens()));
    if (!targets.empty() && !targets.same_shape(x))
        throw ShapeError("moe_forward: targets " + targets.shape() + " vs tokens " + x.shape());
    const int d_ff = experts[0].w_in.cols();
    const int k = dec.k;

    MoEOutput out;
    out.y = Matrix(b, d_model);
    out.hidden_pre = Matrix(b * k, d_ff);
    out.expert_out = Matrix(b * k, d_model);

#pragma omp parallel for schedule(static) if (b > 1)
    for (int t = 0; t < b; ++t) {
        const double *xt = x.row(t);
        double *yt = out.y.row(t);
        for (int j = 0; j < k; ++j) {
            const ExpertNet &net = experts[dec.idx(t, j)];
            double *pre = out.hidden_pre.row(t * k + j);
            for (int h = 0; h < d_ff; ++h) {
                double acc = net.b_in(0, h);
                for (int i = 0; i < d_model; ++i) acc += xt[i] * net.w_in(i, h);
                pre[h] = acc;
            }
            double *eo = out.expert_out.row(t * k + j);
            for (int o = 0; o < d_model; ++o) {
                double acc = net.b_out(0, o);
                for (int h = 0; h < d_ff; ++h) acc += silu(pre[h]) * net.w_out(h, o);
                eo[o] = acc;
            }
            const double w = dec.topk_w(t, j);
            for (int o = 0; o < d_model; ++o) yt[o] += w * eo[o];
        }
    }

    if (!targets.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < out.y.size(); ++i) {
            const double r = out.y.data()[i] - targets.data()[i];
            acc += r * r;
        }
        out.task_loss = acc / static_cast<double>(out.y.size());
    }
    return out;
}

Matrix moe_backward(const std::vector<ExpertNet> &experts, const RoutingDecision &dec,
                    const Matrix &x, const Matrix &targets, const MoEOutput &out,
                    std::vector<ExpertGrads> &grads) {
    const int b = x.rows();
    const int d_model = x.cols();
    const int d_ff = experts[0].w_in.cols();
    const int k = dec.k;

    // dL/dy of the mean-squared error.
    Matrix dy(b, d_model);
    const double inv = 2.0 / static_cast<double>(out.y.size());
    for (std::size_t i = 0; i < dy.size(); ++i)
        dy.data()[i] = inv * (out.y.data()[i] - targets.data()[i]);

    Matrix d_topk_w(b, k);
#pragma omp parallel for schedule(static) if (b > 1)
    for (int t = 0; t < b; ++t)
        for (int j = 0; j < k; ++j)
            d_topk_w(t, j) = dot(dy.row(t), out.expert_out.row(t * k + j), d_model);

    // Per-expert slot lists in ascending token order keep the accumulation
    // order fixed whatever the thread count.
    std::vector<std::vector<int>> slots(experts.size());
    for (int t = 0; t < b; ++t)
        for (int j = 0; j < k; ++j) slots[dec.idx(t, j)].push_back(t * k + j);

#pragma omp parallel for schedule(dynamic) if (experts.size() > 1)
    for (std::size_t e = 0; e < experts.size(); ++e) {
        const ExpertNet &net = experts[e];
        ExpertGrads &g = grads[e];
        std::vector<double> dpre(d_ff);
        for (int slot : slots[e]) {
            const int t = slot / k;
            const int j = slot % k;
            const double w = dec.topk_w(t, j);
            const double *dyt = dy.row(t);
            const double *pre = out.hidden_pre.row(slot);
            const double *xt = x.row(t);
            // dL/d(expert output) = w * dy
            for (int o = 0; o < d_model; ++o) g.b_out(0, o) += w * dyt[o];
            for (int h = 0; h < d_ff; ++h) {
                const double act = silu(pre[h]);
                double acc = 0.0;
                for (int o = 0; o < d_model; ++o) {
                    g.w_out(h, o) += w * act * dyt[o];
                    acc += net.w_out(h, o) * dyt[o];
                }
                dpre[h] = w * acc * silu_prime(pre[h]);
            }
            for (int h = 0; h < d_ff; ++h) g.b_in(0, h) += dpre[h];
            for (int i = 0; i < d_model; ++i) {
                const double xi = xt[i];
                if (xi == 0.0) continue;
                for (int h = 0; h < d_ff; ++h) g.w_in(i, h) += xi * dpre[h];
            }
        }
    }
    return d_topk_w;
}

double aux_balance_loss(const RoutingDecision &dec) {
    const int m = dec.experts();
    const int b = dec.tokens();
    std::vector<double> frac(m, 0.0);
    for (int t = 0; t < b; ++t)
        for (int j = 0; j < dec.k; ++j) frac[dec.idx(t, j)] += 1.0;
    const double slot_total = static_cast<double>(b) * dec.k;
    double acc = 0.0;
    for (int e = 0; e < m; ++e) {
        double mean_p = 0.0;
        for (int t = 0; t < b; ++t) mean_p += dec.probs(t, e);
        acc += (frac[e] / slot_total) * (mean_p / b);
    }
    return m * acc;
}

Matrix aux_balance_loss_backward(const RoutingDecision &dec, double scale) {
    const int m = dec.experts();
    const int b = dec.tokens();
    std::vector<double> frac(m, 0.0);
    for (int t = 0; t < b; ++t)
        for (int j = 0; j < dec.k; ++j) frac[dec.idx(t, j)] += 1.0;
    const double slot_total = static_cast<double>(b) * dec.k;
    Matrix dp(b, m);
    for (int e = 0; e < m; ++e) {
        const double g = scale * m * (frac[e] / slot_total) / b;
        for (int t = 0; t < b; ++t) dp(t, e) = g;
    }
    return dp;
}

} // namespace lpr
