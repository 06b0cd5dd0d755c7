#include "lpr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "lpr/numerics.hpp"

namespace lpr {

namespace {

constexpr double kDegenerateNorm = 1e-12;

inline double var_of(double log_var) { return std::exp(clamp_log_var(log_var)); }
inline double sigma_of(double log_var) { return std::exp(0.5 * clamp_log_var(log_var)); }
// Clamping freezes the variance outside [-10, 10], so its derivative gates to 0 there.
inline double clamp_gate(double log_var) {
    return (log_var > kLogVarMin && log_var < kLogVarMax) ? 1.0 : 0.0;
}

} // namespace

DiagGaussian::DiagGaussian(std::vector<double> m, std::vector<double> lv)
    : mean(std::move(m)), log_var(std::move(lv)) {
    if (mean.size() != log_var.size())
        throw ShapeError("DiagGaussian: mean has " + std::to_string(mean.size()) +
                         " dims, log_var has " + std::to_string(log_var.size()));
    for (double &v : log_var) v = clamp_log_var(v);
}

bool is_distributional(Metric m) {
    switch (m) {
    case Metric::Wasserstein2:
    case Metric::KL:
    case Metric::JS:
    case Metric::Hellinger:
        return true;
    default:
        return false;
    }
}

bool metric_uses_variance(Metric m) {
    return is_distributional(m) || m == Metric::Mahalanobis;
}

void MetricKind::validate(int d_latent) const {
    if (kind == Metric::GaussianKernel && sigma <= 0.0)
        throw ParamError("gaussian_kernel: sigma must be positive, got " + std::to_string(sigma));
    if (kind == Metric::MultiHeadDot) {
        if (heads < 1 || d_latent % heads != 0)
            throw ParamError("multihead_dot: heads=" + std::to_string(heads) +
                             " must divide d_latent=" + std::to_string(d_latent));
    }
}

std::string metric_name(Metric m) {
    switch (m) {
    case Metric::Cosine: return "cosine";
    case Metric::GaussianKernel: return "gaussian_kernel";
    case Metric::MultiHeadDot: return "multihead_dot";
    case Metric::Mahalanobis: return "mahalanobis";
    case Metric::Wasserstein2: return "wasserstein2";
    case Metric::KL: return "kl";
    case Metric::JS: return "js";
    case Metric::Hellinger: return "hellinger";
    }
    return "?";
}

std::optional<Metric> metric_from_name(const std::string &name) {
    for (Metric m : {Metric::Cosine, Metric::GaussianKernel, Metric::MultiHeadDot,
                     Metric::Mahalanobis, Metric::Wasserstein2, Metric::KL, Metric::JS,
                     Metric::Hellinger})
        if (metric_name(m) == name) return m;
    return std::nullopt;
}

double cosine_sim(const double *z, const double *p, int n) {
    const double nz = l2_norm(z, n);
    const double np = l2_norm(p, n);
    if (nz < kDegenerateNorm || np < kDegenerateNorm) return 0.0;
    return dot(z, p, n) / (nz * np);
}

double gaussian_kernel_sim(const double *z, const double *p, int n, double sigma) {
    if (sigma <= 0.0)
        throw ParamError("gaussian_kernel: sigma must be positive, got " + std::to_string(sigma));
    double q = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = z[i] - p[i];
        q += d * d;
    }
    return std::exp(-q / (2.0 * sigma * sigma));
}

double multihead_dot_sim(const double *q, const double *k, int n, int heads) {
    if (heads < 1 || n % heads != 0)
        throw ParamError("multihead_dot: heads=" + std::to_string(heads) +
                         " must divide d=" + std::to_string(n));
    const int dh = n / heads;
    const double inv = 1.0 / (heads * std::sqrt(static_cast<double>(dh)));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += q[i] * k[i];
    return acc * inv;
}

double mahalanobis_sim(const double *z, const DiagGaussian &p) {
    double q = 0.0;
    for (int i = 0; i < p.dim(); ++i) {
        const double d = z[i] - p.mean[i];
        q += d * d / var_of(p.log_var[i]);
    }
    return -std::sqrt(q);
}

double wasserstein2_sq(const DiagGaussian &a, const DiagGaussian &b) {
    if (a.dim() != b.dim())
        throw ShapeError("wasserstein2_sq: dim " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    double acc = 0.0;
    for (int i = 0; i < a.dim(); ++i) {
        const double dm = a.mean[i] - b.mean[i];
        const double ds = sigma_of(a.log_var[i]) - sigma_of(b.log_var[i]);
        acc += dm * dm + ds * ds;
    }
    return acc;
}

double kl_div(const DiagGaussian &a, const DiagGaussian &b) {
    if (a.dim() != b.dim())
        throw ShapeError("kl_div: dim " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    double acc = 0.0;
    for (int i = 0; i < a.dim(); ++i) {
        const double v1 = clamp_log_var(a.log_var[i]);
        const double v2 = clamp_log_var(b.log_var[i]);
        const double s1 = std::exp(v1);
        const double s2 = std::exp(v2);
        const double dm = a.mean[i] - b.mean[i];
        acc += 0.5 * (v2 - v1 + (s1 + dm * dm) / s2 - 1.0);
    }
    return acc;
}

double js_div(const DiagGaussian &a, const DiagGaussian &b) {
    if (a.dim() != b.dim())
        throw ShapeError("js_div: dim " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    double acc = 0.0;
    for (int i = 0; i < a.dim(); ++i) {
        const double s1 = var_of(a.log_var[i]);
        const double s2 = var_of(b.log_var[i]);
        const double m0 = 0.5 * (a.mean[i] + b.mean[i]);
        const double s0 = 0.5 * (s1 + s2);
        const double d1 = a.mean[i] - m0;
        const double d2 = b.mean[i] - m0;
        acc += 0.25 * (std::log((s1 + s2) * (s1 + s2) / (4.0 * s1 * s2)) +
                       (s1 + d1 * d1) / s0 + (s2 + d2 * d2) / s0 - 2.0);
    }
    return acc;
}

namespace detail {

// log of the per-dimension Bhattacharyya coefficient, written so identical
// inputs cancel exactly: log BC = -log(cosh((v1-v2)/2))/2 - (m1-m2)^2/(4T).
inline double log_bhattacharyya(double m1, double v1, double m2, double v2) {
    v1 = clamp_log_var(v1);
    v2 = clamp_log_var(v2);
    const double t = std::exp(v1) + std::exp(v2);
    const double dm = m1 - m2;
    return -0.5 * std::log(std::cosh(0.5 * (v1 - v2))) - 0.25 * dm * dm / t;
}

} // namespace detail

double hellinger(const DiagGaussian &a, const DiagGaussian &b) {
    if (a.dim() != b.dim())
        throw ShapeError("hellinger: dim " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    double log_bc = 0.0;
    for (int i = 0; i < a.dim(); ++i)
        log_bc += detail::log_bhattacharyya(a.mean[i], a.log_var[i], b.mean[i], b.log_var[i]);
    return std::sqrt(std::max(0.0, -std::expm1(log_bc)));
}

double metric_score(const MetricKind &kind, const double *tok_mean, const double *tok_lv,
                    const double *pro_mean, const double *pro_lv, int d) {
    switch (kind.kind) {
    case Metric::Cosine:
        return cosine_sim(tok_mean, pro_mean, d);
    case Metric::GaussianKernel:
        return gaussian_kernel_sim(tok_mean, pro_mean, d, kind.sigma);
    case Metric::MultiHeadDot:
        return multihead_dot_sim(tok_mean, pro_mean, d, kind.heads);
    case Metric::Mahalanobis: {
        double q = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dm = tok_mean[i] - pro_mean[i];
            q += dm * dm / var_of(pro_lv[i]);
        }
        return -std::sqrt(q);
    }
    case Metric::Wasserstein2: {
        double acc = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dm = tok_mean[i] - pro_mean[i];
            const double ds = sigma_of(tok_lv[i]) - sigma_of(pro_lv[i]);
            acc += dm * dm + ds * ds;
        }
        return -acc;
    }
    case Metric::KL: {
        double acc = 0.0;
        for (int i = 0; i < d; ++i) {
            const double v1 = clamp_log_var(tok_lv[i]);
            const double v2 = clamp_log_var(pro_lv[i]);
            const double dm = tok_mean[i] - pro_mean[i];
            acc += 0.5 * (v2 - v1 + (std::exp(v1) + dm * dm) / std::exp(v2) - 1.0);
        }
        return -acc;
    }
    case Metric::JS: {
        double acc = 0.0;
        for (int i = 0; i < d; ++i) {
            const double s1 = var_of(tok_lv[i]);
            const double s2 = var_of(pro_lv[i]);
            const double t = s1 + s2;
            const double dm = tok_mean[i] - pro_mean[i];
            acc += 0.25 * (std::log(t * t / (4.0 * s1 * s2)) + dm * dm / t);
        }
        return -acc;
    }
    case Metric::Hellinger: {
        double log_bc = 0.0;
        for (int i = 0; i < d; ++i)
            log_bc += detail::log_bhattacharyya(tok_mean[i], tok_lv[i], pro_mean[i], pro_lv[i]);
        return -std::sqrt(std::max(0.0, -std::expm1(log_bc)));
    }
    }
    throw ParamError("metric_score: unknown kind");
}

Matrix score_matrix(const GaussianBatch &tokens, const GaussianBatch &prototypes,
                    const MetricKind &kind) {
    if (tokens.dim() != prototypes.dim())
        throw ShapeError("score_matrix: token dim " + tokens.mean.shape() + " vs prototype dim " +
                         prototypes.mean.shape());
    kind.validate(tokens.dim());
    if (is_distributional(kind.kind) && tokens.log_var.empty())
        throw ParamError("score_matrix: " + metric_name(kind.kind) +
                         " needs token-side variances");
    if (metric_uses_variance(kind.kind) && prototypes.log_var.empty())
        throw ParamError("score_matrix: " + metric_name(kind.kind) +
                         " needs prototype-side variances");
    const int b = tokens.count();
    const int m = prototypes.count();
    const int d = tokens.dim();
    Matrix s(b, m);
#pragma omp parallel for schedule(static) if (b > 1)
    for (int t = 0; t < b; ++t) {
        const double *tm = tokens.mean.row(t);
        const double *tv = tokens.log_var.empty() ? nullptr : tokens.log_var.row(t);
        double *st = s.row(t);
        for (int e = 0; e < m; ++e) {
            const double *pv = prototypes.log_var.empty() ? nullptr : prototypes.log_var.row(e);
            st[e] = metric_score(kind, tm, tv, prototypes.mean.row(e), pv, d);
        }
    }
    return s;
}

void metric_score_backward(const MetricKind &kind, const double *tok_mean, const double *tok_lv,
                           const double *pro_mean, const double *pro_lv, int d, double dscore,
                           double *d_tok_mean, double *d_tok_lv, double *d_pro_mean,
                           double *d_pro_lv) {
    switch (kind.kind) {
    case Metric::Cosine: {
        const double nz = l2_norm(tok_mean, d);
        const double np = l2_norm(pro_mean, d);
        if (nz < kDegenerateNorm || np < kDegenerateNorm) return;
        const double s = dot(tok_mean, pro_mean, d) / (nz * np);
        const double inv = 1.0 / (nz * np);
        for (int i = 0; i < d; ++i) {
            if (d_tok_mean)
                d_tok_mean[i] += dscore * (pro_mean[i] * inv - s * tok_mean[i] / (nz * nz));
            if (d_pro_mean)
                d_pro_mean[i] += dscore * (tok_mean[i] * inv - s * pro_mean[i] / (np * np));
        }
        return;
    }
    case Metric::GaussianKernel: {
        const double s =
            gaussian_kernel_sim(tok_mean, pro_mean, d, kind.sigma);
        const double c = dscore * s / (kind.sigma * kind.sigma);
        for (int i = 0; i < d; ++i) {
            const double diff = tok_mean[i] - pro_mean[i];
            if (d_tok_mean) d_tok_mean[i] += -c * diff;
            if (d_pro_mean) d_pro_mean[i] += c * diff;
        }
        return;
    }
    case Metric::MultiHeadDot: {
        const int dh = d / kind.heads;
        const double inv = dscore / (kind.heads * std::sqrt(static_cast<double>(dh)));
        for (int i = 0; i < d; ++i) {
            if (d_tok_mean) d_tok_mean[i] += inv * pro_mean[i];
            if (d_pro_mean) d_pro_mean[i] += inv * tok_mean[i];
        }
        return;
    }
    case Metric::Mahalanobis: {
        double q = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dm = tok_mean[i] - pro_mean[i];
            q += dm * dm / var_of(pro_lv[i]);
        }
        const double root = std::sqrt(q);
        if (root < 1e-15) return;
        for (int i = 0; i < d; ++i) {
            const double s2 = var_of(pro_lv[i]);
            const double dm = tok_mean[i] - pro_mean[i];
            const double g = dscore * dm / (s2 * root);
            if (d_tok_mean) d_tok_mean[i] += -g;
            if (d_pro_mean) d_pro_mean[i] += g;
            if (d_pro_lv)
                d_pro_lv[i] += dscore * clamp_gate(pro_lv[i]) * dm * dm / (2.0 * s2 * root);
        }
        return;
    }
    case Metric::Wasserstein2: {
        // score = -W2^2
        for (int i = 0; i < d; ++i) {
            const double dm = tok_mean[i] - pro_mean[i];
            const double s1 = sigma_of(tok_lv[i]);
            const double s2 = sigma_of(pro_lv[i]);
            if (d_tok_mean) d_tok_mean[i] += -dscore * 2.0 * dm;
            if (d_pro_mean) d_pro_mean[i] += dscore * 2.0 * dm;
            if (d_tok_lv) d_tok_lv[i] += -dscore * clamp_gate(tok_lv[i]) * (s1 - s2) * s1;
            if (d_pro_lv) d_pro_lv[i] += dscore * clamp_gate(pro_lv[i]) * (s1 - s2) * s2;
        }
        return;
    }
    case Metric::KL: {
        // score = -KL(token || prototype)
        for (int i = 0; i < d; ++i) {
            const double s1 = var_of(tok_lv[i]);
            const double s2 = var_of(pro_lv[i]);
            const double dm = tok_mean[i] - pro_mean[i];
            if (d_tok_mean) d_tok_mean[i] += -dscore * dm / s2;
            if (d_pro_mean) d_pro_mean[i] += dscore * dm / s2;
            if (d_tok_lv)
                d_tok_lv[i] += -dscore * clamp_gate(tok_lv[i]) * 0.5 * (s1 / s2 - 1.0);
            if (d_pro_lv)
                d_pro_lv[i] +=
                    -dscore * clamp_gate(pro_lv[i]) * 0.5 * (1.0 - (s1 + dm * dm) / s2);
        }
        return;
    }
    case Metric::JS: {
        for (int i = 0; i < d; ++i) {
            const double s1 = var_of(tok_lv[i]);
            const double s2 = var_of(pro_lv[i]);
            const double t = s1 + s2;
            const double dm = tok_mean[i] - pro_mean[i];
            if (d_tok_mean) d_tok_mean[i] += -dscore * dm / (2.0 * t);
            if (d_pro_mean) d_pro_mean[i] += dscore * dm / (2.0 * t);
            const double g1 = 0.25 * (2.0 * s1 / t - 1.0 - dm * dm * s1 / (t * t));
            const double g2 = 0.25 * (2.0 * s2 / t - 1.0 - dm * dm * s2 / (t * t));
            if (d_tok_lv) d_tok_lv[i] += -dscore * clamp_gate(tok_lv[i]) * g1;
            if (d_pro_lv) d_pro_lv[i] += -dscore * clamp_gate(pro_lv[i]) * g2;
        }
        return;
    }
    case Metric::Hellinger: {
        double log_bc = 0.0;
        for (int i = 0; i < d; ++i)
            log_bc += detail::log_bhattacharyya(tok_mean[i], tok_lv[i], pro_mean[i], pro_lv[i]);
        const double bc = std::exp(log_bc);
        const double h = std::sqrt(std::max(0.0, -std::expm1(log_bc)));
        if (h < 1e-12) return;
        // score = -H, H = sqrt(1 - BC)  =>  dscore/dx = dscore * BC/(2H) * dlogBC/dx
        const double c = dscore * bc / (2.0 * h);
        for (int i = 0; i < d; ++i) {
            const double s1 = var_of(tok_lv[i]);
            const double s2 = var_of(pro_lv[i]);
            const double t = s1 + s2;
            const double dm = tok_mean[i] - pro_mean[i];
            if (d_tok_mean) d_tok_mean[i] += c * (-dm / (2.0 * t));
            if (d_pro_mean) d_pro_mean[i] += c * (dm / (2.0 * t));
            const double g1 = 0.25 - 0.5 * s1 / t + 0.25 * dm * dm * s1 / (t * t);
            const double g2 = 0.25 - 0.5 * s2 / t + 0.25 * dm * dm * s2 / (t * t);
            if (d_tok_lv) d_tok_lv[i] += c * clamp_gate(tok_lv[i]) * g1;
            if (d_pro_lv) d_pro_lv[i] += c * clamp_gate(pro_lv[i]) * g2;
        }
        return;
    }
    }
    throw ParamError("metric_score_backward: unknown kind");
}

} // namespace lpr
