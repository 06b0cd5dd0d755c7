#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpr/matrix.hpp"

namespace lpr {

// Per-token (or per-expert) diagonal Gaussian. Log-variances are clamped to
// [-10, 10] on construction so variances stay in [e^-10, e^10].
struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> log_var;

    DiagGaussian() = default;
    DiagGaussian(std::vector<double> m, std::vector<double> lv);

    int dim() const { return static_cast<int>(mean.size()); }
};

constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

inline double clamp_log_var(double v) {
    return std::min(kLogVarMax, std::max(kLogVarMin, v));
}

enum class Metric {
    Cosine,
    GaussianKernel,
    MultiHeadDot,
    Mahalanobis,
    Wasserstein2,
    KL,
    JS,
    Hellinger,
};

// Distributional metrics compare the full token posterior against the expert
// Gaussian; the rest score a point (the routed latent) against prototypes.
bool is_distributional(Metric m);

// Whether the score reads the expert-side log-variances at all. Prototype
// log-variances are trainable exactly when this holds.
bool metric_uses_variance(Metric m);

struct MetricKind {
    Metric kind = Metric::Cosine;
    double sigma = 1.0; // GaussianKernel bandwidth
    int heads = 1;      // MultiHeadDot head count

    void validate(int d_latent) const;
};

std::string metric_name(Metric m);
std::optional<Metric> metric_from_name(const std::string &name);

// ---- geometric similarities -------------------------------------------------

// z . p / (|z| |p|); returns 0 when either norm is below 1e-12.
double cosine_sim(const double *z, const double *p, int n);

// exp(-|z - p|^2 / (2 sigma^2)); sigma must be positive.
double gaussian_kernel_sim(const double *z, const double *p, int n, double sigma);

// Mean over heads of q_h . k_h / sqrt(d_h); heads are contiguous blocks.
double multihead_dot_sim(const double *q, const double *k, int n, int heads);

// Negated Mahalanobis distance under the expert's diagonal variance.
double mahalanobis_sim(const double *z, const DiagGaussian &p);

// ---- distributional divergences ----------------------------------------------

// |mu1 - mu2|^2 + |sigma1 - sigma2|^2 (squared 2-Wasserstein, diagonal case).
double wasserstein2_sq(const DiagGaussian &a, const DiagGaussian &b);

// Closed-form KL(a || b) for diagonal Gaussians.
double kl_div(const DiagGaussian &a, const DiagGaussian &b);

// Gaussian-midpoint JS approximation, per dimension, summed.
double js_div(const DiagGaussian &a, const DiagGaussian &b);

// Hellinger distance via the product of per-dimension Bhattacharyya
// coefficients; lies in [0, 1].
double hellinger(const DiagGaussian &a, const DiagGaussian &b);

// ---- batched scoring ----------------------------------------------------------

// A batch of diagonal Gaussians stored row-wise. For point metrics only the
// means are read.
struct GaussianBatch {
    Matrix mean;    // B x d
    Matrix log_var; // B x d, may be empty for point metrics

    int count() const { return mean.rows(); }
    int dim() const { return mean.cols(); }
};

// Scalar score for one (token, prototype) pair under any metric kind.
// Divergences enter negated so that higher is always more similar.
double metric_score(const MetricKind &kind, const double *tok_mean, const double *tok_lv,
                    const double *pro_mean, const double *pro_lv, int d);

// B x M score matrix; score = similarity, divergences negated.
Matrix score_matrix(const GaussianBatch &tokens, const GaussianBatch &prototypes,
                    const MetricKind &kind);

// Accumulates d(score)/d(inputs) scaled by dscore into any non-null output
// span. Pointers may alias the forward inputs' shape (length d each).
void metric_score_backward(const MetricKind &kind, const double *tok_mean, const double *tok_lv,
                           const double *pro_mean, const double *pro_lv, int d, double dscore,
                           double *d_tok_mean, double *d_tok_lv, double *d_pro_mean,
                           double *d_pro_lv);

} // namespace lpr
