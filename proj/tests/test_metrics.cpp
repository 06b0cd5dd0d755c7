#include <doctest.h>

#include <cmath>
#include <vector>

#include "lpr/metrics.hpp"
#include "lpr/numerics.hpp"
#include "lpr/reference.hpp"
#include "lpr/rng.hpp"

using namespace lpr;

namespace {

DiagGaussian random_gaussian(RngState &rng, int d, double var_lo = 0.25, double var_hi = 4.0) {
    std::vector<double> mean(d), lv(d);
    for (int i = 0; i < d; ++i) {
        mean[i] = rng.gaussian();
        const double v = var_lo + (var_hi - var_lo) * rng.uniform01();
        lv[i] = std::log(v);
    }
    return DiagGaussian(std::move(mean), std::move(lv));
}

// Monte-Carlo KL estimate: E_{x~a}[log p_a(x) - log p_b(x)].
double kl_monte_carlo(const DiagGaussian &a, const DiagGaussian &b, RngState &rng, int samples) {
    const int d = a.dim();
    double acc = 0.0;
    for (int s = 0; s < samples; ++s) {
        double log_ratio = 0.0;
        for (int i = 0; i < d; ++i) {
            const double sa = std::exp(0.5 * a.log_var[i]);
            const double x = a.mean[i] + sa * rng.gaussian();
            const double za = (x - a.mean[i]) / sa;
            const double sb = std::exp(0.5 * b.log_var[i]);
            const double zb = (x - b.mean[i]) / sb;
            log_ratio += -0.5 * za * za - 0.5 * a.log_var[i] + 0.5 * zb * zb + 0.5 * b.log_var[i];
        }
        acc += log_ratio;
    }
    return acc / samples;
}

} // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("cosine examples") {
    const double e1[] = {1.0, 0.0};
    const double e2[] = {0.0, 1.0};
    const double diag[] = {1.0, 1.0};
    CHECK(cosine_sim(e1, e1, 2) == doctest::Approx(1.0));
    CHECK(cosine_sim(e1, e2, 2) == doctest::Approx(0.0));
    CHECK(cosine_sim(diag, e1, 2) == doctest::Approx(1.0 / std::sqrt(2.0)));
    const double tiny[] = {1e-13, 0.0};
    CHECK(cosine_sim(tiny, e1, 2) == 0.0);
}

TEST_CASE("gaussian kernel examples") {
    const double z[] = {1.0, 2.0};
    CHECK(gaussian_kernel_sim(z, z, 2, 0.7) == doctest::Approx(1.0));
    // |z-p|^2 = 2 sigma^2 gives exp(-1)
    const double sigma = 1.3;
    const double p[] = {1.0 + sigma * std::sqrt(2.0), 2.0};
    CHECK(gaussian_kernel_sim(z, p, 2, sigma) == doctest::Approx(std::exp(-1.0)));
    CHECK_THROWS_AS(gaussian_kernel_sim(z, p, 2, 0.0), ParamError);
    // monotone decay toward zero
    double prev = 1.0;
    for (double gap = 1.0; gap < 40.0; gap *= 2.0) {
        const double far[] = {1.0 + gap, 2.0};
        const double v = gaussian_kernel_sim(z, far, 2, 1.0);
        CHECK(v < prev);
        CHECK(v > 0.0);
        prev = v;
    }
}

TEST_CASE("multihead dot examples") {
    const double q[] = {1.0, 1.0, 1.0, 1.0};
    CHECK(multihead_dot_sim(q, q, 4, 2) == doctest::Approx(std::sqrt(2.0)));
    // single head degenerates to the scaled dot product
    RngState rng(5);
    std::vector<double> a(6), b(6);
    for (int i = 0; i < 6; ++i) {
        a[i] = rng.gaussian();
        b[i] = rng.gaussian();
    }
    const double expect = dot(a.data(), b.data(), 6) / std::sqrt(6.0);
    CHECK(multihead_dot_sim(a.data(), b.data(), 6, 1) == doctest::Approx(expect));
    const double zero[] = {0, 0, 0, 0};
    CHECK(multihead_dot_sim(zero, q, 4, 2) == 0.0);
    CHECK_THROWS_AS(multihead_dot_sim(q, q, 4, 3), ParamError);
}

TEST_CASE("mahalanobis examples") {
    DiagGaussian p({0.0, 0.0}, {std::log(9.0), std::log(16.0)});
    const double at_mean[] = {0.0, 0.0};
    CHECK(mahalanobis_sim(at_mean, p) == 0.0);
    const double z[] = {3.0, 4.0};
    CHECK(mahalanobis_sim(z, p) == doctest::Approx(-std::sqrt(2.0)));
    // unit variances reduce to negated Euclidean distance
    DiagGaussian unit({0.0, 0.0}, {0.0, 0.0});
    CHECK(mahalanobis_sim(z, unit) == doctest::Approx(-5.0));
}

TEST_CASE("wasserstein2 examples") {
    DiagGaussian a({0.0}, {0.0});
    DiagGaussian b({3.0}, {0.0});
    CHECK(wasserstein2_sq(a, a) == 0.0);
    CHECK(wasserstein2_sq(a, b) == doctest::Approx(9.0));
    CHECK(wasserstein2_sq(a, b) == doctest::Approx(wasserstein2_sq(b, a)));
}

TEST_CASE("kl examples") {
    DiagGaussian std1({0.0}, {0.0});
    DiagGaussian shifted({1.0}, {0.0});
    CHECK(kl_div(std1, std1) == 0.0);
    CHECK(kl_div(std1, shifted) == doctest::Approx(0.5));
    // witness asymmetry
    DiagGaussian wide({0.0}, {std::log(4.0)});
    CHECK(kl_div(std1, wide) != doctest::Approx(kl_div(wide, std1)));
}

TEST_CASE("kl closed form matches Monte-Carlo") {
    RngState rng(77);
    RngState mc_rng(78);
    for (int pair = 0; pair < 3; ++pair) {
        const DiagGaussian a = random_gaussian(rng, 3);
        const DiagGaussian b = random_gaussian(rng, 3);
        const double exact = kl_div(a, b);
        const double mc = kl_monte_carlo(a, b, mc_rng, 200000);
        CHECK(std::abs(mc - exact) / std::max(1e-9, std::abs(exact)) < 0.05);
    }
}

TEST_CASE("js examples") {
    DiagGaussian a({0.0}, {0.0});
    DiagGaussian b({2.0}, {0.0});
    CHECK(js_div(a, a) == 0.0);
    CHECK(js_div(a, b) == doctest::Approx(js_div(b, a)));
    // independent re-evaluation of the midpoint formula at mu-gap 2, unit vars
    const double s1 = 1.0, s2 = 1.0;
    const double m0 = 1.0, s0 = 1.0;
    const double direct = 0.25 * (std::log((s1 + s2) * (s1 + s2) / (4.0 * s1 * s2)) +
                                  (s1 + (0.0 - m0) * (0.0 - m0)) / s0 +
                                  (s2 + (2.0 - m0) * (2.0 - m0)) / s0 - 2.0);
    CHECK(js_div(a, b) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("hellinger examples") {
    DiagGaussian a({0.0}, {0.0});
    CHECK(hellinger(a, a) == 0.0);
    // closed form at unit variances and mu-gap 2: sqrt(1 - exp(-1/2))
    DiagGaussian b({2.0}, {0.0});
    const double bc = std::sqrt(2.0 * 1.0 * 1.0 / 2.0) * std::exp(-0.25 * 4.0 / 2.0);
    CHECK(hellinger(a, b) == doctest::Approx(std::sqrt(1.0 - bc)).epsilon(1e-12));
    // grows monotonically to 1 as the means separate (saturating at 1)
    double prev = 0.0;
    for (double gap = 0.5; gap < 200.0; gap *= 2.0) {
        DiagGaussian far({gap}, {0.0});
        const double h = hellinger(a, far);
        if (prev < 0.9999)
            CHECK(h > prev);
        else
            CHECK(h >= prev);
        CHECK(h <= 1.0);
        prev = h;
    }
    CHECK(prev > 0.999);
}

TEST_CASE("divergence properties on random pairs") {
    RngState rng(404);
    for (int trial = 0; trial < 10000; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform01() * 4);
        const DiagGaussian a = random_gaussian(rng, d);
        const DiagGaussian b = random_gaussian(rng, d);
        CHECK(wasserstein2_sq(a, b) >= 0.0);
        CHECK(kl_div(a, b) >= 0.0);
        CHECK(js_div(a, b) >= -1e-15);
        CHECK(hellinger(a, b) >= 0.0);
        if (trial < 500) {
            CHECK(std::abs(wasserstein2_sq(a, b) - wasserstein2_sq(b, a)) <= 1e-12);
            CHECK(std::abs(js_div(a, b) - js_div(b, a)) <= 1e-12);
            CHECK(std::abs(hellinger(a, b) - hellinger(b, a)) <= 1e-12);
            CHECK(wasserstein2_sq(a, a) <= 1e-9);
            CHECK(kl_div(a, a) <= 1e-9);
            CHECK(js_div(a, a) <= 1e-9);
            CHECK(hellinger(a, a) <= 1e-9);
        }
    }
}

TEST_CASE("bounded metrics stay bounded") {
    RngState rng(405);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> z(4), p(4);
        for (int i = 0; i < 4; ++i) {
            z[i] = 10.0 * rng.gaussian();
            p[i] = 10.0 * rng.gaussian();
        }
        const double c = cosine_sim(z.data(), p.data(), 4);
        CHECK(c >= -1.0 - 1e-12);
        CHECK(c <= 1.0 + 1e-12);
        const double g = gaussian_kernel_sim(z.data(), p.data(), 4, 2.0);
        CHECK(g > 0.0);
        CHECK(g <= 1.0);
    }
}

TEST_CASE("score_matrix identity pattern and divergence negation") {
    GaussianBatch tokens{Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, Matrix()};
    GaussianBatch protos{Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, Matrix()};
    MetricKind cosine;
    const Matrix s = score_matrix(tokens, protos, cosine);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(s(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));

    // token equal to prototype j peaks at column j with score 0 for divergences
    RngState rng(406);
    GaussianBatch ps{sample_gaussian(rng, 4, 3), sample_gaussian(rng, 4, 3)};
    GaussianBatch ts{Matrix(1, 3), Matrix(1, 3)};
    for (int j = 0; j < 3; ++j) {
        ts.mean(0, j) = ps.mean(2, j);
        ts.log_var(0, j) = ps.log_var(2, j);
    }
    for (Metric kind : {Metric::Wasserstein2, Metric::KL, Metric::JS, Metric::Hellinger}) {
        MetricKind mk;
        mk.kind = kind;
        const Matrix sd = score_matrix(ts, ps, mk);
        int argmax = 0;
        for (int e = 1; e < 4; ++e)
            if (sd(0, e) > sd(0, argmax)) argmax = e;
        CHECK(argmax == 2);
        CHECK(sd(0, 2) == doctest::Approx(0.0));
        // argmax of the score equals argmin of the raw divergence
        for (int e = 0; e < 4; ++e) CHECK(sd(0, e) <= 1e-12);
    }
}

TEST_CASE("score_matrix matches the pairwise serial oracle") {
    RngState rng(407);
    GaussianBatch tokens{sample_gaussian(rng, 3, 5), sample_gaussian(rng, 3, 5)};
    GaussianBatch protos{sample_gaussian(rng, 4, 5), sample_gaussian(rng, 4, 5)};
    for (Metric kind : {Metric::Cosine, Metric::GaussianKernel, Metric::MultiHeadDot,
                        Metric::Mahalanobis, Metric::Wasserstein2, Metric::KL, Metric::JS,
                        Metric::Hellinger}) {
        MetricKind mk;
        mk.kind = kind;
        mk.heads = 1;
        CHECK(max_abs_diff(score_matrix(tokens, protos, mk), ref::score_matrix(tokens, protos, mk)) <=
              1e-12);
    }
    // Wasserstein2 spot-check against the scalar op
    MetricKind w2;
    w2.kind = Metric::Wasserstein2;
    const Matrix s = score_matrix(tokens, protos, w2);
    for (int t = 0; t < 3; ++t)
        for (int e = 0; e < 4; ++e) {
            DiagGaussian a(std::vector<double>(tokens.mean.row(t), tokens.mean.row(t) + 5),
                           std::vector<double>(tokens.log_var.row(t), tokens.log_var.row(t) + 5));
            DiagGaussian b(std::vector<double>(protos.mean.row(e), protos.mean.row(e) + 5),
                           std::vector<double>(protos.log_var.row(e), protos.log_var.row(e) + 5));
            CHECK(std::abs(s(t, e) + wasserstein2_sq(a, b)) <= 1e-12);
        }
}

TEST_CASE("score_matrix dimension mismatch") {
    GaussianBatch tokens{Matrix(2, 3), Matrix()};
    GaussianBatch protos{Matrix(2, 4), Matrix()};
    MetricKind cosine;
    CHECK_THROWS_AS(score_matrix(tokens, protos, cosine), ShapeError);
}

TEST_CASE("metric gradients match finite differences") {
    RngState rng(408);
    const int d = 4;
    for (Metric kind : {Metric::Cosine, Metric::GaussianKernel, Metric::MultiHeadDot,
                        Metric::Mahalanobis, Metric::Wasserstein2, Metric::KL, Metric::JS,
                        Metric::Hellinger}) {
        MetricKind mk;
        mk.kind = kind;
        mk.sigma = 1.4;
        mk.heads = 2;
        Matrix tok_mean = sample_gaussian(rng, 1, d);
        Matrix tok_lv = sample_gaussian(rng, 1, d);
        Matrix pro_mean = sample_gaussian(rng, 1, d);
        Matrix pro_lv = sample_gaussian(rng, 1, d);
        for (int i = 0; i < d; ++i) {
            tok_lv(0, i) *= 0.4;
            pro_lv(0, i) *= 0.4;
        }

        std::vector<double> gt_mean(d, 0.0), gt_lv(d, 0.0), gp_mean(d, 0.0), gp_lv(d, 0.0);
        metric_score_backward(mk, tok_mean.row(0), tok_lv.row(0), pro_mean.row(0), pro_lv.row(0),
                              d, 1.0, gt_mean.data(), gt_lv.data(), gp_mean.data(), gp_lv.data());

        const auto check_side = [&](Matrix &side, const std::vector<double> &analytic) {
            const Matrix fd = finite_diff_grad(
                [&](const Matrix &probe) {
                    return metric_score(mk, &side == &tok_mean ? probe.row(0) : tok_mean.row(0),
                                        &side == &tok_lv ? probe.row(0) : tok_lv.row(0),
                                        &side == &pro_mean ? probe.row(0) : pro_mean.row(0),
                                        &side == &pro_lv ? probe.row(0) : pro_lv.row(0), d);
                },
                side, 1e-6);
            for (int i = 0; i < d; ++i) CHECK(rel_err(fd(0, i), analytic[i]) <= 1e-5);
        };
        check_side(tok_mean, gt_mean);
        check_side(pro_mean, gp_mean);
        if (is_distributional(kind)) check_side(tok_lv, gt_lv);
        if (metric_uses_variance(kind)) check_side(pro_lv, gp_lv);
    }
}

TEST_SUITE_END();
