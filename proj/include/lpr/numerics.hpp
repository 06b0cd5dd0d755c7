#pragma once

#include <functional>

#include "lpr/matrix.hpp"
#include "lpr/rng.hpp"

namespace lpr {

// Dense kernel library. The hot loops are OpenMP-parallel over rows (or row
// pairs); every output element is produced by exactly one thread with a fixed
// serial accumulation order, so results are bit-identical to the serial
// reference kernels in lpr::ref regardless of thread count.

// C = A * B. Throws ShapeError when a.cols != b.rows.
Matrix matmul(const Matrix &a, const Matrix &b);

// C = A^T * B (A is k x m, B is k x n, C is m x n).
Matrix matmul_tn(const Matrix &a, const Matrix &b);

// C = A * B^T (A is m x k, B is n x k, C is m x n).
Matrix matmul_nt(const Matrix &a, const Matrix &b);

// Row-wise softmax with max-shift; rows sum to 1 and stay finite for any
// finite input.
Matrix softmax_rows(const Matrix &s);

// Backward of row-wise softmax: given y = softmax(x) and dL/dy, returns dL/dx.
Matrix softmax_rows_backward(const Matrix &y, const Matrix &dy);

// x / sqrt(mean(x^2) + eps) with eps = 1e-6, applied to one row.
void rms_norm_row(const double *x, double *out, int n);

// Row-wise RMS normalization of a matrix.
Matrix rms_norm_rows(const Matrix &x);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_prime(double x) {
    const double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

// Elementwise SiLU.
Matrix apply_silu(const Matrix &x);

// Matrix of i.i.d. standard normals; deterministic per (seed, call sequence).
Matrix sample_gaussian(RngState &rng, int rows, int cols);

// Central finite differences (f(x+h e) - f(x-h e)) / 2h per entry.
// Throws NumericError when f evaluates to a non-finite value.
Matrix finite_diff_grad(const std::function<double(const Matrix &)> &f, const Matrix &at,
                        double h = 1e-5);

// Relative error |a-b| / max(1, |a|, |b|), the comparison used by every
// gradient check in the test suites.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Small helpers shared across modules.
Matrix add_bias_rows(const Matrix &x, const Matrix &bias); // bias is 1 x cols
Matrix colsum(const Matrix &x);                            // 1 x cols
double frobenius_sq(const Matrix &x);
double dot(const double *a, const double *b, int n);
double l2_norm(const double *a, int n);

constexpr double kRmsNormEps = 1e-6;

} // namespace lpr
