#include "lpr/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace lpr {

Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + a.shape() + " * " + b.shape());
    Matrix c(a.rows(), b.cols());
    const int m = a.rows(), n = b.cols(), k = a.cols();
#pragma omp parallel for schedule(static) if (m > 1)
    for (int i = 0; i < m; ++i) {
        const double *ai = a.row(i);
        double *ci = c.row(i);
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += ai[p] * b(p, j);
            ci[j] = acc;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix &a, const Matrix &b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: " + a.shape() + "^T * " + b.shape());
    Matrix c(a.cols(), b.cols());
    const int m = a.cols(), n = b.cols(), k = a.rows();
#pragma omp parallel for schedule(static) if (m > 1)
    for (int i = 0; i < m; ++i) {
        double *ci = c.row(i);
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a(p, i) * b(p, j);
            ci[j] = acc;
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: " + a.shape() + " * " + b.shape() + "^T");
    Matrix c(a.rows(), b.rows());
    const int m = a.rows(), n = b.rows(), k = a.cols();
#pragma omp parallel for schedule(static) if (m > 1)
    for (int i = 0; i < m; ++i) {
        const double *ai = a.row(i);
        double *ci = c.row(i);
        for (int j = 0; j < n; ++j)
            ci[j] = dot(ai, b.row(j), k);
    }
    return c;
}

Matrix softmax_rows(const Matrix &s) {
    Matrix p(s.rows(), s.cols());
    const int n = s.cols();
#pragma omp parallel for schedule(static) if (s.rows() > 1)
    for (int i = 0; i < s.rows(); ++i) {
        const double *si = s.row(i);
        double *pi = p.row(i);
        double mx = si[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, si[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            pi[j] = std::exp(si[j] - mx);
            sum += pi[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) pi[j] *= inv;
    }
    return p;
}

Matrix softmax_rows_backward(const Matrix &y, const Matrix &dy) {
    if (!y.same_shape(dy))
        throw ShapeError("softmax_rows_backward: " + y.shape() + " vs " + dy.shape());
    Matrix dx(y.rows(), y.cols());
    const int n = y.cols();
#pragma omp parallel for schedule(static) if (y.rows() > 1)
    for (int i = 0; i < y.rows(); ++i) {
        const double *yi = y.row(i);
        const double *di = dy.row(i);
        double inner = 0.0;
        for (int j = 0; j < n; ++j) inner += yi[j] * di[j];
        double *oi = dx.row(i);
        for (int j = 0; j < n; ++j) oi[j] = yi[j] * (di[j] - inner);
    }
    return dx;
}

void rms_norm_row(const double *x, double *out, int n) {
    double ms = 0.0;
    for (int j = 0; j < n; ++j) ms += x[j] * x[j];
    ms /= n;
    const double inv = 1.0 / std::sqrt(ms + kRmsNormEps);
    for (int j = 0; j < n; ++j) out[j] = x[j] * inv;
}

Matrix rms_norm_rows(const Matrix &x) {
    if (x.cols() == 0) throw ParamError("rms_norm_rows: empty rows");
    Matrix out(x.rows(), x.cols());
#pragma omp parallel for schedule(static) if (x.rows() > 1)
    for (int i = 0; i < x.rows(); ++i)
        rms_norm_row(x.row(i), out.row(i), x.cols());
    return out;
}

Matrix apply_silu(const Matrix &x) {
    Matrix out(x.rows(), x.cols());
#pragma omp parallel for schedule(static) if (x.rows() > 1)
    for (int i = 0; i < x.rows(); ++i) {
        const double *xi = x.row(i);
        double *oi = out.row(i);
        for (int j = 0; j < x.cols(); ++j) oi[j] = silu(xi[j]);
    }
    return out;
}

Matrix sample_gaussian(RngState &rng, int rows, int cols) {
    if (rows <= 0 || cols <= 0)
        throw ParamError("sample_gaussian: dims must be positive, got " +
                         Matrix::shape_str(rows, cols));
    Matrix out(rows, cols);
    // Sequential draw: the stream is defined by call order, not by thread.
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = rng.gaussian();
    return out;
}

Matrix finite_diff_grad(const std::function<double(const Matrix &)> &f, const Matrix &at,
                        double h) {
    if (h <= 0.0) throw ParamError("finite_diff_grad: h must be positive");
    Matrix grad(at.rows(), at.cols());
    Matrix probe = at;
    for (std::size_t i = 0; i < at.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double fp = f(probe);
        probe.data()[i] = orig - h;
        const double fm = f(probe);
        probe.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite objective at probe " +
                               std::to_string(i));
        grad.data()[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

Matrix add_bias_rows(const Matrix &x, const Matrix &bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols())
        throw ShapeError("add_bias_rows: " + x.shape() + " + " + bias.shape());
    Matrix out = x;
#pragma omp parallel for schedule(static) if (x.rows() > 1)
    for (int i = 0; i < x.rows(); ++i) {
        double *oi = out.row(i);
        const double *b = bias.row(0);
        for (int j = 0; j < x.cols(); ++j) oi[j] += b[j];
    }
    return out;
}

Matrix colsum(const Matrix &x) {
    Matrix out(1, x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        const double *xi = x.row(i);
        for (int j = 0; j < x.cols(); ++j) out(0, j) += xi[j];
    }
    return out;
}

double frobenius_sq(const Matrix &x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.data()[i] * x.data()[i];
    return acc;
}

double dot(const double *a, const double *b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(const double *a, int n) { return std::sqrt(dot(a, a, n)); }

} // namespace lpr
