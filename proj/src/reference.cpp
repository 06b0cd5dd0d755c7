#include "lpr/reference.hpp"

#include <algorithm>
#include <cmath>

namespace lpr::ref {

Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.rows())
        throw ShapeError("ref::matmul: " + a.shape() + " * " + b.shape());
    Matrix c(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (int p = 0; p < a.cols(); ++p)
                acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
    return c;
}

Matrix softmax_rows(const Matrix &s) {
    Matrix p(s.rows(), s.cols());
    for (int i = 0; i < s.rows(); ++i) {
        double mx = s(i, 0);
        for (int j = 1; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
        double sum = 0.0;
        for (int j = 0; j < s.cols(); ++j) {
            p(i, j) = std::exp(s(i, j) - mx);
            sum += p(i, j);
        }
        for (int j = 0; j < s.cols(); ++j) p(i, j) /= sum;
    }
    return p;
}

Matrix score_matrix(const GaussianBatch &tokens, const GaussianBatch &prototypes,
                    const MetricKind &kind) {
    if (tokens.dim() != prototypes.dim())
        throw ShapeError("ref::score_matrix: token dim " + tokens.mean.shape() +
                         " vs prototype dim " + prototypes.mean.shape());
    Matrix s(tokens.count(), prototypes.count());
    for (int t = 0; t < tokens.count(); ++t)
        for (int e = 0; e < prototypes.count(); ++e)
            s(t, e) = metric_score(kind, tokens.mean.row(t),
                                   tokens.log_var.empty() ? nullptr : tokens.log_var.row(t),
                                   prototypes.mean.row(e),
                                   prototypes.log_var.empty() ? nullptr : prototypes.log_var.row(e),
                                   tokens.dim());
    return s;
}

} // namespace lpr::ref
