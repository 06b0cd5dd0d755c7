#pragma once

#include "lpr/matrix.hpp"
#include "lpr/metrics.hpp"

namespace lpr::ref {

// Serial reference kernels. These are the oracles the test suites compare the
// OpenMP kernels against, and the baseline side of the benchmark tool. They use
// the same per-element accumulation order as the parallel kernels, so the
// comparison is exact, not approximate.

Matrix matmul(const Matrix &a, const Matrix &b);
Matrix softmax_rows(const Matrix &s);
Matrix score_matrix(const GaussianBatch &tokens, const GaussianBatch &prototypes,
                    const MetricKind &kind);

} // namespace lpr::ref
