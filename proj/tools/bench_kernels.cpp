// Wall-time comparison of the OpenMP kernels against the serial reference
// implementations on routing-sized workloads.

#include <chrono>
#include <cstdio>
#include <functional>

#include "lpr/numerics.hpp"
#include "lpr/reference.hpp"
#include "lpr/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

double time_ms(const std::function<void()> &fn, int reps) {
    fn(); // warm up
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

void report(const char *name, double serial_ms, double parallel_ms) {
    std::printf("%-28s serial %8.3f ms   openmp %8.3f ms   speedup %.2fx\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms);
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif
    lpr::RngState rng(7);
    const int reps = 5;
    double checksum = 0.0;

    {
        const lpr::Matrix a = lpr::sample_gaussian(rng, 384, 384);
        const lpr::Matrix b = lpr::sample_gaussian(rng, 384, 384);
        double sink = 0.0;
        const double s = time_ms([&] { sink += lpr::ref::matmul(a, b)(0, 0); }, reps);
        const double p = time_ms([&] { sink += lpr::matmul(a, b)(0, 0); }, reps);
        report("matmul 384x384x384", s, p);
        checksum += sink;
    }
    {
        const lpr::Matrix s_in = lpr::sample_gaussian(rng, 8192, 128);
        double sink = 0.0;
        const double s = time_ms([&] { sink += lpr::ref::softmax_rows(s_in)(0, 0); }, reps);
        const double p = time_ms([&] { sink += lpr::softmax_rows(s_in)(0, 0); }, reps);
        report("softmax 8192x128", s, p);
        checksum += sink;
    }
    {
        lpr::GaussianBatch tokens{lpr::sample_gaussian(rng, 4096, 16),
                                  lpr::sample_gaussian(rng, 4096, 16)};
        lpr::GaussianBatch protos{lpr::sample_gaussian(rng, 128, 16),
                                  lpr::sample_gaussian(rng, 128, 16)};
        double sink = 0.0;
        for (lpr::Metric kind : {lpr::Metric::Cosine, lpr::Metric::KL, lpr::Metric::Wasserstein2}) {
            lpr::MetricKind mk;
            mk.kind = kind;
            const double s =
                time_ms([&] { sink += lpr::ref::score_matrix(tokens, protos, mk)(0, 0); }, reps);
            const double p =
                time_ms([&] { sink += lpr::score_matrix(tokens, protos, mk)(0, 0); }, reps);
            report(("scores 4096x128 " + lpr::metric_name(kind)).c_str(), s, p);
        }
        checksum += sink;
    }
    std::printf("(checksum %g)\n", checksum);
    return 0;
}
