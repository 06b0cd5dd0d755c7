#include "lpr/balance.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lpr/router.hpp"

namespace lpr {

double LoadVector::total() const {
    double acc = 0.0;
    for (double v : loads) acc += v;
    return acc;
}

double gini(const LoadVector &lv) {
    const int n = lv.experts();
    if (n == 0) throw ParamError("gini: empty load vector");
    for (double v : lv.loads)
        if (v < 0.0) throw ParamError("gini: negative load " + std::to_string(v));
    const double total = lv.total();
    if (total <= 0.0) throw NumericError("gini: undefined for all-zero loads");
    std::vector<double> sorted = lv.loads;
    std::sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    for (int i = 1; i <= n; ++i)
        acc += (2.0 * i - n - 1.0) * sorted[i - 1];
    return acc / (n * total);
}

double min_max_ratio(const LoadVector &lv, double eps) {
    if (lv.experts() == 0) throw ParamError("min_max_ratio: empty load vector");
    const auto [mn, mx] = std::minmax_element(lv.loads.begin(), lv.loads.end());
    return *mn / (*mx + eps);
}

void accumulate_loads(LoadVector &acc, const RoutingDecision &decision, LoadMode mode) {
    if (acc.loads.empty()) acc.loads.assign(decision.experts(), 0.0);
    if (acc.experts() != decision.experts())
        throw ShapeError("accumulate_loads: " + std::to_string(acc.experts()) +
                         " experts vs decision with " + std::to_string(decision.experts()));
    if (mode == LoadMode::HardCount) {
        for (int t = 0; t < decision.tokens(); ++t)
            for (int j = 0; j < decision.k; ++j)
                acc.loads[decision.idx(t, j)] += 1.0;
    } else {
        for (int t = 0; t < decision.tokens(); ++t) {
            const double *pt = decision.probs.row(t);
            for (int e = 0; e < decision.experts(); ++e) acc.loads[e] += pt[e];
        }
    }
}

LoadVector merge(const LoadVector &a, const LoadVector &b) {
    if (a.experts() != b.experts())
        throw ShapeError("merge: " + std::to_string(a.experts()) + " vs " +
                         std::to_string(b.experts()) + " experts");
    LoadVector out = a;
    for (int e = 0; e < out.experts(); ++e) out.loads[e] += b.loads[e];
    return out;
}

} // namespace lpr
