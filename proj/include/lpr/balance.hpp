#pragma once

#include <vector>

#include "lpr/errors.hpp"

namespace lpr {

struct RoutingDecision;

// Per-expert load vector (token counts or fractional soft loads).
struct LoadVector {
    std::vector<double> loads;

    int experts() const { return static_cast<int>(loads.size()); }
    double total() const;
};

enum class LoadMode { HardCount, SoftProb };

// Gini coefficient over ascending-sorted loads, in [0, (n-1)/n].
// Throws NumericError when the loads are all zero.
double gini(const LoadVector &loads);

// min(l) / (max(l) + eps), in [0, 1).
double min_max_ratio(const LoadVector &loads, double eps = 1e-12);

// Sums one decision's contribution into the load vector. Hard mode counts
// top-k memberships; soft mode sums full probability columns.
void accumulate_loads(LoadVector &acc, const RoutingDecision &decision, LoadMode mode);

// Partial load vectors merge by addition, enabling parallel accumulation.
LoadVector merge(const LoadVector &a, const LoadVector &b);

} // namespace lpr
