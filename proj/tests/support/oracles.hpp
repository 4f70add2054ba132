#pragma once

// Slow, obviously-correct reference implementations used as test oracles.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "dcl/features.hpp"

namespace dcl::fixture {

/// NMI = I / sqrt(H(a) H(b)) from an explicit contingency table, with
/// I = H(a) + H(b) - H(a, b), all in long double.
inline long double nmi_oracle(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b) {
    std::map<std::int32_t, long double> ca, cb;
    std::map<std::pair<std::int32_t, std::int32_t>, long double> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1;
        cb[b[i]] += 1;
        joint[{a[i], b[i]}] += 1;
    }
    const long double n = static_cast<long double>(a.size());
    auto entropy = [n](const auto& counts) {
        long double h = 0;
        for (const auto& [_, c] : counts) h -= (c / n) * std::log(c / n);
        return h;
    };
    if (ca.size() == 1 && cb.size() == 1) return 1;
    if (ca.size() == 1 || cb.size() == 1) return 0;
    const long double ha = entropy(ca), hb = entropy(cb);
    return (ha + hb - entropy(joint)) / std::sqrt(ha * hb);
}

/// Minimum within-cluster sum of squares over every assignment of the rows
/// to at most k clusters (k^N assignments).
inline double brute_force_inertia(const FeatureMatrix& f, std::size_t k) {
    const std::size_t n = f.rows, d = f.dims;
    std::vector<std::size_t> label(n, 0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        std::vector<double> sum(k * d, 0.0);
        std::vector<double> count(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            count[label[i]] += 1.0;
            for (std::size_t j = 0; j < d; ++j) sum[label[i] * d + j] += f.data[i * d + j];
        }
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = f.data[i * d + j] - sum[label[i] * d + j] / count[label[i]];
                cost += diff * diff;
            }
        }
        best = std::min(best, cost);
        std::size_t pos = 0;
        while (pos < n && ++label[pos] == k) label[pos++] = 0;
        if (pos == n) break;
    }
    return best;
}

}  // namespace dcl::fixture
