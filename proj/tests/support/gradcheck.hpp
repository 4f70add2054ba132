#pragma once

// Central finite-difference oracle for network gradients.
//
// Losses are evaluated in double on a double copy of the network. A
// perturbation that moves any ReLU or max-pool unit onto a different branch
// straddles a kink, where central differences are meaningless; those entries
// are retried with a 10x smaller step and skipped if no step stays on one
// linear piece.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dcl/nn.hpp"
#include "dcl/rng.hpp"

namespace dcl::fixture {

struct GradCheckReport {
    double max_rel_error = 0.0;         // float64 analytic vs finite differences
    double max_rel_error_float = 0.0;   // float32 analytic vs finite differences
    std::size_t float_violations = 0;   // float32 entries outside rtol 1e-3 / atol 1e-6
    std::size_t checked = 0;
    std::size_t reduced_step = 0;
    std::size_t skipped = 0;
    std::string worst;
};

// Gradients below this magnitude are compared in absolute terms.
inline constexpr double kGradFloor = 1e-6;
// float32 rounding leaves ~1e-7 of noise on gradients that are exactly zero
// (e.g. a conv bias feeding batchnorm), so float32 gets an absolute tolerance.
inline constexpr double kFloatAtol = 1e-6;

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kGradFloor});
}

/// Checks up to `per_tensor` entries of every parameter (all when 0).
inline GradCheckReport check_gradients(const Network& source, const Tensor& batch,
                                       const std::vector<std::int32_t>& targets, std::size_t per_tensor,
                                       std::uint64_t seed, double step = 1e-3) {
    Network net_f = source.cast<float>();
    net_f.set_mode(Mode::Train);
    const auto analytic_f = net_f.backward(net_f.forward(batch, Output::Logits), targets).grads;

    BasicNetwork<double> net = source.cast<double>();
    net.set_mode(Mode::Train);
    const BasicTensor<double> x = batch.cast<double>();
    const auto analytic_d = net.backward(net.forward(x, Output::Logits), targets).grads;
    const auto base_pattern = net.branch_pattern();

    auto loss_at = [&](std::vector<std::size_t>& pattern) {
        const auto logits = net.forward(x, Output::Logits);
        pattern = net.branch_pattern();
        return softmax_cross_entropy<double>(logits, targets, nullptr);
    };

    GradCheckReport report;
    Rng rng(seed);
    auto params = net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p]->value;
        std::vector<std::size_t> entries(w.size());
        std::iota(entries.begin(), entries.end(), std::size_t{0});
        if (per_tensor > 0 && entries.size() > per_tensor) {
            rng.shuffle(entries);
            entries.resize(per_tensor);
        }
        for (std::size_t e : entries) {
            const double w0 = w[e];
            std::optional<double> numeric;
            std::vector<std::size_t> plus_pattern, minus_pattern;
            for (double h = step; h >= step * 1e-4 && !numeric; h /= 10.0) {
                w[e] = w0 + h;
                const double lp = loss_at(plus_pattern);
                w[e] = w0 - h;
                const double lm = loss_at(minus_pattern);
                w[e] = w0;
                if (plus_pattern == base_pattern && minus_pattern == base_pattern) {
                    numeric = (lp - lm) / (2.0 * h);
                    if (h < step) ++report.reduced_step;
                }
            }
            if (!numeric) {
                ++report.skipped;
                continue;
            }
            ++report.checked;
            const double ed = rel_error(analytic_d[p][e], *numeric);
            const double ef = rel_error(analytic_f[p][e], *numeric);
            report.max_rel_error_float = std::max(report.max_rel_error_float, ef);
            if (std::abs(analytic_f[p][e] - *numeric) > kFloatAtol + 1e-3 * std::abs(*numeric)) {
                ++report.float_violations;
            }
            if (ed > report.max_rel_error) {
                report.max_rel_error = ed;
                report.worst = params[p]->name + "[" + std::to_string(e) + "] analytic " +
                               std::to_string(analytic_d[p][e]) + " numeric " + std::to_string(*numeric);
            }
        }
    }
    return report;
}

/// A random graph with 1..3 conv blocks of at most 8 channels.
inline NetworkGraph random_small_graph(Rng& rng) {
    NetworkGraph g;
    g.input_channels = 1 + rng.below(3);
    g.input_height = g.input_width = 6 + rng.below(7);
    g.head_width = 2 + rng.below(5);
    std::size_t size = g.input_height;
    const std::size_t blocks = 1 + rng.below(3);
    for (std::size_t i = 0; i < blocks; ++i) {
        BlockSpec b;
        b.name = "conv" + std::to_string(i + 1);
        b.out_channels = 1 + rng.below(8);
        const std::size_t kernels[] = {1, 3, 5};
        do {
            b.kernel = kernels[rng.below(3)];
        } while (b.kernel > size);
        b.padding = rng.below(b.kernel / 2 + 1);
        b.batchnorm = rng.coin();
        size = size + 2 * b.padding - b.kernel + 1;
        b.pool = size >= 2 && size % 2 == 0 && rng.coin();
        if (b.pool) size /= 2;
        g.blocks.push_back(b);
    }
    return g;
}

}  // namespace dcl::fixture
