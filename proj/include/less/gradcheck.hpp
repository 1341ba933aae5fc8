#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "less/tensor.hpp"

namespace less {

struct GradCheckResult {
    // max |analytic − numeric| over checked coordinates of a leaf, divided by
    // the larger of the two gradients' max magnitude on those coordinates
    // (never less than `floor`); the worst leaf is reported.
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t coordinates = 0;

    bool passed(double tol) const { return max_rel_error < tol; }
};

// Compares tape gradients of the scalar `f()` against central differences.
// `f` must rebuild its graph from `leaves` on every call. If `max_coords` is
// nonzero, that many coordinates are sampled uniformly across all leaves.
// `floor` keeps leaves whose true gradient is zero (a key bias under softmax)
// from turning rounding noise into a relative error of 1.
inline GradCheckResult check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h = 1e-5,
                                       std::size_t max_coords = 0, std::uint64_t seed = 0,
                                       double floor = 1e-6) {
    Tape tape;
    Tensor loss;
    {
        GradScope scope(tape);
        loss = f();
    }
    const auto grads = tape.gradients(loss);

    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t l = 0; l < leaves.size(); ++l)
        for (std::size_t i = 0; i < leaves[l].numel(); ++i) coords.emplace_back(l, i);
    if (max_coords && coords.size() > max_coords) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_coords);
        std::sort(coords.begin(), coords.end());
    }

    std::vector<std::vector<std::pair<double, double>>> per_leaf(leaves.size());
    {
        NoGradScope no_grad;
        for (auto [l, i] : coords) {
            auto data = leaves[l].mutable_data();
            const double orig = data[i];
            data[i] = orig + h;
            const double fp = f().item();
            data[i] = orig - h;
            const double fm = f().item();
            data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            auto g = grads.of(leaves[l]);
            const double analytic = g.empty() ? 0.0 : g[i];
            per_leaf[l].emplace_back(analytic, numeric);
        }
    }

    GradCheckResult r;
    r.coordinates = coords.size();
    for (const auto& pairs : per_leaf) {
        if (pairs.empty()) continue;
        double scale = floor, worst = 0.0;
        for (auto [a, n] : pairs) {
            scale = std::max({scale, std::abs(a), std::abs(n)});
            worst = std::max(worst, std::abs(a - n));
        }
        r.max_abs_error = std::max(r.max_abs_error, worst);
        r.max_rel_error = std::max(r.max_rel_error, worst / scale);
    }
    return r;
}

}  // namespace less
