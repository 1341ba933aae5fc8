#pragma once

#include <functional>
#include <string>
#include <vector>

#include "less/gradcheck.hpp"
#include "less/losses.hpp"
#include "less/model.hpp"

// Finite-difference checks of every differentiable building block on small
// random instances, grouped by module. Shared by the CLI and the tests.

namespace less {

struct GradCase {
    std::string module;
    std::string name;
    double tolerance;
    std::function<GradCheckResult(std::uint64_t seed)> run;
};

struct GradRow {
    std::string module, name;
    std::uint64_t instance = 0;
    double tolerance = 0.0;
    GradCheckResult result;

    bool passed() const { return result.passed(tolerance); }
};

namespace detail {

inline Tensor random_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    Tensor t(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

inline Tensor fixed_weights(const Shape& shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(shape, std::move(v));
}

inline std::vector<Tensor> store_leaves(ParameterStore& ps, Rng& rng) {
    std::vector<Tensor> out;
    for (auto& p : ps.params()) {
        for (auto& x : p.value.mutable_data()) x = rng.uniform(-0.5, 0.5);
        out.push_back(p.value);
    }
    return out;
}

// Generic scalar loss Σ y ⊙ w on fixed random w.
inline GradCheckResult check_output(const std::function<Tensor()>& f, std::vector<Tensor> leaves, Rng& rng,
                                    std::size_t max_coords = 0) {
    Tensor probe;
    {
        NoGradScope off;
        probe = f();
    }
    const Tensor w = fixed_weights(probe.shape(), rng);
    return check_gradients([&] { return sum(mul(f(), w)); }, std::move(leaves), 1e-5, max_coords, rng.next_u64());
}

inline std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng) {
    std::vector<std::uint8_t> m(n);
    for (auto& v : m) v = rng.below(3) ? 1 : 0;
    return m;
}

// A 40-point scene: floor patch plus one object, C = 8, K = 2.
inline PointCloud micro_scene(Rng& rng, std::vector<std::uint8_t>& y) {
    PointCloud pc;
    for (int i = 0; i < 40; ++i) {
        const bool obj = i >= 28;
        pc.points.push_back({rng.uniform(0.0, 0.6), rng.uniform(0.0, 0.6), obj ? rng.uniform(0.05, 0.3) : 0.0,
                             obj ? 0.9 : 0.5, obj ? 0.1 : 0.45, obj ? 0.1 : 0.4});
        y.push_back(obj ? 1 : 0);
    }
    return pc;
}

}  // namespace detail

inline std::vector<GradCase> gradient_cases() {
    using detail::check_output;
    using detail::random_leaf;
    std::vector<GradCase> c;
    c.push_back({"tensor", "matmul", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     auto a = random_leaf({3, 4}, rng), b = random_leaf({4, 5}, rng);
                     return check_output([&] { return matmul(a, b); }, {a, b}, rng);
                 }});
    c.push_back({"tensor", "softmax", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     auto a = random_leaf({4, 5}, rng, -2, 2);
                     return check_output([&] { return softmax(a, 1); }, {a}, rng);
                 }});
    c.push_back({"tensor", "sigmoid", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     auto a = random_leaf({4, 5}, rng, -4, 4);
                     return check_output([&] { return sigmoid(a); }, {a}, rng);
                 }});
    c.push_back({"tensor", "tanh", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     auto a = random_leaf({4, 5}, rng, -2, 2);
                     return check_output([&] { return tanh(a); }, {a}, rng);
                 }});
    c.push_back({"sparse3d", "submanifold_conv", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     std::vector<Coord> coords;
                     for (int x = 0; x < 3; ++x)
                         for (int y = 0; y < 3; ++y)
                             if (rng.below(4)) coords.push_back({x, y, static_cast<std::int32_t>(rng.below(2))});
                     if (coords.empty()) coords.push_back({0, 0, 0});
                     auto f = random_leaf({coords.size(), 2}, rng);
                     auto k = random_leaf({3, 3, 3, 2, 3}, rng);
                     auto b = random_leaf({3}, rng);
                     SparseVoxelTensor x(1, coords, f);
                     const auto km = submanifold_map(x);
                     return check_output([&] { return apply_kernel_map(f, k, km, b); }, {f, k, b}, rng);
                 }});
    c.push_back({"sparse3d", "strided_conv", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     std::vector<Coord> coords;
                     for (int x = -2; x < 2; ++x)
                         for (int y = -1; y < 2; ++y)
                             if (rng.below(3)) coords.push_back({x, y, 0});
                     if (coords.empty()) coords.push_back({0, 0, 0});
                     auto f = random_leaf({coords.size(), 2}, rng);
                     auto k = random_leaf({3, 3, 3, 2, 2}, rng);
                     SparseVoxelTensor x(1, coords, f);
                     auto [out, km] = strided_map(x);
                     return check_output([&] { return apply_kernel_map(f, k, km); }, {f, k}, rng);
                 }});
    c.push_back({"textenc", "gru_cell", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     ParameterStore ps(s);
                     TextEncoder enc(ps, "text", {6, 5, 8});
                     auto leaves = detail::store_leaves(ps, rng);
                     auto x = random_leaf({1, 5}, rng), h = random_leaf({1, 5}, rng);
                     leaves.push_back(x);
                     leaves.push_back(h);
                     return check_output([&] { return enc.step(x, h); }, leaves, rng);
                 }});
    c.push_back({"textenc", "gru_sequence", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     ParameterStore ps(s);
                     TextEncoder enc(ps, "text", {6, 4, 8});
                     auto leaves = detail::store_leaves(ps, rng);
                     return check_output([&] { return enc.encode({2, 5, 3}).words; }, leaves, rng);
                 }});
    c.push_back({"fusion", "attention", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     ParameterStore ps(s);
                     AttentionProjections p{Linear(ps, "q", 4, 4), Linear(ps, "k", 4, 4), Linear(ps, "v", 4, 4)};
                     auto leaves = detail::store_leaves(ps, rng);
                     auto q = random_leaf({5, 4}, rng), kv = random_leaf({3, 4}, rng);
                     leaves.push_back(q);
                     leaves.push_back(kv);
                     return check_output([&] { return cross_attention(q, kv, p); }, leaves, rng);
                 }});
    c.push_back({"fusion", "pwca_stage", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     ParameterStore ps(s);
                     PwcaStage stage(ps, "s", 5, 4, FusionMode::pwca);
                     auto leaves = detail::store_leaves(ps, rng);
                     auto v = random_leaf({6, 4}, rng), w = random_leaf({3, 5}, rng);
                     leaves.push_back(v);
                     leaves.push_back(w);
                     return check_output([&] { return stage.apply(v, w); }, leaves, rng);
                 }});
    c.push_back({"head", "masked_attention", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     ParameterStore ps(s);
                     AttentionProjections p{Linear(ps, "q", 4, 4), Linear(ps, "k", 4, 4), Linear(ps, "v", 4, 4)};
                     auto leaves = detail::store_leaves(ps, rng);
                     auto q = random_leaf({2, 4}, rng), f = random_leaf({6, 4}, rng);
                     const auto mask = detail::random_mask(12, rng);
                     leaves.push_back(q);
                     leaves.push_back(f);
                     return check_output([&] { return masked_cross_attention(q, f, mask, p); }, leaves, rng);
                 }});
    c.push_back({"head", "qmp_layer", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     ParameterStore ps(s);
                     QueryMaskPredictor head(ps, "head", {2, 1, 4, MaskSelection::weighted_sum, false});
                     auto leaves = detail::store_leaves(ps, rng);
                     auto f = random_leaf({6, 4}, rng);
                     leaves.push_back(f);
                     return check_output(
                         [&] {
                             auto fm = head.shared_mlp(f);
                             return head.layer_step(0, head.init_state(fm), f, fm).mask_logits;
                         },
                         leaves, rng);
                 }});
    c.push_back({"head", "head_end_to_end", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     ParameterStore ps(s);
                     QueryMaskPredictor head(ps, "head", {2, 1, 4, MaskSelection::weighted_sum, false});
                     auto leaves = detail::store_leaves(ps, rng);
                     auto f = random_leaf({6, 4}, rng), sentence = random_leaf({4}, rng);
                     leaves.push_back(f);
                     leaves.push_back(sentence);
                     return check_output([&] { return head.forward(f, sentence).prediction.mask_logits; }, leaves, rng);
                 }});
    c.push_back({"losses", "seg", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     auto m = random_leaf({9}, rng, -3, 3);
                     const auto y = detail::random_mask(9, rng);
                     return check_gradients([&] { return seg_loss(m, y); }, {m});
                 }});
    c.push_back({"losses", "area", 1e-4, [](std::uint64_t s) {
                     Rng rng(s);
                     auto m = random_leaf({9}, rng, -3, 3);
                     return check_gradients([&] { return area_loss(m); }, {m});
                 }});
    for (auto form : {P2PForm::log_form, P2PForm::as_written})
        c.push_back({"losses", form == P2PForm::log_form ? "p2p_log_form" : "p2p_as_written", 1e-4,
                     [form](std::uint64_t s) {
                         Rng rng(s);
                         auto pos = random_leaf({4, 3}, rng), neg = random_leaf({5, 3}, rng);
                         return check_gradients([&] { return contrastive_from_rows(pos, neg, 0.5, form); }, {pos, neg});
                     }});
    c.push_back({"pipeline", "micro_scene", 1e-3, [](std::uint64_t s) {
                     Rng rng(s);
                     std::vector<std::uint8_t> y;
                     const auto cloud = detail::micro_scene(rng, y);
                     ModelConfig mc;
                     mc.voxel_size = 0.1;
                     mc.unet_channels = {4, 4, 6, 6, 8};
                     mc.width = 8;
                     mc.vocab_size = 6;
                     mc.head.queries = 2;
                     LessModel model(mc, s);
                     auto& ps = model.parameters();
                     for (auto& p : ps.params())
                         if (p.name.ends_with(".bias"))
                             for (auto& x : p.value.mutable_data()) x = rng.uniform(-0.2, 0.2);
                     std::vector<Tensor> leaves;
                     for (const auto& p : ps.params()) leaves.push_back(p.value);
                     LossConfig lc;
                     lc.tau = 0.5;
                     return check_gradients(
                         [&] {
                             auto r = model.forward(cloud, {2, 3, 4});
                             Rng neg(1);
                             return compute_losses(r.prediction.mask_logits, r.features, y, lc, neg).total;
                         },
                         leaves, 1e-5, 25, s);
                 }});
    return c;
}

inline std::vector<std::string> gradient_modules() {
    std::vector<std::string> out;
    for (const auto& c : gradient_cases())
        if (std::find(out.begin(), out.end(), c.module) == out.end()) out.push_back(c.module);
    return out;
}

// `instances` seeded runs of every case, optionally restricted to one module.
inline std::vector<GradRow> run_gradient_suite(const std::string& module = "", std::size_t instances = 5) {
    std::vector<GradRow> rows;
    bool any = false;
    for (const auto& c : gradient_cases()) {
        if (!module.empty() && c.module != module) continue;
        any = true;
        for (std::size_t i = 0; i < instances; ++i) {
            const std::uint64_t seed = mix_seed(0x6772616463686bULL, i);
            rows.push_back({c.module, c.name, i, c.tolerance, c.run(seed)});
        }
    }
    if (!any) throw ContractError("gradcheck: unknown module '" + module + "'");
    return rows;
}

}  // namespace less
