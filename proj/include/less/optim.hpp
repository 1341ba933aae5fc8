#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/params.hpp"

namespace less {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update of `p` in place; `t` is the 1-based step.
inline void adam_update(std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v,
                        std::size_t t, double lr, const AdamConfig& cfg = {}) {
    if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
        throw DimensionError("adam: parameter, gradient and moment sizes differ");
    for (double x : g)
        if (!std::isfinite(x)) throw TrainingError("adam: non-finite gradient");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
}

// Adam over a ParameterStore with one learning rate per parameter group.
class Adam {
public:
    Adam() = default;
    explicit Adam(const ParameterStore& ps, AdamConfig cfg = {}) : cfg_(cfg) {
        for (const auto& p : ps.params()) {
            m_.emplace_back(p.value.numel(), 0.0);
            v_.emplace_back(p.value.numel(), 0.0);
        }
    }

    std::size_t steps() const { return t_; }
    void set_steps(std::size_t t) { t_ = t; }
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

    // Uses each parameter's accumulated gradient; a parameter that never
    // received one is treated as having zero gradient.
    void step(ParameterStore& ps, double base_lr, double text_lr) {
        auto& params = ps.params();
        if (params.size() != m_.size()) throw ContractError("adam: parameter store changed since construction");
        for (const auto& p : params)
            if (p.value.has_grad())
                for (double g : p.value.grad())
                    if (!std::isfinite(g)) throw TrainingError("adam: non-finite gradient in " + p.name);
        ++t_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            const double lr = p.group == ParamGroup::text ? text_lr : base_lr;
            if (p.value.has_grad()) {
                adam_update(p.value.mutable_data(), p.value.grad(), m_[i], v_[i], t_, lr, cfg_);
            } else {
                const std::vector<double> zero(p.value.numel(), 0.0);
                adam_update(p.value.mutable_data(), zero, m_[i], v_[i], t_, lr, cfg_);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace less
