#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "less/errors.hpp"
#include "less/ops.hpp"
#include "less/rng.hpp"
#include "less/tensor.hpp"

namespace less {

// Optimizer parameter groups; the text encoder trains at its own rate.
enum class ParamGroup { base, text };

struct NamedParam {
    std::string name;
    Tensor value;
    ParamGroup group = ParamGroup::base;
};

// Ordered registry of every trainable tensor in a model, keyed by a
// hierarchical name ("unet.enc1.conv1.kernel"). Order of registration is the
// serialization and optimizer order.
class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

    Tensor add(const std::string& name, Shape shape, std::vector<double> data, ParamGroup group = ParamGroup::base) {
        if (index_.count(name)) throw ContractError("parameter registered twice: " + name);
        Tensor t = Tensor::parameter(std::move(shape), std::move(data));
        index_[name] = params_.size();
        params_.push_back({name, t, group});
        return t;
    }

    Tensor zeros(const std::string& name, Shape shape, ParamGroup group = ParamGroup::base) {
        const auto n = shape_numel(shape);
        return add(name, std::move(shape), std::vector<double>(n, 0.0), group);
    }

    Tensor normal(const std::string& name, Shape shape, double stddev, ParamGroup group = ParamGroup::base) {
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = rng_.normal(0.0, stddev);
        return add(name, std::move(shape), std::move(v), group);
    }

    Tensor uniform(const std::string& name, Shape shape, double bound, ParamGroup group = ParamGroup::base) {
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) x = rng_.uniform(-bound, bound);
        return add(name, std::move(shape), std::move(v), group);
    }

    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<NamedParam>& params() { return params_; }

    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return params_[it->second].value;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

private:
    Rng rng_;
    std::vector<NamedParam> params_;
    std::map<std::string, std::size_t> index_;
};

// Affine layer x·W + b with W ~ U(±1/√in).
struct Linear {
    Tensor weight, bias;

    Linear() = default;
    Linear(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out,
           ParamGroup group = ParamGroup::base, double gain = 1.0) {
        const double bound = gain / std::sqrt(static_cast<double>(in));
        weight = ps.uniform(name + ".weight", {in, out}, bound, group);
        bias = ps.zeros(name + ".bias", {out}, group);
    }

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

}  // namespace less
