#include "angiodit/numerics/params.hpp"

#include "angiodit/core/error.hpp"

namespace angiodit {

Variable ParamStore::add(const std::string& path, Tensor init) {
    if (params_.count(path)) throw ConfigError("duplicate parameter path '" + path + "'");
    Variable v(std::move(init), true);
    params_.emplace(path, v);
    return v;
}

Variable ParamStore::add_normal(const std::string& path, Shape shape, Rng& rng, Real stddev) {
    return add(path, rng.normal_tensor(shape, stddev));
}

Variable ParamStore::add_zeros(const std::string& path, Shape shape) {
    return add(path, Tensor(std::move(shape), 0.0f));
}

Variable ParamStore::add_ones(const std::string& path, Shape shape) {
    return add(path, Tensor(std::move(shape), 1.0f));
}

const Variable& ParamStore::at(const std::string& path) const {
    auto it = params_.find(path);
    if (it == params_.end()) throw ConfigError("unknown parameter path '" + path + "'");
    return it->second;
}

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [_, v] : params_) n += v.numel();
    return n;
}

void ParamStore::assign(const std::string& path, const Tensor& value) {
    Variable v = at(path);
    if (!v.value().same_shape(value)) {
        throw ShapeError("parameter '" + path + "' has shape " + shape_str(v.shape()) +
                         ", cannot assign " + shape_str(value.shape()));
    }
    v.mutable_value() = value;
}

void ParamStore::absorb(const ParamStore& other) {
    for (const auto& [path, v] : other) assign(path, v.value());
}

GradientMap backward(const Variable& loss, const ParamStore& params) {
    for (const auto& [_, v] : params) {
        Variable p = v;
        p.mutable_grad() = Tensor();
    }
    run_backward(loss);
    GradientMap grads;
    for (const auto& [path, v] : params) {
        Variable p = v;
        if (p.grad().empty()) {
            grads.emplace(path, Tensor(p.shape(), 0.0f));
        } else {
            grads.emplace(path, std::move(p.mutable_grad()));
            p.mutable_grad() = Tensor();
        }
    }
    return grads;
}

}  // namespace angiodit
