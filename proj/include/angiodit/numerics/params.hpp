#pragma once

#include <map>
#include <string>

#include "angiodit/numerics/autograd.hpp"
#include "angiodit/numerics/random.hpp"

namespace angiodit {

// Named trainable parameters. Paths are unique and iteration order is the
// sorted path order, which is what checkpoints rely on.
class ParamStore {
public:
    using Map = std::map<std::string, Variable>;

    Variable add(const std::string& path, Tensor init);
    Variable add_normal(const std::string& path, Shape shape, Rng& rng, Real stddev);
    Variable add_zeros(const std::string& path, Shape shape);
    Variable add_ones(const std::string& path, Shape shape);

    bool contains(const std::string& path) const { return params_.count(path) != 0; }
    const Variable& at(const std::string& path) const;
    std::size_t size() const { return params_.size(); }
    std::int64_t total_elements() const;

    Map::const_iterator begin() const { return params_.begin(); }
    Map::const_iterator end() const { return params_.end(); }

    // Overwrites the value of an existing parameter; shapes must agree.
    void assign(const std::string& path, const Tensor& value);
    // Copies every parameter of `other` whose path starts with `prefix`.
    void absorb(const ParamStore& other);

private:
    Map params_;
};

using GradientMap = std::map<std::string, Tensor>;

// Gradient of a recorded one-element loss with respect to every parameter.
// Parameters outside the recorded graph receive exact zeros.
GradientMap backward(const Variable& loss, const ParamStore& params);

}  // namespace angiodit
