#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lidargen/autodiff.hpp"

namespace lidargen {

// Host-side named parameter storage.  Everything that persists (network
// weights, optimizer moments, config scalars) lives in float32 tensors so a
// checkpoint has exactly one value type.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (int64_t(data.size()) != numel(shape))
            throw std::invalid_argument("tensor data length does not match shape " +
                                        shape_str(shape));
    }
    Tensor(Shape s, float fill)
        : shape(std::move(s)), data(size_t(numel(shape)), fill) {}

    int64_t size() const { return numel(shape); }
};

// Ordered name -> Tensor map.  Order is part of the contract: checkpoints
// serialize entries in insertion order and optimizer gradients are aligned
// with the order parameters were staged onto a tape.
struct ParamDict {
    std::vector<std::pair<std::string, Tensor>> items;

    bool has(const std::string& name) const {
        for (const auto& [k, v] : items)
            if (k == name) return true;
        return false;
    }
    Tensor& at(const std::string& name) {
        for (auto& [k, v] : items)
            if (k == name) return v;
        throw std::out_of_range("no parameter named '" + name + "'");
    }
    const Tensor& at(const std::string& name) const {
        for (const auto& [k, v] : items)
            if (k == name) return v;
        throw std::out_of_range("no parameter named '" + name + "'");
    }
    void add(const std::string& name, Tensor t) {
        if (name.empty()) throw std::invalid_argument("parameter name must be nonempty");
        if (has(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        items.emplace_back(name, std::move(t));
    }
    void set_scalar(const std::string& name, float v) {
        if (has(name))
            at(name) = Tensor(Shape{}, std::vector<float>{v});
        else
            add(name, Tensor(Shape{}, std::vector<float>{v}));
    }
    float get_scalar(const std::string& name) const {
        const Tensor& t = at(name);
        if (t.size() != 1)
            throw std::invalid_argument("parameter '" + name + "' is not a scalar");
        return t.data[0];
    }
    size_t size() const { return items.size(); }
};

// Parameters materialized on a tape, same order as the source dict (minus
// any skipped entries).  `trainable_names` lists, in tape-param order, the
// dict entries staged with gradient tracking — aligned with Tape::backward.
template <typename T>
struct TapeDict {
    std::vector<std::pair<std::string, Ten<T>>> items;
    std::vector<std::string> trainable_names;

    Ten<T> at(const std::string& name) const {
        for (const auto& [k, v] : items)
            if (k == name) return v;
        throw std::out_of_range("no staged parameter named '" + name + "'");
    }
};

// Stages every non-config entry of `dict` onto `tp`; entries for which
// `trainable` returns true become differentiable parameters.
template <typename T, typename Pred>
TapeDict<T> stage_params(Tape<T>& tp, const ParamDict& dict, Pred trainable) {
    TapeDict<T> out;
    for (const auto& [name, t] : dict.items) {
        if (name.rfind("cfg.", 0) == 0) continue;
        std::vector<T> v(t.data.begin(), t.data.end());
        if (trainable(name)) {
            out.items.emplace_back(name, tp.param(t.shape, v));
            out.trainable_names.push_back(name);
        } else {
            out.items.emplace_back(name, tp.constant(t.shape, v));
        }
    }
    return out;
}

}  // namespace lidargen
