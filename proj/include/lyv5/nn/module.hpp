#pragma once

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "layers.hpp"

namespace lyv5::nn {

// A layer of a declarative model graph: consumes one or more feature maps,
// produces one, and can report its parameters and cost without running.
template <std::floating_point T>
class Module {
public:
    virtual ~Module() = default;

    virtual Var<T> forward(Context<T>& ctx, const std::vector<Var<T>>& in) = 0;
    virtual void collect(const std::string& prefix, TensorList<T>& out) = 0;
    virtual Shape out_shape(const std::vector<Shape>& in) const = 0;
    virtual LayerCost cost(const std::vector<Shape>& in) const = 0;
    virtual std::string kind() const = 0;
    virtual std::string args() const { return ""; }

    Var<T> operator()(Context<T>& ctx, const Var<T>& x) { return forward(ctx, {x}); }
};

template <std::floating_point T>
using ModulePtr = std::unique_ptr<Module<T>>;

inline const Shape& single_input(const std::vector<Shape>& in, const char* who)
{
    if (in.size() != 1) throw ShapeError(std::string(who) + ": expects exactly one input");
    return in.front();
}

// Placeholder for an external input of a Network.
template <std::floating_point T>
class InputLayer final : public Module<T> {
public:
    Var<T> forward(Context<T>&, const std::vector<Var<T>>& in) override { return in.at(0); }
    void collect(const std::string&, TensorList<T>&) override {}
    Shape out_shape(const std::vector<Shape>& in) const override { return single_input(in, "input"); }
    LayerCost cost(const std::vector<Shape>&) const override { return {}; }
    std::string kind() const override { return "Input"; }
};

// One record of the graph: the module and where its inputs come from.
// from = -1 means the previous layer; other values are absolute indices.
template <std::floating_point T>
struct LayerSpec {
    std::vector<int> from;
    ModulePtr<T> module;
};

struct LayerReport {
    std::size_t index = 0;
    std::string from;
    std::string kind;
    std::string args;
    Shape out;
    LayerCost cost;
};

// Ordered layer list with explicit from-indices. The first `inputs` layers
// are InputLayer placeholders fed by the caller.
template <std::floating_point T>
class Network {
public:
    explicit Network(std::size_t inputs = 1)
    {
        for (std::size_t i = 0; i < inputs; ++i) layers_.push_back({{}, std::make_unique<InputLayer<T>>()});
        inputs_ = inputs;
    }

    // Appends a layer and returns its index.
    int add(std::vector<int> from, ModulePtr<T> module)
    {
        const int index = static_cast<int>(layers_.size());
        if (from.empty()) throw Error("network: layer " + std::to_string(index) + " has no inputs");
        for (auto& f : from) {
            if (f == -1) f = index - 1;
            if (f < 0 || f >= index)
                throw Error("network: layer " + std::to_string(index) + " reads from invalid index "
                            + std::to_string(f));
        }
        layers_.push_back({std::move(from), std::move(module)});
        return index;
    }

    void set_outputs(std::vector<int> outputs)
    {
        for (int o : outputs)
            if (o < 0 || o >= static_cast<int>(layers_.size())) throw Error("network: invalid output index");
        outputs_ = std::move(outputs);
    }

    const std::vector<int>& outputs() const { return outputs_; }
    std::size_t size() const { return layers_.size(); }
    std::size_t input_count() const { return inputs_; }
    const LayerSpec<T>& layer(std::size_t i) const { return layers_.at(i); }
    Module<T>& module(std::size_t i) { return *layers_.at(i).module; }

    std::vector<Var<T>> forward(Context<T>& ctx, const std::vector<Var<T>>& inputs)
    {
        if (inputs.size() != inputs_)
            throw Error("network: expected " + std::to_string(inputs_) + " inputs, got "
                        + std::to_string(inputs.size()));
        // Free intermediate outputs as soon as their last consumer has run.
        std::vector<std::size_t> last_use(layers_.size(), 0);
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (int f : layers_[i].from) last_use[f] = std::max(last_use[f], i);
        for (int o : outputs_) last_use[o] = layers_.size();

        std::vector<Var<T>> values(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (i < inputs_) {
                values[i] = inputs[i];
                continue;
            }
            std::vector<Var<T>> in;
            in.reserve(layers_[i].from.size());
            for (int f : layers_[i].from) in.push_back(values[f]);
            values[i] = layers_[i].module->forward(ctx, in);
            for (int f : layers_[i].from)
                if (last_use[f] == i) values[f] = Var<T>();
        }
        std::vector<Var<T>> out;
        for (int o : outputs_) out.push_back(values[o]);
        return out;
    }

    TensorList<T> named_tensors()
    {
        TensorList<T> out;
        for (std::size_t i = inputs_; i < layers_.size(); ++i)
            layers_[i].module->collect(std::to_string(i), out);
        return out;
    }

    // Per-layer shapes and costs for the given input shapes.
    std::vector<LayerReport> report(const std::vector<Shape>& input_shapes) const
    {
        if (input_shapes.size() != inputs_) throw Error("network: wrong number of input shapes");
        std::vector<Shape> shapes(layers_.size());
        std::vector<LayerReport> rows;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            LayerReport r;
            r.index = i;
            if (i < inputs_) {
                shapes[i] = input_shapes[i];
            } else {
                std::vector<Shape> in;
                std::ostringstream from;
                for (std::size_t k = 0; k < layers_[i].from.size(); ++k) {
                    const int f = layers_[i].from[k];
                    in.push_back(shapes[f]);
                    from << (k ? "," : "") << (f == static_cast<int>(i) - 1 ? -1 : f);
                }
                shapes[i] = layers_[i].module->out_shape(in);
                r.cost = layers_[i].module->cost(in);
                r.from = from.str();
            }
            r.kind = layers_[i].module->kind();
            r.args = layers_[i].module->args();
            r.out = shapes[i];
            rows.push_back(std::move(r));
        }
        return rows;
    }

    LayerCost total_cost(const std::vector<Shape>& input_shapes) const
    {
        LayerCost total;
        for (const auto& r : report(input_shapes)) total += r.cost;
        return total;
    }

private:
    std::vector<LayerSpec<T>> layers_;
    std::vector<int> outputs_;
    std::size_t inputs_ = 1;
};

} // namespace lyv5::nn
