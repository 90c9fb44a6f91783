#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "../ops.hpp"
#include "activation.hpp"
#include "conv.hpp"
#include "cost.hpp"
#include "norm.hpp"

namespace lyv5::nn {

// How the optimizer and checkpoint treat a named tensor.
enum class TensorRole {
    weight, // trained, weight-decayed
    bias,   // trained, no decay (biases, norm affine, window tokens)
    buffer, // not trained (running statistics)
};

template <std::floating_point T>
struct NamedTensor {
    std::string name;
    Tensor<T>* tensor = nullptr;
    TensorRole role = TensorRole::weight;
};

template <std::floating_point T>
using TensorList = std::vector<NamedTensor<T>>;

inline std::string join_name(const std::string& prefix, const std::string& leaf)
{
    return prefix.empty() ? leaf : prefix + "." + leaf;
}

// Per-forward context: the recording graph and the train/eval switch.
// `bn_momentum`, when set, replaces every BN layer's running-stat momentum
// for this pass.
template <std::floating_point T>
struct Context {
    Graph<T>& graph;
    Mode mode = Mode::eval;
    std::optional<double> bn_momentum = std::nullopt;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <std::floating_point T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
    return Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
}

template <std::floating_point T>
struct BatchNorm2d {
    Tensor<T> gamma, beta, running_mean, running_var;
    BatchNormConfig config;

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels)
        : gamma({channels}, T(1)), beta({channels}, T(0)), running_mean({channels}, T(0)),
          running_var({channels}, T(1))
    {
    }

    Var<T> forward(Context<T>& ctx, const Var<T>& x)
    {
        auto cfg = config;
        if (ctx.bn_momentum) cfg.momentum = *ctx.bn_momentum;
        return batchnorm2d(x, ctx.graph.leaf(gamma), ctx.graph.leaf(beta), running_mean, running_var, ctx.mode, cfg);
    }

    void collect(const std::string& prefix, TensorList<T>& out)
    {
        out.push_back({join_name(prefix, "gamma"), &gamma, TensorRole::bias});
        out.push_back({join_name(prefix, "beta"), &beta, TensorRole::bias});
        out.push_back({join_name(prefix, "running_mean"), &running_mean, TensorRole::buffer});
        out.push_back({join_name(prefix, "running_var"), &running_var, TensorRole::buffer});
    }
};

// Convolution with optional bias, optional batch norm, then activation.
template <std::floating_point T>
struct Conv {
    ConvSpec spec;
    Tensor<T> weight;
    std::optional<Tensor<T>> bias;
    std::optional<BatchNorm2d<T>> bn;

    Conv() = default;
    Conv(const ConvSpec& s, std::mt19937_64& rng) : spec(s)
    {
        spec.validate();
        const std::size_t fan_in = (spec.in_channels / spec.groups) * spec.kernel * spec.kernel;
        weight = fan_in_uniform<T>(spec.weight_shape(), fan_in, rng);
        if (spec.has_bias) bias = fan_in_uniform<T>({spec.out_channels}, fan_in, rng);
        if (spec.with_batchnorm) bn.emplace(spec.out_channels);
    }

    Var<T> forward(Context<T>& ctx, const Var<T>& x)
    {
        std::optional<Var<T>> b;
        if (bias) b = ctx.graph.leaf(*bias);
        Var<T> y = conv2d(x, ctx.graph.leaf(weight), b, spec);
        if (bn) y = bn->forward(ctx, y);
        return activation(spec.activation, y);
    }

    void collect(const std::string& prefix, TensorList<T>& out)
    {
        out.push_back({join_name(prefix, "weight"), &weight, TensorRole::weight});
        if (bias) out.push_back({join_name(prefix, "bias"), &*bias, TensorRole::bias});
        if (bn) bn->collect(join_name(prefix, "bn"), out);
    }

    LayerCost cost(const Shape& in) const { return layer_cost(spec, in); }
    Shape out_shape(const Shape& in) const { return spec.out_shape(in); }
};

// y = x W + b over the trailing axis; W stored as (in, out).
template <std::floating_point T>
struct Linear {
    Tensor<T> weight;
    std::optional<Tensor<T>> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, bool with_bias, std::mt19937_64& rng)
        : weight(fan_in_uniform<T>({in, out}, in, rng))
    {
        if (with_bias) bias = fan_in_uniform<T>({out}, in, rng);
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Var<T> forward(Context<T>& ctx, const Var<T>& x)
    {
        if (x.dim(x.rank() - 1) != in_features())
            throw ShapeError("linear: input width " + std::to_string(x.dim(x.rank() - 1)) + " != "
                             + std::to_string(in_features()));
        Var<T> y = matmul(x, ctx.graph.leaf(weight));
        if (bias) y = elementwise(BinaryOp::add, y, ctx.graph.leaf(*bias), y.rank() - 1);
        return y;
    }

    void collect(const std::string& prefix, TensorList<T>& out)
    {
        out.push_back({join_name(prefix, "weight"), &weight, TensorRole::weight});
        if (bias) out.push_back({join_name(prefix, "bias"), &*bias, TensorRole::bias});
    }

    LayerCost cost(std::uint64_t tokens) const
    {
        return linear_cost(tokens, in_features(), out_features(), bias.has_value());
    }
};

template <std::floating_point T>
struct LayerNorm {
    Tensor<T> gamma, beta;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t features) : gamma({features}, T(1)), beta({features}, T(0)) {}

    Var<T> forward(Context<T>& ctx, const Var<T>& x)
    {
        return layernorm(x, ctx.graph.leaf(gamma), ctx.graph.leaf(beta), eps);
    }

    void collect(const std::string& prefix, TensorList<T>& out)
    {
        out.push_back({join_name(prefix, "gamma"), &gamma, TensorRole::bias});
        out.push_back({join_name(prefix, "beta"), &beta, TensorRole::bias});
    }

    LayerCost cost() const { return {2 * gamma.numel(), 0, 0}; }
};

} // namespace lyv5::nn
