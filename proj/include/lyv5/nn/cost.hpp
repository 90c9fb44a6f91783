#pragma once

#include <cstdint>

#include "../tensor.hpp"

namespace lyv5::nn {

// Parameter and FLOP tally of one layer. One multiply-accumulate counts as
// two FLOPs; normalization and activations add no FLOPs.
struct LayerCost {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t activations = 0;

    LayerCost& operator+=(const LayerCost& o) noexcept
    {
        params += o.params;
        flops += o.flops;
        activations += o.activations;
        return *this;
    }
    friend LayerCost operator+(LayerCost a, const LayerCost& b) noexcept { return a += b; }
    friend bool operator==(const LayerCost&, const LayerCost&) = default;
};

// Dense projection applied to `tokens` vectors of width `in`.
inline LayerCost linear_cost(std::uint64_t tokens, std::uint64_t in, std::uint64_t out, bool bias = true)
{
    LayerCost c;
    c.params = in * out + (bias ? out : 0);
    c.flops = 2 * tokens * in * out;
    c.activations = tokens * out;
    return c;
}

// Scores (q k^T) plus weighted sum (a v) for `batches` independent
// attention problems of q_len x k_len over width d.
inline LayerCost attention_cost(std::uint64_t batches, std::uint64_t q_len, std::uint64_t k_len, std::uint64_t d)
{
    LayerCost c;
    c.flops = 2 * batches * q_len * k_len * d * 2;
    c.activations = batches * q_len * d;
    return c;
}

} // namespace lyv5::nn
