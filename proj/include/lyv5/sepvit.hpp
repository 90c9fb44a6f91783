#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "nn/layers.hpp"
#include "nn/resample.hpp"

namespace lyv5 {

// Token layout of a windowed feature map: (N, windows_h * windows_w, ws^2, C),
// windows in row-major order, pixels row-major inside each window.
struct WindowGrid {
    std::size_t batch = 1, channels = 1, height = 1, width = 1, ws = 1;

    std::size_t windows_h() const { return height / ws; }
    std::size_t windows_w() const { return width / ws; }
    std::size_t windows() const { return windows_h() * windows_w(); }
    std::size_t pixels() const { return ws * ws; }
    Shape token_shape() const { return {batch, windows(), pixels(), channels}; }

    static WindowGrid of(const Shape& nchw, std::size_t ws)
    {
        if (nchw.size() != 4) throw ShapeError("window grid: expected NCHW shape, got " + to_string(nchw));
        if (ws == 0 || nchw[2] % ws || nchw[3] % ws)
            throw ShapeError("window grid: " + std::to_string(nchw[2]) + "x" + std::to_string(nchw[3])
                             + " map is not divisible by window size " + std::to_string(ws));
        return {nchw[0], nchw[1], nchw[2], nchw[3], ws};
    }

    // Flat NCHW offset of token (n, window, pixel, channel).
    std::size_t source(std::size_t n, std::size_t w, std::size_t p, std::size_t c) const
    {
        const std::size_t y = (w / windows_w()) * ws + p / ws;
        const std::size_t x = (w % windows_w()) * ws + p % ws;
        return ((n * channels + c) * height + y) * width + x;
    }
};

template <std::floating_point T>
Var<T> window_partition(const Var<T>& x, const WindowGrid& grid)
{
    if (x.shape() != Shape{grid.batch, grid.channels, grid.height, grid.width})
        throw ShapeError("window_partition: input " + to_string(x.shape()) + " does not match grid");
    const auto ts = grid.token_shape();
    auto index = std::make_shared<std::vector<std::size_t>>(numel(ts));
    std::size_t i = 0;
    for (std::size_t n = 0; n < grid.batch; ++n)
        for (std::size_t w = 0; w < grid.windows(); ++w)
            for (std::size_t p = 0; p < grid.pixels(); ++p)
                for (std::size_t c = 0; c < grid.channels; ++c) (*index)[i++] = grid.source(n, w, p, c);
    return gather(x, ts, std::move(index), "window_partition");
}

template <std::floating_point T>
Var<T> window_merge(const Var<T>& tokens, const WindowGrid& grid)
{
    if (tokens.shape() != grid.token_shape())
        throw ShapeError("window_merge: tokens " + to_string(tokens.shape()) + " do not match grid");
    auto index = std::make_shared<std::vector<std::size_t>>(tokens.numel());
    std::size_t i = 0;
    for (std::size_t n = 0; n < grid.batch; ++n)
        for (std::size_t w = 0; w < grid.windows(); ++w)
            for (std::size_t p = 0; p < grid.pixels(); ++p)
                for (std::size_t c = 0; c < grid.channels; ++c) (*index)[grid.source(n, w, p, c)] = i++;
    return gather(tokens, {grid.batch, grid.channels, grid.height, grid.width}, std::move(index), "window_merge");
}

// Output of an attention step together with its weight matrix, so callers
// and tests can inspect row sums.
template <std::floating_point T>
struct Attended {
    Var<T> out;
    Var<T> weights;
};

// softmax(q k^T / sqrt(d)) v over the last two axes.
template <std::floating_point T>
Attended<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v)
{
    const std::size_t d = q.dim(q.rank() - 1);
    auto scores = scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(d)));
    auto weights = softmax(scores, scores.rank() - 1);
    return {matmul(weights, v), weights};
}

template <std::floating_point T>
struct SepVitParams {
    std::size_t dim = 0;
    nn::Linear<T> wq, wk, wv;
    nn::Linear<T> mlp_in, mlp_out;
    nn::LayerNorm<T> ln_attn, ln_mlp;
    Tensor<T> window_token;

    SepVitParams() = default;
    SepVitParams(std::size_t d, std::mt19937_64& rng, std::size_t mlp_ratio = 4)
        : dim(d), wq(d, d, true, rng), wk(d, d, true, rng), wv(d, d, true, rng),
          mlp_in(d, mlp_ratio * d, true, rng), mlp_out(mlp_ratio * d, d, true, rng), ln_attn(d), ln_mlp(d),
          window_token({d}, T(0))
    {
    }

    void collect(const std::string& prefix, nn::TensorList<T>& out)
    {
        wq.collect(nn::join_name(prefix, "q"), out);
        wk.collect(nn::join_name(prefix, "k"), out);
        wv.collect(nn::join_name(prefix, "v"), out);
        mlp_in.collect(nn::join_name(prefix, "mlp.fc1"), out);
        mlp_out.collect(nn::join_name(prefix, "mlp.fc2"), out);
        ln_attn.collect(nn::join_name(prefix, "ln1"), out);
        ln_mlp.collect(nn::join_name(prefix, "ln2"), out);
        out.push_back({nn::join_name(prefix, "window_token"), &window_token, nn::TensorRole::bias});
    }
};

// Depthwise self-attention: attention restricted to the tokens of each
// window. tokens: (N, windows, tokens_per_window, d).
template <std::floating_point T>
Attended<T> dwa(nn::Context<T>& ctx, const Var<T>& tokens, SepVitParams<T>& p)
{
    return scaled_dot_attention(p.wq.forward(ctx, tokens), p.wk.forward(ctx, tokens), p.wv.forward(ctx, tokens));
}

// Pointwise self-attention: one query/key per window from its window token,
// values are the windows' whole pixel groups. pixels: (N, windows, ws^2, d);
// window_tokens: (N, windows, d).
template <std::floating_point T>
Attended<T> pwa(nn::Context<T>& ctx, const Var<T>& pixels, const Var<T>& window_tokens, SepVitParams<T>& p)
{
    const std::size_t N = pixels.dim(0), nw = pixels.dim(1), P = pixels.dim(2), d = pixels.dim(3);
    if (window_tokens.shape() != Shape{N, nw, d})
        throw ShapeError("pwa: window tokens " + to_string(window_tokens.shape()) + " do not match pixel groups "
                         + to_string(pixels.shape()));
    auto z = nn::activation(nn::ActKind::gelu(), p.ln_attn.forward(ctx, window_tokens));
    auto att = scaled_dot_attention(p.wq.forward(ctx, z), p.wk.forward(ctx, z), reshape(pixels, {N, nw, P * d}));
    att.out = reshape(att.out, {N, nw, P, d});
    return att;
}

// Broadcasts the learned (d) window token to (N, windows, 1, d).
template <std::floating_point T>
Var<T> tile_window_token(const Var<T>& token, std::size_t batch, std::size_t windows)
{
    const std::size_t d = token.numel();
    auto index = std::make_shared<std::vector<std::size_t>>(batch * windows * d);
    for (std::size_t i = 0; i < index->size(); ++i) (*index)[i] = i % d;
    return gather(token, {batch, windows, 1, d}, std::move(index), "tile_window_token");
}

template <std::floating_point T>
struct SepVitTrace {
    Var<T> out;
    Var<T> dwa_weights;
    Var<T> pwa_weights;
};

// Shape-preserving block on an NCHW map whose sides are multiples of ws.
template <std::floating_point T>
SepVitTrace<T> sepvit_block_traced(nn::Context<T>& ctx, const Var<T>& x, SepVitParams<T>& p, std::size_t ws)
{
    const auto grid = WindowGrid::of(x.shape(), ws);
    if (grid.channels != p.dim)
        throw ShapeError("sepvit_block: input has " + std::to_string(grid.channels) + " channels, block width is "
                         + std::to_string(p.dim));
    const std::size_t N = grid.batch, nw = grid.windows(), P = grid.pixels(), d = p.dim;

    auto f = window_partition(x, grid);
    auto wt = tile_window_token(ctx.graph.leaf(p.window_token), N, nw);
    auto with_token = concat<T>({f, wt}, 2);

    auto local = dwa(ctx, p.ln_attn.forward(ctx, with_token), p);
    auto pixels = slice(local.out, 2, 0, P);
    auto tokens = reshape(slice(local.out, 2, P, 1), {N, nw, d});

    auto global = pwa(ctx, pixels, tokens, p);
    auto mixed = global.out + f;

    auto hidden = nn::activation(nn::ActKind::gelu(), p.mlp_in.forward(ctx, p.ln_mlp.forward(ctx, mixed)));
    auto out = p.mlp_out.forward(ctx, hidden) + mixed;
    return {window_merge(out, grid), local.weights, global.weights};
}

template <std::floating_point T>
Var<T> sepvit_block(nn::Context<T>& ctx, const Var<T>& x, SepVitParams<T>& p, std::size_t ws)
{
    return sepvit_block_traced(ctx, x, p, ws).out;
}

// Parameters and FLOPs of one block on an h x w map (after padding to ws).
template <std::floating_point T>
nn::LayerCost sepvit_cost(const SepVitParams<T>& p, std::size_t batch, std::size_t h, std::size_t w, std::size_t ws)
{
    const std::uint64_t d = p.dim;
    const std::uint64_t nw = ((h + ws - 1) / ws) * ((w + ws - 1) / ws);
    const std::uint64_t P = ws * ws, tokens = batch * nw * (P + 1), pixels = batch * nw * P;
    nn::LayerCost c;
    // DWA: q, k, v over pixel + window tokens, then per-window attention.
    c += p.wq.cost(tokens) + p.wk.cost(tokens) + p.wv.cost(tokens);
    c += nn::attention_cost(batch * nw, P + 1, P + 1, d);
    // PWA: q, k from the window tokens, scores among windows, applied to pixel groups.
    c.flops += 2 * (2 * batch * nw * d * d);
    c.flops += 2 * batch * nw * nw * d + 2 * batch * nw * nw * P * d;
    c += p.mlp_in.cost(pixels) + p.mlp_out.cost(pixels);
    c += p.ln_attn.cost() + p.ln_mlp.cost();
    c.params += d;
    c.activations = batch * d * h * w;
    return c;
}

} // namespace lyv5
