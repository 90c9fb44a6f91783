#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "../ops.hpp"

namespace lyv5::nn {

using lyv5::to_string;

struct ActKind {
    enum class Type { leaky_relu, hswish, mish, gelu, silu, sigmoid, identity };

    Type type = Type::identity;
    double slope = 0.01; // LeakyReLU only, must lie in (0, 1)

    static ActKind leaky_relu(double a = 0.01)
    {
        if (!(a > 0.0 && a < 1.0)) throw Error("LeakyReLU slope must lie in (0, 1)");
        return {Type::leaky_relu, a};
    }
    static ActKind hswish() { return {Type::hswish}; }
    static ActKind mish() { return {Type::mish}; }
    static ActKind gelu() { return {Type::gelu}; }
    static ActKind silu() { return {Type::silu}; }
    static ActKind sigmoid() { return {Type::sigmoid}; }
    static ActKind identity() { return {Type::identity}; }

    friend bool operator==(const ActKind&, const ActKind&) = default;
};

inline std::string to_string(const ActKind& a)
{
    switch (a.type) {
    case ActKind::Type::leaky_relu: return "leakyrelu";
    case ActKind::Type::hswish: return "hswish";
    case ActKind::Type::mish: return "mish";
    case ActKind::Type::gelu: return "gelu";
    case ActKind::Type::silu: return "silu";
    case ActKind::Type::sigmoid: return "sigmoid";
    case ActKind::Type::identity: return "identity";
    }
    return "?";
}

inline ActKind parse_activation(std::string_view name)
{
    if (name == "leakyrelu") return ActKind::leaky_relu();
    if (name == "hswish") return ActKind::hswish();
    if (name == "mish") return ActKind::mish();
    if (name == "gelu") return ActKind::gelu();
    if (name == "silu") return ActKind::silu();
    if (name == "sigmoid") return ActKind::sigmoid();
    if (name == "identity") return ActKind::identity();
    throw Error("unknown activation '" + std::string(name) + "'");
}

namespace detail {

template <class T>
T softplus(T x)
{
    return x > T(20) ? x : std::log1p(std::exp(x));
}

inline constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

} // namespace detail

template <class T>
T activate(const ActKind& a, T x)
{
    switch (a.type) {
    case ActKind::Type::leaky_relu: return x > T(0) ? x : T(a.slope) * x;
    case ActKind::Type::hswish:
        if (x >= T(3)) return x;
        if (x <= T(-3)) return T(0);
        return x * (x + T(3)) / T(6);
    case ActKind::Type::mish: return x * std::tanh(detail::softplus(x));
    case ActKind::Type::gelu: {
        const T u = T(detail::kGeluC) * (x + T(detail::kGeluA) * x * x * x);
        return T(0.5) * x * (T(1) + std::tanh(u));
    }
    case ActKind::Type::silu: return x * sigmoid_scalar(x);
    case ActKind::Type::sigmoid: return sigmoid_scalar(x);
    case ActKind::Type::identity: return x;
    }
    return x;
}

template <class T>
T activate_grad(const ActKind& a, T x)
{
    switch (a.type) {
    case ActKind::Type::leaky_relu: return x > T(0) ? T(1) : T(a.slope);
    case ActKind::Type::hswish:
        if (x <= T(-3)) return T(0);
        if (x >= T(3)) return T(1);
        return (T(2) * x + T(3)) / T(6);
    case ActKind::Type::mish: {
        const T t = std::tanh(detail::softplus(x));
        return t + x * (T(1) - t * t) * sigmoid_scalar(x);
    }
    case ActKind::Type::gelu: {
        const T c = T(detail::kGeluC), k = T(detail::kGeluA);
        const T t = std::tanh(c * (x + k * x * x * x));
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
    }
    case ActKind::Type::silu: {
        const T s = sigmoid_scalar(x);
        return s * (T(1) + x * (T(1) - s));
    }
    case ActKind::Type::sigmoid: {
        const T s = sigmoid_scalar(x);
        return s * (T(1) - s);
    }
    case ActKind::Type::identity: return T(1);
    }
    return T(1);
}

template <std::floating_point T>
Var<T> activation(const ActKind& kind, const Var<T>& x)
{
    if (kind.type == ActKind::Type::identity) return x;
    return unary(
        "activation", x, [kind](T v) { return activate(kind, v); },
        [kind](T v, T) { return activate_grad(kind, v); });
}

} // namespace lyv5::nn
