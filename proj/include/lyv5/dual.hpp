#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>

namespace lyv5 {

// Forward-mode dual number carrying N directional derivatives.
template <std::floating_point T, std::size_t N>
struct Dual {
    T v{};
    std::array<T, N> d{};

    Dual() = default;
    Dual(T value) : v(value) {} // NOLINT: implicit lift of constants

    static Dual variable(T value, std::size_t index)
    {
        Dual r(value);
        r.d[index] = T(1);
        return r;
    }

    template <class F>
    static Dual chain(const Dual& a, T value, F&& dvalue)
    {
        Dual r(value);
        const T k = dvalue;
        for (std::size_t i = 0; i < N; ++i) r.d[i] = k * a.d[i];
        return r;
    }

    Dual& operator+=(const Dual& o) { return *this = *this + o; }
    Dual& operator-=(const Dual& o) { return *this = *this - o; }
    Dual& operator*=(const Dual& o) { return *this = *this * o; }
    Dual& operator/=(const Dual& o) { return *this = *this / o; }

    friend Dual operator+(const Dual& a, const Dual& b)
    {
        Dual r(a.v + b.v);
        for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
        return r;
    }
    friend Dual operator-(const Dual& a, const Dual& b)
    {
        Dual r(a.v - b.v);
        for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
        return r;
    }
    friend Dual operator-(const Dual& a)
    {
        Dual r(-a.v);
        for (std::size_t i = 0; i < N; ++i) r.d[i] = -a.d[i];
        return r;
    }
    friend Dual operator*(const Dual& a, const Dual& b)
    {
        Dual r(a.v * b.v);
        for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
        return r;
    }
    friend Dual operator/(const Dual& a, const Dual& b)
    {
        Dual r(a.v / b.v);
        const T inv = T(1) / b.v;
        for (std::size_t i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
        return r;
    }

    friend bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
    friend bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
    friend bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
    friend bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }

    friend Dual sqrt(const Dual& a)
    {
        const T s = std::sqrt(a.v);
        return chain(a, s, T(0.5) / s);
    }
    friend Dual exp(const Dual& a)
    {
        const T e = std::exp(a.v);
        return chain(a, e, e);
    }
    friend Dual log(const Dual& a) { return chain(a, std::log(a.v), T(1) / a.v); }
    friend Dual abs(const Dual& a) { return a.v < 0 ? -a : a; }
    friend Dual atan2(const Dual& y, const Dual& x)
    {
        Dual r(std::atan2(y.v, x.v));
        const T den = x.v * x.v + y.v * y.v;
        if (den == 0) return r;
        for (std::size_t i = 0; i < N; ++i) r.d[i] = (x.v * y.d[i] - y.v * x.d[i]) / den;
        return r;
    }
    friend Dual max(const Dual& a, const Dual& b) { return a.v >= b.v ? a : b; }
    friend Dual min(const Dual& a, const Dual& b) { return a.v <= b.v ? a : b; }
};

template <std::floating_point T>
T value_of(T x)
{
    return x;
}

template <std::floating_point T, std::size_t N>
T value_of(const Dual<T, N>& x)
{
    return x.v;
}

} // namespace lyv5
