#pragma once

// Forward-mode dual numbers with a fixed number of tangent directions. Used to
// push exact derivatives through the articulatory control model.

#include <array>
#include <cmath>
#include <cstddef>

namespace tractmatch {

template <std::size_t N>
struct Dual {
    double v = 0.0;
    std::array<double, N> d{};

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: implicit lift of constants
    static Dual variable(double value, std::size_t index) {
        Dual x(value);
        x.d[index] = 1.0;
        return x;
    }

    Dual& operator+=(const Dual& o) {
        v += o.v;
        for (std::size_t i = 0; i < N; ++i) d[i] += o.d[i];
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        for (std::size_t i = 0; i < N; ++i) d[i] -= o.d[i];
        return *this;
    }
    Dual& operator*=(const Dual& o) {
        for (std::size_t i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
        v *= o.v;
        return *this;
    }
    Dual& operator/=(const Dual& o) {
        const double inv = 1.0 / o.v;
        for (std::size_t i = 0; i < N; ++i) d[i] = (d[i] - v * inv * o.d[i]) * inv;
        v *= inv;
        return *this;
    }
};

template <std::size_t N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <std::size_t N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <std::size_t N> Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <std::size_t N> Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }
template <std::size_t N> Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <std::size_t N> Dual<N> operator+(double a, Dual<N> b) { b.v += a; return b; }
template <std::size_t N> Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <std::size_t N> Dual<N> operator-(double a, const Dual<N>& b) { return Dual<N>(a) - b; }
template <std::size_t N> Dual<N> operator-(Dual<N> a) {
    a.v = -a.v;
    for (auto& x : a.d) x = -x;
    return a;
}
template <std::size_t N> Dual<N> operator*(Dual<N> a, double b) {
    a.v *= b;
    for (auto& x : a.d) x *= b;
    return a;
}
template <std::size_t N> Dual<N> operator*(double a, Dual<N> b) { return b * a; }
template <std::size_t N> Dual<N> operator/(Dual<N> a, double b) { return a * (1.0 / b); }
template <std::size_t N> Dual<N> operator/(double a, const Dual<N>& b) { return Dual<N>(a) / b; }

template <std::size_t N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <std::size_t N> bool operator<(const Dual<N>& a, double b) { return a.v < b; }
template <std::size_t N> bool operator<(double a, const Dual<N>& b) { return a < b.v; }
template <std::size_t N> bool operator<=(const Dual<N>& a, double b) { return a.v <= b; }
template <std::size_t N> bool operator>(const Dual<N>& a, double b) { return a.v > b; }
template <std::size_t N> bool operator>=(const Dual<N>& a, double b) { return a.v >= b; }

template <std::size_t N>
Dual<N> chain(const Dual<N>& x, double value, double slope) {
    Dual<N> out(value);
    for (std::size_t i = 0; i < N; ++i) out.d[i] = slope * x.d[i];
    return out;
}

template <std::size_t N> Dual<N> sin(const Dual<N>& x) { return chain(x, std::sin(x.v), std::cos(x.v)); }
template <std::size_t N> Dual<N> cos(const Dual<N>& x) { return chain(x, std::cos(x.v), -std::sin(x.v)); }
template <std::size_t N> Dual<N> abs(const Dual<N>& x) { return x.v < 0.0 ? -x : x; }

// value() works uniformly on doubles and duals.
inline double value(double x) { return x; }
template <std::size_t N> double value(const Dual<N>& x) { return x.v; }

}  // namespace tractmatch
