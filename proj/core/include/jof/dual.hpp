#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>

namespace jof {

// Forward-mode number carrying N partial derivatives; used for pose Jacobians
// through camera composition, projection, and backprojection.
template <int N>
struct Dual {
    double v = 0.0;
    Eigen::Matrix<double, N, 1> g = Eigen::Matrix<double, N, 1>::Zero();

    Dual() = default;
    Dual(double value) : v(value) {} // NOLINT: implicit lift of constants
    static Dual seed(double value, int index) {
        Dual d(value);
        d.g[index] = 1.0;
        return d;
    }

    Dual operator-() const {
        Dual r(-v);
        r.g = -g;
        return r;
    }
    Dual& operator+=(const Dual& o) {
        v += o.v;
        g += o.g;
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        g -= o.g;
        return *this;
    }
};

template <int N> Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N> Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }

template <int N> Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
    Dual<N> r(a.v * b.v);
    r.g = a.g * b.v + b.g * a.v;
    return r;
}

template <int N> Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
    Dual<N> r(a.v / b.v);
    r.g = (a.g * b.v - b.g * a.v) / (b.v * b.v);
    return r;
}

template <int N> bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N> bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }

template <int N> Dual<N> sin(const Dual<N>& a) {
    Dual<N> r(std::sin(a.v));
    r.g = std::cos(a.v) * a.g;
    return r;
}

template <int N> Dual<N> cos(const Dual<N>& a) {
    Dual<N> r(std::cos(a.v));
    r.g = -std::sin(a.v) * a.g;
    return r;
}

template <int N> Dual<N> sqrt(const Dual<N>& a) {
    const double s = std::sqrt(a.v);
    Dual<N> r(s);
    r.g = a.g / (2.0 * s);
    return r;
}

template <int N> Dual<N> abs(const Dual<N>& a) { return a.v < 0.0 ? -a : a; }

inline double value_of(double x) { return x; }
template <int N> double value_of(const Dual<N>& x) { return x.v; }

using std::abs;
using std::cos;
using std::sin;
using std::sqrt;

} // namespace jof
