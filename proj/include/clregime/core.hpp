// Basic numeric building blocks: flat parameter vectors and a small
// row-major matrix. Everything downstream works in 64-bit reals.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace clregime {

// Flat view of all model parameters (and every gradient-valued vector).
using ParamVector = std::vector<double>;

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
};

inline double dot(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm_sq(const ParamVector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double norm(const ParamVector& v) { return std::sqrt(norm_sq(v)); }

// y += alpha * x
inline void axpy(double alpha, const ParamVector& x, ParamVector& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(const ParamVector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) {
    for (double x : m.data)
        if (!std::isfinite(x)) return false;
    return true;
}

// Central-difference gradient of an arbitrary scalar function of a
// parameter vector. Used as the independent oracle for every analytic
// gradient in the library.
inline ParamVector central_difference(const std::function<double(const ParamVector&)>& f,
                                      ParamVector theta, double epsilon) {
    if (!(epsilon > 0.0))
        throw std::invalid_argument("central_difference: epsilon must be > 0");
    ParamVector grad(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + epsilon;
        const double fp = f(theta);
        theta[i] = saved - epsilon;
        const double fm = f(theta);
        theta[i] = saved;
        grad[i] = (fp - fm) / (2.0 * epsilon);
    }
    return grad;
}

}  // namespace clregime
