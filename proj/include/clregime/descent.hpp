// Progress-bound verifier on quadratics. For J(theta) = 1/2 theta'A theta
// + b'theta with A symmetric PSD, L = lambda_max(A) is the exact smoothness
// constant, so the projected-descent bound
//   J(theta - eta*P_S grad) <= J(theta) - (eta/2)|P_S grad|^2,  0 < eta <= 1/L
// can be checked sharply. The intermediate form with the L*eta^2/2 term is
// verified alongside it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "clregime/core.hpp"
#include "clregime/regime.hpp"
#include "clregime/rng.hpp"

namespace clregime {

struct QuadraticObjective {
    Matrix a;  // symmetric PSD, d x d
    ParamVector b;

    static QuadraticObjective make(Matrix a, ParamVector b) {
        if (a.rows != a.cols) throw std::invalid_argument("QuadraticObjective: A must be square");
        if (b.size() != a.rows) throw std::invalid_argument("QuadraticObjective: b length mismatch");
        for (std::size_t i = 0; i < a.rows; ++i)
            for (std::size_t j = i + 1; j < a.cols; ++j)
                if (a.at(i, j) != a.at(j, i))
                    throw std::invalid_argument("QuadraticObjective: A not symmetric");
        QuadraticObjective obj;
        obj.a = std::move(a);
        obj.b = std::move(b);
        return obj;
    }

    std::size_t dim() const { return b.size(); }
};

inline ParamVector matvec(const Matrix& a, const ParamVector& x) {
    if (a.cols != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
    ParamVector y(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

inline std::pair<double, ParamVector> quad_value_and_grad(const QuadraticObjective& obj,
                                                          const ParamVector& theta) {
    if (theta.size() != obj.dim())
        throw std::invalid_argument("quad_value_and_grad: dimension mismatch");
    ParamVector grad = matvec(obj.a, theta);
    double value = 0.5 * dot(theta, grad) + dot(obj.b, theta);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += obj.b[i];
    return {value, std::move(grad)};
}

// Largest eigenvalue by power iteration with a Rayleigh-quotient stop at
// relative tolerance 1e-10. PSD input means no sign juggling. Throws when
// the quotient has not settled within the iteration cap.
inline double smoothness_constant(const QuadraticObjective& obj, double rel_tol = 1e-10,
                                  int max_iter = 100000) {
    const std::size_t d = obj.dim();
    if (d == 0) throw std::invalid_argument("smoothness_constant: empty objective");
    Rng rng(derive_seed(0x706f776572ULL, "power_iteration"));
    ParamVector v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = rng.next_gaussian();
    double vnorm = norm(v);
    for (std::size_t i = 0; i < d; ++i) v[i] /= vnorm;

    double lambda_prev = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        ParamVector av = matvec(obj.a, v);
        const double lambda = dot(v, av);  // Rayleigh quotient, |v| = 1
        const double av_norm = norm(av);
        if (av_norm == 0.0) return 0.0;  // v in the null space and A v = 0
        for (std::size_t i = 0; i < d; ++i) v[i] = av[i] / av_norm;
        if (iter > 0 && std::abs(lambda - lambda_prev) <= rel_tol * std::max(1.0, std::abs(lambda)))
            return lambda;
        lambda_prev = lambda;
    }
    throw std::runtime_error("smoothness_constant: power iteration did not converge after " +
                             std::to_string(max_iter) + " iterations");
}

struct DescentReport {
    double value_before = 0.0;       // J(theta)
    double lhs = 0.0;                // J(theta_plus)
    double rhs = 0.0;                // J(theta) - (eta/2)|P_S grad|^2
    double rhs_intermediate = 0.0;   // with the +L*eta^2/2 |P_S grad|^2 term
    double proj_grad_norm_sq = 0.0;  // |P_S grad J(theta)|^2
    double smoothness = 0.0;
    double eta = 0.0;
    bool holds = false;
    bool holds_intermediate = false;
};

// Single-point check. tol = 1e-9 * (1 + |J(theta)|) absorbs cancellation
// when the bound is tight (equality happens at eta = 1/L on quadratics).
inline DescentReport check_descent(const QuadraticObjective& obj, const ParamVector& theta,
                                   const TrainableSubspace& sub, double eta) {
    check_subspace_length(sub, obj.dim());
    const double big_l = smoothness_constant(obj);
    if (!(eta > 0.0)) throw std::invalid_argument("check_descent: eta must be > 0");
    if (big_l > 0.0 && eta > 1.0 / big_l + 1e-12)
        throw std::invalid_argument("check_descent: eta exceeds 1/L");

    auto [value, grad] = quad_value_and_grad(obj, theta);
    ParamVector pg = project(sub, grad);
    const double pg_sq = norm_sq(pg);

    ParamVector theta_plus = theta;
    axpy(-eta, pg, theta_plus);
    const double value_plus = quad_value_and_grad(obj, theta_plus).first;

    DescentReport rep;
    rep.value_before = value;
    rep.lhs = value_plus;
    rep.proj_grad_norm_sq = pg_sq;
    rep.smoothness = big_l;
    rep.eta = eta;
    rep.rhs = value - 0.5 * eta * pg_sq;
    rep.rhs_intermediate = value - eta * pg_sq + 0.5 * big_l * eta * eta * pg_sq;
    const double tol = 1e-9 * (1.0 + std::abs(value));
    rep.holds = rep.lhs <= rep.rhs + tol;
    rep.holds_intermediate = rep.lhs <= rep.rhs_intermediate + tol;
    return rep;
}

struct FuzzSummary {
    int trials = 0;
    int violations = 0;
    double worst_gap = 0.0;  // max of lhs - rhs over all trials (<= 0 when clean)
    std::uint64_t seed = 0;
};

// Random PSD objective with entries of M ~ N(0,1), A = M'M.
inline QuadraticObjective random_psd_objective(std::size_t dim, Rng& rng) {
    Matrix m(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) m.at(i, j) = rng.next_gaussian();
    Matrix a(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < dim; ++k) acc += m.at(k, i) * m.at(k, j);
            a.at(i, j) = acc;
        }
    ParamVector b(dim);
    for (std::size_t i = 0; i < dim; ++i) b[i] = rng.next_gaussian();
    return QuadraticObjective::make(std::move(a), std::move(b));
}

// Random objectives, points, masks, and step sizes in (0, 1/L], counting
// bound violations. eta_at_boundary pins every trial to eta = 1/L exactly.
inline FuzzSummary fuzz_descent(int trials, std::size_t dim_max, std::uint64_t seed,
                                bool eta_at_boundary = false,
                                std::vector<DescentReport>* reports = nullptr) {
    if (trials < 1) throw std::invalid_argument("fuzz_descent: trials must be >= 1");
    if (dim_max < 1) throw std::invalid_argument("fuzz_descent: dim_max must be >= 1");
    Rng rng(derive_seed(seed, "fuzz_descent"));
    FuzzSummary summary;
    summary.trials = trials;
    summary.seed = seed;
    summary.worst_gap = -std::numeric_limits<double>::infinity();

    for (int trial = 0; trial < trials; ++trial) {
        const std::size_t dim = 1 + static_cast<std::size_t>(rng.next_bounded(dim_max));
        QuadraticObjective obj = random_psd_objective(dim, rng);
        ParamVector theta(dim);
        for (std::size_t i = 0; i < dim; ++i) theta[i] = 2.0 * rng.next_symmetric(1.0);
        std::vector<std::uint8_t> mask(dim);
        for (std::size_t i = 0; i < dim; ++i) mask[i] = rng.next_bounded(2) ? 1 : 0;
        const TrainableSubspace sub = TrainableSubspace::from_mask(mask, "fuzz");

        const double big_l = smoothness_constant(obj);
        double eta;
        if (big_l <= 1e-12) {
            eta = 1.0;  // flat objective, any step descends
        } else if (eta_at_boundary) {
            eta = 1.0 / big_l;
        } else {
            eta = (1.0 - rng.next_double()) / big_l;  // (0, 1/L]
        }
        const DescentReport rep = check_descent(obj, theta, sub, eta);
        if (!rep.holds || !rep.holds_intermediate) ++summary.violations;
        summary.worst_gap = std::max(summary.worst_gap, rep.lhs - rep.rhs);
        if (reports) reports->push_back(rep);
    }
    return summary;
}

}  // namespace clregime
