#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

#include "clregime/descent.hpp"

using namespace clregime;

namespace {

Matrix diag(std::vector<double> entries) {
    Matrix a(entries.size(), entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) a.at(i, i) = entries[i];
    return a;
}

Matrix scaled_identity(std::size_t d, double s) { return diag(std::vector<double>(d, s)); }

double eigen_lambda_max(const Matrix& a) {
    Eigen::MatrixXd m(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) m(static_cast<Eigen::Index>(i),
                                                    static_cast<Eigen::Index>(j)) = a.at(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    return solver.eigenvalues().maxCoeff();
}

}  // namespace

TEST_CASE("quadratic objective validates its matrix", "[descent]") {
    CHECK_THROWS_AS(QuadraticObjective::make(Matrix(2, 3), ParamVector(2, 0.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(QuadraticObjective::make(Matrix(2, 2), ParamVector(3, 0.0)),
                    std::invalid_argument);
    Matrix asym(2, 2);
    asym.at(0, 1) = 1.0;
    CHECK_THROWS_AS(QuadraticObjective::make(asym, ParamVector(2, 0.0)), std::invalid_argument);
}

TEST_CASE("quadratic value and gradient worked example", "[descent]") {
    const auto obj = QuadraticObjective::make(scaled_identity(2, 2.0), {1.0, 1.0});
    const auto [v0, g0] = quad_value_and_grad(obj, {0.0, 0.0});
    CHECK(v0 == 0.0);
    CHECK(g0 == ParamVector{1.0, 1.0});
    const auto [v1, g1] = quad_value_and_grad(obj, {1.0, 1.0});
    CHECK(v1 == Catch::Approx(4.0).margin(1e-15));  // 1/2*4 + 2
    CHECK(g1 == ParamVector{3.0, 3.0});
}

TEST_CASE("quadratic gradient matches finite differences", "[descent]") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 1 + rng.next_bounded(6);
        QuadraticObjective obj = random_psd_objective(d, rng);
        ParamVector theta(d);
        for (auto& t : theta) t = rng.next_gaussian();
        const ParamVector analytic = quad_value_and_grad(obj, theta).second;
        const ParamVector numeric = central_difference(
            [&obj](const ParamVector& th) { return quad_value_and_grad(obj, th).first; }, theta,
            1e-6);
        for (std::size_t i = 0; i < d; ++i)
            CHECK(analytic[i] == Catch::Approx(numeric[i]).margin(1e-6));
    }
}

TEST_CASE("smoothness constant on diagonal matrices", "[descent]") {
    const auto three_i = QuadraticObjective::make(scaled_identity(4, 3.0), ParamVector(4, 0.0));
    CHECK(smoothness_constant(three_i) == Catch::Approx(3.0).epsilon(1e-9));
    const auto mixed = QuadraticObjective::make(diag({1.0, 5.0, 2.0}), ParamVector(3, 0.0));
    CHECK(smoothness_constant(mixed) == Catch::Approx(5.0).epsilon(1e-9));
    const auto one = QuadraticObjective::make(diag({4.0}), ParamVector(1, 0.0));
    CHECK(smoothness_constant(one) == Catch::Approx(4.0).epsilon(1e-10));
}

TEST_CASE("smoothness constant of the zero matrix is zero", "[descent]") {
    const auto flat = QuadraticObjective::make(Matrix(3, 3), ParamVector(3, 0.0));
    CHECK(smoothness_constant(flat) == 0.0);
}

TEST_CASE("smoothness constant agrees with a dense eigensolver", "[descent]") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t d = 1 + rng.next_bounded(10);
        const QuadraticObjective obj = random_psd_objective(d, rng);
        const double want = eigen_lambda_max(obj.a);
        const double got = smoothness_constant(obj);
        CHECK(got == Catch::Approx(want).epsilon(1e-8));
    }
}

TEST_CASE("smoothness constant is deterministic", "[descent]") {
    Rng rng(29);
    const QuadraticObjective obj = random_psd_objective(6, rng);
    CHECK(smoothness_constant(obj) == smoothness_constant(obj));
}

TEST_CASE("descent bound is tight at eta = 1/L on an isotropic quadratic", "[descent]") {
    // J = |theta|^2, L = 2; the full step lands on the minimizer
    const auto obj = QuadraticObjective::make(scaled_identity(2, 2.0), ParamVector(2, 0.0));
    const auto sub = TrainableSubspace::from_mask({1, 1}, "full");
    const auto rep = check_descent(obj, {1.0, 0.0}, sub, 0.5);
    CHECK(rep.smoothness == Catch::Approx(2.0).epsilon(1e-10));
    CHECK(rep.value_before == Catch::Approx(1.0).margin(1e-12));
    CHECK(rep.lhs == Catch::Approx(0.0).margin(1e-12));
    CHECK(rep.proj_grad_norm_sq == Catch::Approx(4.0).margin(1e-9));
    CHECK(rep.rhs == Catch::Approx(0.0).margin(1e-9));
    CHECK(rep.holds);
    CHECK(rep.holds_intermediate);
    CHECK(std::abs(rep.lhs - rep.rhs) <= 1e-9 * 2.0);  // equality up to tolerance
    CHECK(std::abs(rep.rhs_intermediate - rep.rhs) <= 1e-9);
}

TEST_CASE("descent bound at a stationary point is an equality", "[descent]") {
    // minimizer of 1/2 theta'A theta + b'theta solves A theta = -b
    const auto obj = QuadraticObjective::make(diag({2.0, 4.0}), {2.0, -4.0});
    const ParamVector minimizer{-1.0, 1.0};
    const auto sub = TrainableSubspace::from_mask({1, 1}, "full");
    const auto rep = check_descent(obj, minimizer, sub, 0.25);  // 1/L = 0.25
    CHECK(rep.proj_grad_norm_sq == Catch::Approx(0.0).margin(1e-12));
    CHECK(rep.lhs == Catch::Approx(rep.value_before).margin(1e-12));
    CHECK(rep.holds);
}

TEST_CASE("descent check with an empty mask degenerates to equality", "[descent]") {
    Rng rng(31);
    const QuadraticObjective obj = random_psd_objective(4, rng);
    const auto sub = TrainableSubspace::from_mask({0, 0, 0, 0}, "frozen");
    const auto rep = check_descent(obj, {1.0, -1.0, 0.5, 2.0}, sub, 1e-3);
    CHECK(rep.proj_grad_norm_sq == 0.0);
    CHECK(rep.lhs == rep.value_before);
    CHECK(rep.rhs == rep.value_before);
    CHECK(rep.holds);
}

TEST_CASE("check_descent rejects bad step sizes", "[descent]") {
    const auto obj = QuadraticObjective::make(scaled_identity(2, 2.0), ParamVector(2, 0.0));
    const auto sub = TrainableSubspace::from_mask({1, 1}, "full");
    CHECK_THROWS_AS(check_descent(obj, {1.0, 1.0}, sub, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(check_descent(obj, {1.0, 1.0}, sub, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(check_descent(obj, {1.0, 1.0}, sub, 0.5001), std::invalid_argument);
    CHECK_NOTHROW(check_descent(obj, {1.0, 1.0}, sub, 0.5));
}

TEST_CASE("projected gradient inner product identity", "[descent]") {
    Rng rng(37);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.next_bounded(12);
        ParamVector g(d);
        for (auto& x : g) x = rng.next_gaussian();
        std::vector<std::uint8_t> mask(d);
        for (auto& m : mask) m = static_cast<std::uint8_t>(rng.next_bounded(2));
        const auto sub = TrainableSubspace::from_mask(mask, "rand");
        const ParamVector pg = project(sub, g);
        CHECK(std::abs(dot(g, pg) - norm_sq(pg)) <= 1e-12 * std::max(1.0, norm_sq(pg)));
    }
}

TEST_CASE("fuzzing the bound finds no violations", "[descent]") {
    std::vector<DescentReport> reports;
    const FuzzSummary summary = fuzz_descent(1000, 20, 1, false, &reports);
    CHECK(summary.trials == 1000);
    CHECK(summary.violations == 0);
    CHECK(summary.worst_gap <= 1e-9);
    REQUIRE(reports.size() == 1000);
    for (const auto& rep : reports) {
        CHECK(rep.holds);
        CHECK(rep.holds_intermediate);
        CHECK(rep.eta > 0.0);
        if (rep.smoothness > 1e-12) CHECK(rep.eta <= 1.0 / rep.smoothness + 1e-12);
        // the intermediate bound is the tighter of the two below 1/L
        CHECK(rep.rhs_intermediate <= rep.rhs + 1e-12 * std::max(1.0, std::abs(rep.rhs)));
    }
}

TEST_CASE("fuzzing at the eta = 1/L boundary stays clean", "[descent]") {
    std::vector<DescentReport> reports;
    const FuzzSummary summary = fuzz_descent(300, 12, 2, true, &reports);
    CHECK(summary.violations == 0);
    for (const auto& rep : reports) {
        if (rep.smoothness > 1e-12)
            CHECK(rep.eta * rep.smoothness == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fuzz summaries are deterministic in the seed", "[descent]") {
    const FuzzSummary a = fuzz_descent(50, 8, 77);
    const FuzzSummary b = fuzz_descent(50, 8, 77);
    CHECK(a.violations == b.violations);
    CHECK(a.worst_gap == b.worst_gap);
    CHECK_THROWS_AS(fuzz_descent(0, 8, 1), std::invalid_argument);
    CHECK_THROWS_AS(fuzz_descent(10, 0, 1), std::invalid_argument);
}
