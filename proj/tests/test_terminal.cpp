#include "doctest.h"

#include <cmath>

#include "ampc/models.hpp"
#include "ampc/rng.hpp"
#include "ampc/terminal.hpp"

using namespace ampc;

namespace {

TerminalIngredients scalar_ingredients(double P, double Kf, double lo, double hi) {
    TerminalIngredients ing;
    ing.P = Eigen::MatrixXd::Constant(1, 1, P);
    ing.K_f = Eigen::MatrixXd::Constant(1, 1, Kf);
    ing.K_delta = ing.K_f;
    ing.x_ref = Eigen::VectorXd::Zero(1);
    ing.u_ref = Eigen::VectorXd::Zero(1);
    ing.input_lo = Eigen::VectorXd::Constant(1, lo);
    ing.input_hi = Eigen::VectorXd::Constant(1, hi);
    return ing;
}

}  // namespace

TEST_SUITE_BEGIN("terminal");

TEST_CASE("linearize kinematic cruise matches hand-derived entries") {
    // In-frame cruise equilibrium at v_ref = 1 m/s via config override.
    Config cfg = Config::parse("[kinematic_st]\nv_ref = 1\n");
    BenchmarkModel m = make_benchmark(BenchmarkId::KinematicST, cfg);
    auto [A, B] = linearize(m, m.x_ref, m.u_ref);
    CHECK(A(0, 3) == doctest::Approx(0.01).epsilon(1e-6));   // dp_x+/dv = T_s cos(psi)
    CHECK(A(1, 2) == doctest::Approx(0.01).epsilon(1e-6));   // dp_y+/dpsi = T_s v
    CHECK(B(2, 0) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(B(3, 1) == doctest::Approx(0.01).epsilon(1e-6));
    // Position columns are pure identity columns: nothing depends on p.
    CHECK((A.col(0) - Eigen::Vector4d(1, 0, 0, 0)).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((A.col(1) - Eigen::Vector4d(0, 1, 0, 0)).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("linearize quadcopter hover thrust column") {
    BenchmarkModel m = make_quadcopter();
    auto [A, B] = linearize(m, m.x_ref, m.u_ref);
    CHECK(B(5, 2) == doctest::Approx(0.1 * 0.91 / 1.3).epsilon(1e-7));  // T_s k_T / m
    // Cross-check the finite-difference linearization against the analytic one.
    Eigen::MatrixXd Aa, Ba;
    m.step_jacobians(m.x_ref, m.u_ref, Aa, Ba);
    CHECK((A - Aa).lpNorm<Eigen::Infinity>() < 1e-7);
    CHECK((B - Ba).lpNorm<Eigen::Infinity>() < 1e-7);
}

TEST_CASE("linearize rejects non-equilibria") {
    BenchmarkModel m = make_kinematic_st();
    StateVector x = m.x_ref;
    x[2] = 0.3;  // heading off the frame direction: positions drift
    CHECK_THROWS_AS(linearize(m, x, m.u_ref), NotAnEquilibrium);
}

TEST_CASE("solve_dare scalar golden ratio") {
    Eigen::MatrixXd one = Eigen::MatrixXd::Constant(1, 1, 1.0);
    auto [P, K] = solve_dare(one, one, one, one);
    CHECK(P(0, 0) == doctest::Approx((1.0 + std::sqrt(5.0)) / 2.0).epsilon(1e-9));
    CHECK(K(0, 0) == doctest::Approx(P(0, 0) / (1.0 + P(0, 0))).epsilon(1e-9));
}

TEST_CASE("solve_dare deadbeat open loop") {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3, 3);
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(3, 1 + 1).leftCols(2);
    Eigen::MatrixXd Q = Eigen::Vector3d(1, 2, 3).asDiagonal();
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2);
    auto [P, K] = solve_dare(A, B, Q, R);
    CHECK((P - Q).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(K.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("solve_dare residual on random stable systems") {
    Rng rng(0xda4e);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 2 + static_cast<int>(rng.integer(4));
        const int m = 1 + static_cast<int>(rng.integer(2));
        Eigen::MatrixXd A(n, n), B(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-1, 1);
        A *= 0.9 / std::max(spectral_radius(A), 1e-6);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) B(i, j) = rng.uniform(-1, 1);
        Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(n, n);
        Eigen::MatrixXd R = Eigen::MatrixXd::Identity(m, m);
        auto [P, K] = solve_dare(A, B, Q, R);
        CHECK((P - P.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
        Eigen::LLT<Eigen::MatrixXd> llt(P);
        CHECK(llt.info() == Eigen::Success);
        Eigen::MatrixXd S = R + B.transpose() * P * B;
        Eigen::MatrixXd res = A.transpose() * P * A - P -
                              A.transpose() * P * B * S.llt().solve(B.transpose() * P * A) + Q;
        CHECK(res.lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("compute_alpha hits the cap without constraints") {
    TerminalIngredients ing = scalar_ingredients(1.0, 0.1, -1e9, 1e9);
    const double inf = std::numeric_limits<double>::infinity();
    double alpha = compute_alpha(ing, Eigen::VectorXd::Constant(1, -inf),
                                 Eigen::VectorXd::Constant(1, inf), {}, false, 10.0);
    CHECK(alpha == 10.0);
}

TEST_CASE("compute_alpha scalar box gives alpha = 1") {
    TerminalIngredients ing = scalar_ingredients(1.0, 0.1, -1e9, 1e9);
    double alpha = compute_alpha(ing, Eigen::VectorXd::Constant(1, -1.0),
                                 Eigen::VectorXd::Constant(1, 1.0), {}, false, 10.0);
    CHECK(alpha == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("compute_alpha accounts for obstacles via the position shadow") {
    TerminalIngredients ing;
    ing.P = Eigen::Matrix2d::Identity();
    ing.K_f = Eigen::MatrixXd::Zero(1, 2);
    ing.x_ref = Eigen::Vector2d(0, 0);
    ing.u_ref = Eigen::VectorXd::Zero(1);
    ing.input_lo = Eigen::VectorXd::Constant(1, -1);
    ing.input_hi = Eigen::VectorXd::Constant(1, 1);
    ObstacleSet obs;
    obs.r_safe = 0.1;
    obs.centers = {Eigen::Vector2d(0.5, 0.0)};
    const double inf = std::numeric_limits<double>::infinity();
    double alpha = compute_alpha(ing, Eigen::Vector2d(-inf, -inf), Eigen::Vector2d(inf, inf),
                                 obs, true, 10.0);
    CHECK(alpha == doctest::Approx(0.16).epsilon(1e-6));  // radius 0.4 = 0.5 - 0.1
}

TEST_CASE("halving input bounds never increases alpha") {
    Rng rng(0xa1fa);
    for (int trial = 0; trial < 20; ++trial) {
        double kf = rng.uniform(0.1, 2.0);
        double hi = rng.uniform(0.2, 3.0);
        TerminalIngredients ing = scalar_ingredients(1.0, kf, -hi, hi);
        const double inf = std::numeric_limits<double>::infinity();
        Eigen::VectorXd slo = Eigen::VectorXd::Constant(1, -inf);
        Eigen::VectorXd shi = Eigen::VectorXd::Constant(1, inf);
        double a1 = compute_alpha(ing, slo, shi, {}, false, 10.0);
        ing.input_lo /= 2;
        ing.input_hi /= 2;
        double a2 = compute_alpha(ing, slo, shi, {}, false, 10.0);
        CHECK(a2 <= a1 + 1e-12);
    }
}

TEST_CASE("in_terminal_set boundary convention") {
    TerminalIngredients ing = scalar_ingredients(1.0, 0.5, -1, 1);
    ing.alpha = 1.0;
    CHECK(in_terminal_set(Eigen::VectorXd::Zero(1), ing));
    CHECK(in_terminal_set(Eigen::VectorXd::Constant(1, 1.0), ing));   // exactly on boundary
    CHECK(!in_terminal_set(Eigen::VectorXd::Constant(1, std::sqrt(2.0)), ing));
    CHECK_THROWS_AS(in_terminal_set(Eigen::VectorXd::Zero(2), ing), DimensionMismatch);
}

TEST_CASE("terminal_control reference, gain and clamping") {
    // Scalar system A=B=1: the Riccati gain is K = P/(1+P) = 0.618..., and the
    // stabilizing terminal law is u = u_ref - K (x - x_ref).
    TerminalIngredients ing = scalar_ingredients(1.618033988749895, 0.618033988749895, -1, 1);
    bool clamped = false;
    ControlInput u = terminal_control(Eigen::VectorXd::Zero(1), ing, &clamped);
    CHECK(u[0] == 0.0);
    CHECK(!clamped);
    u = terminal_control(Eigen::VectorXd::Constant(1, -1.0), ing, &clamped);
    CHECK(u[0] == doctest::Approx(0.618033988749895).epsilon(1e-12));
    CHECK(!clamped);
    u = terminal_control(Eigen::VectorXd::Constant(1, -10.0), ing, &clamped);
    CHECK(u[0] == 1.0);
    CHECK(clamped);
}

TEST_CASE("design_terminal certifies all three benchmarks") {
    for (BenchmarkId id :
         {BenchmarkId::Quadcopter, BenchmarkId::KinematicST, BenchmarkId::DynamicST}) {
        CAPTURE(to_string(id));
        BenchmarkModel m = make_benchmark(id);
        TerminalIngredients ing = design_terminal(m);
        CHECK(ing.alpha > 1e-9);
        CHECK((ing.P - ing.P.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);

        auto [A, B] = linearize(m, m.x_ref, m.u_ref);
        CHECK(spectral_radius(A - B * ing.K_f) < 1.0);
        CHECK(spectral_radius(A - B * ing.K_delta) < 1.0);

        // Sampled invariance and Lyapunov decrease on 1000 deterministic points.
        int checked = 0;
        for (double scale : {1.0, 0.7, 0.4}) {
            for (const StateVector& x : sample_ellipsoid(ing, 334, scale)) {
                ControlInput u = terminal_control(x, ing);
                StateVector xn = m.step(x, u);
                CHECK(in_terminal_set(xn, ing));
                Eigen::VectorXd dx = x - m.x_ref;
                Eigen::VectorXd du = u - m.u_ref;
                const double stage = dx.dot(m.Q * dx) + du.dot(m.R * du);
                CHECK(ing.terminal_cost(xn) - ing.terminal_cost(x) <= -stage + 1e-6);
                ++checked;
            }
        }
        CHECK(checked >= 1000);
    }
}

TEST_CASE("ingredients serialization round-trip and checksum") {
    BenchmarkModel m = make_kinematic_st();
    TerminalIngredients ing = design_terminal(m);
    std::string text = serialize_ingredients(ing);
    TerminalIngredients back = deserialize_ingredients(text);
    CHECK(back.alpha == ing.alpha);
    CHECK(back.P == ing.P);
    CHECK(back.K_f == ing.K_f);
    CHECK(back.K_delta == ing.K_delta);
    CHECK(back.x_ref == ing.x_ref);
    CHECK(back.u_ref == ing.u_ref);
    CHECK(back.benchmark == ing.benchmark);
    CHECK(serialize_ingredients(back) == text);  // stable bytes
    CHECK(ingredients_checksum(back) == ingredients_checksum(ing));

    std::string tampered = text;
    tampered[text.find("alpha") + 7] = '9';
    CHECK_THROWS_AS(deserialize_ingredients(tampered), IoError);
}

TEST_SUITE_END();
