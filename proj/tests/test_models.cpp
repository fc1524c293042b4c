#include "doctest.h"

#include <cmath>

#include "ampc/models.hpp"
#include "ampc/rng.hpp"
#include "test_support.hpp"

using namespace ampc;
using ampc_test::euler_fine;

TEST_SUITE_BEGIN("models");

TEST_CASE("quadcopter hover equilibrium is a fixed point") {
    BenchmarkModel m = make_quadcopter();
    StateVector x = StateVector::Zero(10);
    ControlInput u = m.u_ref;
    CHECK(u[2] == doctest::Approx(14.014285714285714).epsilon(1e-12));
    StateVector xp = m.step(x, u);
    CHECK(xp.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("quadcopter free fall under zero input") {
    BenchmarkModel m = make_quadcopter();
    StateVector x = StateVector::Zero(10);
    ControlInput u = ControlInput::Zero(3);
    StateVector xp = m.step(x, u);
    // v3 and x3 integrate -g only; these are exact for RK4 on a constant field.
    CHECK(xp[5] == doctest::Approx(-9.81 * 0.1).epsilon(1e-14));
    CHECK(xp[2] == doctest::Approx(-9.81 * 0.1 * 0.1 / 2).epsilon(1e-14));
    for (int i : {0, 1, 3, 4, 6, 7, 8, 9}) CHECK(xp[i] == 0.0);
}

TEST_CASE("quadcopter single-step RK4 matches fine-Euler oracle near hover") {
    BenchmarkModel m = make_quadcopter();
    auto rhs = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        return ampc_test::quad_rhs_oracle(x, u, m.quad);
    };
    // The attitude loop has |eigenvalue| ~ 8.9 rad/s, so one RK4 step of
    // T_s = 0.1 tracks the exact flow to 1e-6 only for small attitude
    // excursions; the full-amplitude check below uses substeps instead.
    Rng rng(0x51ep1);
    for (int trial = 0; trial < 5; ++trial) {
        StateVector x(10);
        for (int i = 0; i < 3; ++i) x[i] = rng.uniform(-1.0, 1.0);
        for (int i = 3; i < 6; ++i) x[i] = rng.uniform(-1e-3, 1e-3);
        for (int i = 6; i < 10; ++i) x[i] = rng.uniform(-1e-5, 1e-5);
        ControlInput u(3);
        u[0] = rng.uniform(-1e-5, 1e-5);
        u[1] = rng.uniform(-1e-5, 1e-5);
        u[2] = m.quad.hover_thrust() + rng.uniform(-1e-3, 1e-3);
        StateVector ref = euler_fine(rhs, x, u, m.T_s, 500000);
        StateVector got = step_quadcopter(x, u, m.T_s, m.quad);
        CHECK((got - ref).lpNorm<Eigen::Infinity>() < 1e-6);
    }
}

TEST_CASE("quadcopter vector field validated at full amplitude via substepped RK4") {
    // The attitude loop is too fast for a single RK4 step to track the exact
    // flow at large amplitude, so the full-amplitude check runs the same
    // vector field with 100 substeps against a very fine Euler reference.
    BenchmarkModel m = make_quadcopter();
    QuadcopterParams fine = m.quad;
    fine.rk4_substeps = 100;
    auto rhs = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        return ampc_test::quad_rhs_oracle(x, u, m.quad);
    };
    Rng rng(0x51ep2);
    for (int trial = 0; trial < 3; ++trial) {
        StateVector x(10);
        for (int i = 0; i < 3; ++i) x[i] = rng.uniform(-2.0, 2.0);
        for (int i = 3; i < 6; ++i) x[i] = rng.uniform(-1.0, 1.0);
        x[6] = rng.uniform(-0.3, 0.3);
        x[7] = rng.uniform(-1.0, 1.0);
        x[8] = rng.uniform(-0.3, 0.3);
        x[9] = rng.uniform(-1.0, 1.0);
        ControlInput u(3);
        u[0] = rng.uniform(-0.7, 0.7);
        u[1] = rng.uniform(-0.7, 0.7);
        u[2] = rng.uniform(0.0, 2 * 9.81);
        StateVector ref = euler_fine(rhs, x, u, m.T_s, 1000000);
        StateVector got = step_quadcopter(x, u, m.T_s, fine);
        CHECK((got - ref).lpNorm<Eigen::Infinity>() < 1e-6);
    }
}

TEST_CASE("kinematic step reproduces the printed update equations") {
    StateVector x(4);
    x << 0, 0, 0, 2;
    ControlInput u(2);
    u << 0.1, 1;
    StateVector xp = step_kinematic(x, u, 0.01);
    CHECK(xp[0] == 0.02);
    CHECK(xp[1] == 0.0);
    CHECK(xp[2] == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(xp[3] == doctest::Approx(2.01).epsilon(1e-15));
}

TEST_CASE("kinematic zero-velocity step only turns") {
    StateVector x(4);
    x << 1.5, -2.0, 0.3, 0.0;
    ControlInput u(2);
    u << 0.2, 0.0;
    StateVector xp = step_kinematic(x, u, 0.01);
    CHECK(xp[0] == x[0]);
    CHECK(xp[1] == x[1]);
    CHECK(xp[2] == doctest::Approx(0.3 + 0.01 * 0.2).epsilon(1e-15));
    CHECK(xp[3] == x[3]);
}

TEST_CASE("kinematic step at psi = pi/2 moves along +y") {
    StateVector x(4);
    x << 0, 0, M_PI / 2, 1;
    ControlInput u = ControlInput::Zero(2);
    StateVector xp = step_kinematic(x, u, 0.01);
    CHECK(xp[1] == doctest::Approx(0.01).epsilon(1e-14));
    CHECK(std::abs(xp[0]) < 1e-17);  // cos(pi/2) rounds to ~6e-17
}

TEST_CASE("dynamic single-track straight line") {
    BicycleParams p;
    StateVector x(8);
    x << 0, 0, 0, 8.0, 0, 0, 0, 0;
    ControlInput u = ControlInput::Zero(2);
    StateVector xp = step_dynamic_bicycle(x, u, 0.01, p);
    CHECK(xp[4] == 0.0);
    CHECK(xp[5] == 0.0);
    CHECK(xp[1] == 0.0);
    CHECK(xp[0] == doctest::Approx(0.01 * 8.0).epsilon(1e-14));
}

TEST_CASE("dynamic single-track integrates steering rate exactly") {
    BicycleParams p;
    StateVector x(8);
    x << 0, 0, 0, 5.0, 0, 0, 0, 0;
    ControlInput u(2);
    u << 1.0, 0.0;
    StateVector xp = step_dynamic_bicycle(x, u, 0.01, p);
    CHECK(xp[7] == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("dynamic single-track matches fine-Euler oracle near cruise") {
    // Tire eigenvalues scale with 1/v, so the single-step map is only a 1e-6
    // approximation of the exact flow for small slip/yaw excursions.
    BicycleParams p;
    auto rhs = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        return ampc_test::bicycle_rhs_oracle(x, u, p);
    };
    Rng rng(0xb1c);
    for (int trial = 0; trial < 5; ++trial) {
        StateVector x(8);
        x << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.3, 0.3),
            rng.uniform(5.0, 10.0), rng.uniform(-5e-4, 5e-4), rng.uniform(-5e-4, 5e-4),
            rng.uniform(-2, 2), rng.uniform(-5e-4, 5e-4);
        ControlInput u(2);
        u << rng.uniform(-0.05, 0.05), rng.uniform(-6, 3.2);
        StateVector ref = euler_fine(rhs, x, u, 0.01, 1000000);
        StateVector got = step_dynamic_bicycle(x, u, 0.01, p);
        CHECK((got - ref).lpNorm<Eigen::Infinity>() < 1e-6);
    }
}

TEST_CASE("dynamic single-track vector field validated at full amplitude") {
    BicycleParams p;
    BicycleParams fine = p;
    fine.rk4_substeps = 100;
    auto rhs = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        return ampc_test::bicycle_rhs_oracle(x, u, p);
    };
    Rng rng(0xb1d);
    for (int trial = 0; trial < 3; ++trial) {
        StateVector x(8);
        x << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.3, 0.3),
            rng.uniform(3.0, 8.0), rng.uniform(-0.5, 0.5), rng.uniform(-0.05, 0.05),
            rng.uniform(-2, 2), rng.uniform(-0.3, 0.3);
        ControlInput u(2);
        u << rng.uniform(-1, 1), rng.uniform(-6, 3.2);
        StateVector ref = euler_fine(rhs, x, u, 0.01, 1000000);
        StateVector got = step_dynamic_bicycle(x, u, 0.01, fine);
        CHECK((got - ref).lpNorm<Eigen::Infinity>() < 1e-6);
    }
}

TEST_CASE("dynamic single-track rejects low speed") {
    BicycleParams p;
    StateVector x = StateVector::Zero(8);
    x[3] = 0.4;
    ControlInput u = ControlInput::Zero(2);
    CHECK_THROWS_AS(step_dynamic_bicycle(x, u, 0.01, p), LowSpeedSingularity);
}

TEST_CASE("steps are deterministic") {
    BenchmarkModel m = make_dynamic_st();
    StateVector x(8);
    x << 0.3, -0.2, 0.1, 5.5, 0.2, 0.01, 0.5, 0.1;
    ControlInput u(2);
    u << 0.3, 1.0;
    StateVector a = m.step(x, u);
    StateVector b = m.step(x, u);
    CHECK(a == b);
}

TEST_CASE("analytic step Jacobians match central differences") {
    for (BenchmarkId id :
         {BenchmarkId::Quadcopter, BenchmarkId::KinematicST, BenchmarkId::DynamicST}) {
        BenchmarkModel m = make_benchmark(id);
        Rng rng(0xacc + static_cast<int>(id));
        StateVector x = m.x_ref;
        for (int i = 0; i < m.n_x; ++i) x[i] += rng.uniform(-0.05, 0.05);
        ControlInput u = m.u_ref;
        for (int i = 0; i < m.n_u; ++i) u[i] += rng.uniform(-0.05, 0.05);
        Eigen::MatrixXd A, B;
        m.step_jacobians(x, u, A, B);
        const double h = 1e-6;
        for (int j = 0; j < m.n_x; ++j) {
            StateVector xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            Eigen::VectorXd col = (m.step(xp, u) - m.step(xm, u)) / (2 * h);
            CHECK((A.col(j) - col).lpNorm<Eigen::Infinity>() < 1e-6);
        }
        for (int j = 0; j < m.n_u; ++j) {
            ControlInput up = u, um = u;
            up[j] += h;
            um[j] -= h;
            Eigen::VectorXd col = (m.step(x, up) - m.step(x, um)) / (2 * h);
            CHECK((B.col(j) - col).lpNorm<Eigen::Infinity>() < 1e-6);
        }
    }
}

TEST_CASE("constraint_violations basics") {
    BenchmarkModel quad = make_quadcopter();
    StateVector x = StateVector::Zero(10);
    ControlInput u(3);
    u << 0, 0, 9.81;
    CHECK(constraint_violations(x, u, quad).empty());

    u[0] = M_PI / 3;
    auto v = constraint_violations(x, u, quad);
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == Violation::Kind::InputUpper);
    CHECK(v[0].index == 0);
    CHECK(v[0].margin == doctest::Approx(M_PI / 3 - M_PI / 4).epsilon(1e-14));

    BenchmarkModel veh = make_kinematic_st();
    veh.obstacles.centers = {Eigen::Vector2d(3.0, 4.0)};
    veh.obstacles.r_safe = 1.0;
    StateVector xv(4);
    xv << 0, 0, 0, 1;
    ControlInput uv = ControlInput::Zero(2);
    for (const auto& viol : constraint_violations(xv, uv, veh))
        CHECK(viol.kind != Violation::Kind::Obstacle);  // squared clearance 25 >= 1
}

TEST_CASE("constraint_violations dimension checks") {
    BenchmarkModel m = make_quadcopter();
    CHECK_THROWS_AS(constraint_violations(StateVector::Zero(4), ControlInput::Zero(3), m),
                    DimensionMismatch);
    CHECK_THROWS_AS(constraint_violations(StateVector::Zero(10), ControlInput::Zero(2), m),
                    DimensionMismatch);
}

TEST_CASE("enlarging bounds never adds violations") {
    Rng rng(0x71);
    for (int trial = 0; trial < 50; ++trial) {
        BenchmarkModel m = make_dynamic_st();
        StateVector x(8);
        for (int i = 0; i < 8; ++i) x[i] = rng.uniform(-3, 3);
        x[3] = rng.uniform(0.6, 14.0);
        ControlInput u(2);
        u << rng.uniform(-2, 2), rng.uniform(-8, 8);
        auto before = constraint_violations(x, u, m);
        BenchmarkModel loose = m;
        loose.input_lo.array() -= rng.uniform(0, 1);
        loose.input_hi.array() += rng.uniform(0, 1);
        loose.state_lo.array() -= rng.uniform(0, 1);
        loose.state_hi.array() += rng.uniform(0, 1);
        loose.obstacles.r_safe = std::max(1e-6, m.obstacles.r_safe - rng.uniform(0, 0.2));
        auto after = constraint_violations(x, u, loose);
        CHECK(after.size() <= before.size());
    }
}

TEST_CASE("factory invariants per benchmark") {
    BenchmarkModel q = make_quadcopter();
    q.validate();
    CHECK(q.n_x == 10);
    CHECK(q.n_u == 3);
    CHECK(q.T_s == 0.1);
    CHECK(q.N == 10);
    CHECK(q.Q(0, 0) == 20.0);
    CHECK(q.R(2, 2) == 0.8);

    BenchmarkModel k = make_kinematic_st();
    k.validate();
    CHECK(k.n_x == 4);
    CHECK(k.n_u == 2);
    CHECK(k.T_s == 0.01);
    CHECK(k.N == 40);
    CHECK(k.R(0, 0) == 2.0);
    CHECK(k.R(1, 1) == 4.0);

    BenchmarkModel d = make_dynamic_st();
    d.validate();
    CHECK(d.n_x == 8);
    CHECK(d.n_u == 2);
    CHECK(d.T_s == 0.01);
    CHECK(d.N == 40);
}

TEST_CASE("config overrides reach the model") {
    Config cfg = Config::parse(
        "[quadcopter]\n"
        "g = 10.0\n"
        "N = 12\n");
    BenchmarkModel m = make_benchmark(BenchmarkId::Quadcopter, cfg);
    CHECK(m.quad.g == 10.0);
    CHECK(m.N == 12);
    CHECK(m.u_ref[2] == doctest::Approx(10.0 * 1.3 / 0.91));  // hover recomputed
    BenchmarkModel d = make_benchmark(BenchmarkId::DynamicST, Config{});
    CHECK(d.frame_drift[0] == doctest::Approx(0.05));
}

TEST_SUITE_END();
