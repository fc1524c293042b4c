#pragma once

#include <cmath>
#include <string>
#include <vector>
#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ampc/config.hpp"
#include "ampc/errors.hpp"

namespace ampc {

using StateVector = Eigen::VectorXd;
using ControlInput = Eigen::VectorXd;

enum class BenchmarkId { Quadcopter, KinematicST, DynamicST };

inline std::string to_string(BenchmarkId id) {
    switch (id) {
        case BenchmarkId::Quadcopter: return "quadcopter";
        case BenchmarkId::KinematicST: return "kinematic_st";
        case BenchmarkId::DynamicST: return "dynamic_st";
    }
    return "?";
}

inline BenchmarkId benchmark_from_string(const std::string& s) {
    if (s == "quadcopter") return BenchmarkId::Quadcopter;
    if (s == "kinematic_st") return BenchmarkId::KinematicST;
    if (s == "dynamic_st") return BenchmarkId::DynamicST;
    throw UsageError("unknown benchmark id '" + s + "'");
}

/// Circular keep-out regions in the (p_x, p_y) plane.
struct ObstacleSet {
    std::vector<Eigen::Vector2d> centers;
    double r_safe = 0.0;

    int n_obs() const { return static_cast<int>(centers.size()); }
    bool empty() const { return centers.empty(); }
};

/// Quadcopter physical constants (attitude loop parameters, thrust map).
struct QuadcopterParams {
    double d0 = 80.0;
    double d1 = 8.0;
    double n0 = 40.0;
    double k_T = 0.91;
    double m = 1.3;
    double g = 9.81;
    int rk4_substeps = 1;

    double hover_thrust() const { return g * m / k_T; }
};

/// Linear-tire single-track constants. The reference model leaves these
/// unspecified; values here are ordinary passenger-car numbers.
struct BicycleParams {
    double l_f = 1.35;    // front axle to CoG [m]
    double l_r = 1.21;    // rear axle to CoG [m]
    double C_f = 1.5e5;   // front cornering stiffness [N/rad]
    double C_r = 1.5e5;   // rear cornering stiffness [N/rad]
    double mass = 1500.0;
    double I_z = 2500.0;  // yaw inertia [kg m^2]
    double tau_a = 0.2;   // first-order lag on acceleration [s]
    double v_min = 0.5;   // validity floor of the linear-tire model [m/s]
    int rk4_substeps = 1;
};

struct Violation {
    enum class Kind { InputLower, InputUpper, StateLower, StateUpper, Obstacle };
    Kind kind;
    int index;      // input/state component, or obstacle index
    double margin;  // amount by which the constraint is exceeded (> 0)
};

using ViolationList = std::vector<Violation>;

// ---------------------------------------------------------------------------
// Benchmark step maps
// ---------------------------------------------------------------------------

namespace detail {

inline void check_finite(const Eigen::VectorXd& x, const char* what) {
    if (!x.allFinite()) throw NonFiniteState(what);
}

/**
 * Quadcopter continuous dynamics.
 *
 * State: [x1, x2, x3, v1, v2, v3, phi1, omega1, phi2, omega2]
 *   positions, velocities, then two decoupled attitude loops.
 * Input: [u1, u2, u3] = attitude commands and thrust.
 */
inline Eigen::VectorXd quad_rhs(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                const QuadcopterParams& p) {
    const double phi1 = x[6], om1 = x[7], phi2 = x[8], om2 = x[9];
    if (std::abs(phi1) >= M_PI / 2 || std::abs(phi2) >= M_PI / 2)
        throw NonFiniteState("quadcopter attitude outside tan validity range");
    Eigen::VectorXd f(10);
    f[0] = x[3];
    f[1] = x[4];
    f[2] = x[5];
    f[3] = p.g * std::tan(phi1);
    f[4] = p.g * std::tan(phi2);
    f[5] = -p.g + (p.k_T / p.m) * u[2];
    f[6] = -p.d1 * phi1 + om1;
    f[7] = -p.d0 * phi1 + p.n0 * u[0];
    f[8] = -p.d1 * phi2 + om2;
    f[9] = -p.d0 * phi2 + p.n0 * u[1];
    return f;
}

inline void quad_rhs_jacobians(const Eigen::VectorXd& x, const QuadcopterParams& p,
                               Eigen::MatrixXd& Fx, Eigen::MatrixXd& Fu) {
    Fx.setZero(10, 10);
    Fu.setZero(10, 3);
    const double c1 = std::cos(x[6]), c2 = std::cos(x[8]);
    Fx(0, 3) = Fx(1, 4) = Fx(2, 5) = 1.0;
    Fx(3, 6) = p.g / (c1 * c1);
    Fx(4, 8) = p.g / (c2 * c2);
    Fx(6, 6) = -p.d1;
    Fx(6, 7) = 1.0;
    Fx(7, 6) = -p.d0;
    Fx(8, 8) = -p.d1;
    Fx(8, 9) = 1.0;
    Fx(9, 8) = -p.d0;
    Fu(5, 2) = p.k_T / p.m;
    Fu(7, 0) = p.n0;
    Fu(9, 1) = p.n0;
}

/**
 * Dynamic single-track continuous dynamics (linear tire forces, steering
 * integrator, first-order acceleration lag).
 *
 * State: [p_x, p_y, psi, v, r, beta, a, delta]
 * Input: [delta_dot, a_cmd]
 */
inline Eigen::VectorXd bicycle_rhs(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                   const BicycleParams& p) {
    const double psi = x[2], v = x[3], r = x[4], beta = x[5], a = x[6], delta = x[7];
    if (v <= p.v_min) throw LowSpeedSingularity(v, p.v_min);
    const double alpha_f = delta - beta - p.l_f * r / v;
    const double alpha_r = -beta + p.l_r * r / v;
    const double F_yf = p.C_f * alpha_f;
    const double F_yr = p.C_r * alpha_r;
    Eigen::VectorXd f(8);
    f[0] = v * std::cos(psi + beta);
    f[1] = v * std::sin(psi + beta);
    f[2] = r;
    f[3] = a;
    f[4] = (p.l_f * F_yf - p.l_r * F_yr) / p.I_z;
    f[5] = (F_yf + F_yr) / (p.mass * v) - r;
    f[6] = (u[1] - a) / p.tau_a;
    f[7] = u[0];
    return f;
}

inline void bicycle_rhs_jacobians(const Eigen::VectorXd& x, const BicycleParams& p,
                                  Eigen::MatrixXd& Fx, Eigen::MatrixXd& Fu) {
    const double psi = x[2], v = x[3], r = x[4], beta = x[5], delta = x[7];
    if (v <= p.v_min) throw LowSpeedSingularity(v, p.v_min);
    Fx.setZero(8, 8);
    Fu.setZero(8, 2);
    const double s = std::sin(psi + beta), c = std::cos(psi + beta);
    const double alpha_f = delta - beta - p.l_f * r / v;
    const double alpha_r = -beta + p.l_r * r / v;
    // d alpha / d(state)
    const double daf_dv = p.l_f * r / (v * v);
    const double dar_dv = -p.l_r * r / (v * v);
    const double daf_dr = -p.l_f / v;
    const double dar_dr = p.l_r / v;

    Fx(0, 2) = -v * s; Fx(0, 3) = c; Fx(0, 5) = -v * s;
    Fx(1, 2) = v * c;  Fx(1, 3) = s; Fx(1, 5) = v * c;
    Fx(2, 4) = 1.0;
    Fx(3, 6) = 1.0;
    // r_dot = (l_f C_f alpha_f - l_r C_r alpha_r) / I_z
    Fx(4, 3) = (p.l_f * p.C_f * daf_dv - p.l_r * p.C_r * dar_dv) / p.I_z;
    Fx(4, 4) = (p.l_f * p.C_f * daf_dr - p.l_r * p.C_r * dar_dr) / p.I_z;
    Fx(4, 5) = (p.l_f * p.C_f * (-1.0) - p.l_r * p.C_r * (-1.0)) / p.I_z;
    Fx(4, 7) = p.l_f * p.C_f / p.I_z;
    // beta_dot = (C_f alpha_f + C_r alpha_r) / (m v) - r
    const double Fy = p.C_f * alpha_f + p.C_r * alpha_r;
    Fx(5, 3) = (p.C_f * daf_dv + p.C_r * dar_dv) / (p.mass * v) - Fy / (p.mass * v * v);
    Fx(5, 4) = (p.C_f * daf_dr + p.C_r * dar_dr) / (p.mass * v) - 1.0;
    Fx(5, 5) = -(p.C_f + p.C_r) / (p.mass * v);
    Fx(5, 7) = p.C_f / (p.mass * v);
    Fx(6, 6) = -1.0 / p.tau_a;
    Fu(6, 1) = 1.0 / p.tau_a;
    Fu(7, 0) = 1.0;
}

/// One classic RK4 step of length h plus, optionally, the step Jacobians.
template <typename Rhs, typename RhsJac>
Eigen::VectorXd rk4_step(const Eigen::VectorXd& x, const Eigen::VectorXd& u, double h,
                         const Rhs& rhs, const RhsJac& rhs_jac, Eigen::MatrixXd* A,
                         Eigen::MatrixXd* B) {
    const auto n = x.size();
    const Eigen::VectorXd k1 = rhs(x, u);
    const Eigen::VectorXd x2 = x + 0.5 * h * k1;
    const Eigen::VectorXd k2 = rhs(x2, u);
    const Eigen::VectorXd x3 = x + 0.5 * h * k2;
    const Eigen::VectorXd k3 = rhs(x3, u);
    const Eigen::VectorXd x4 = x + h * k3;
    const Eigen::VectorXd k4 = rhs(x4, u);
    Eigen::VectorXd out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (A != nullptr) {
        Eigen::MatrixXd Fx(n, n), Fu(n, u.size());
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
        rhs_jac(x, Fx, Fu);
        Eigen::MatrixXd dk1x = Fx, dk1u = Fu;
        rhs_jac(x2, Fx, Fu);
        Eigen::MatrixXd dk2x = Fx * (I + 0.5 * h * dk1x);
        Eigen::MatrixXd dk2u = Fx * (0.5 * h * dk1u) + Fu;
        rhs_jac(x3, Fx, Fu);
        Eigen::MatrixXd dk3x = Fx * (I + 0.5 * h * dk2x);
        Eigen::MatrixXd dk3u = Fx * (0.5 * h * dk2u) + Fu;
        rhs_jac(x4, Fx, Fu);
        Eigen::MatrixXd dk4x = Fx * (I + h * dk3x);
        Eigen::MatrixXd dk4u = Fx * (h * dk3u) + Fu;
        *A = I + (h / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x);
        *B = (h / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u);
    }
    return out;
}

}  // namespace detail

/// One discrete step of the quadcopter (RK4, `substeps` stages per T_s).
inline StateVector step_quadcopter(const StateVector& x, const ControlInput& u, double T_s,
                                   const QuadcopterParams& p = {}, Eigen::MatrixXd* A = nullptr,
                                   Eigen::MatrixXd* B = nullptr) {
    if (x.size() != 10) throw DimensionMismatch("quadcopter state must have 10 entries");
    if (u.size() != 3) throw DimensionMismatch("quadcopter input must have 3 entries");
    auto rhs = [&p](const Eigen::VectorXd& xs, const Eigen::VectorXd& us) {
        return detail::quad_rhs(xs, us, p);
    };
    auto jac = [&p, &u](const Eigen::VectorXd& xs, Eigen::MatrixXd& Fx, Eigen::MatrixXd& Fu) {
        (void)u;
        detail::quad_rhs_jacobians(xs, p, Fx, Fu);
    };
    const int n_sub = std::max(1, p.rk4_substeps);
    const double h = T_s / n_sub;
    StateVector out = x;
    if (A != nullptr) {
        A->setIdentity(10, 10);
        B->setZero(10, 3);
    }
    for (int i = 0; i < n_sub; ++i) {
        Eigen::MatrixXd Ai, Bi;
        out = detail::rk4_step(out, u, h, rhs, jac, A ? &Ai : nullptr, A ? &Bi : nullptr);
        if (A != nullptr) {
            *A = Ai * (*A);
            *B = Ai * (*B) + Bi;
        }
    }
    detail::check_finite(out, "quadcopter step");
    return out;
}

/**
 * One discrete step of the kinematic single-track model.
 *
 * State: [p_x, p_y, psi, v], input: [delta, a]. The update is the exact
 * forward-Euler form of the benchmark definition, evaluated in that order.
 */
inline StateVector step_kinematic(const StateVector& x, const ControlInput& u, double T_s,
                                  Eigen::MatrixXd* A = nullptr, Eigen::MatrixXd* B = nullptr) {
    if (x.size() != 4) throw DimensionMismatch("kinematic state must have 4 entries");
    if (u.size() != 2) throw DimensionMismatch("kinematic input must have 2 entries");
    StateVector out(4);
    out[0] = x[0] + T_s * x[3] * std::cos(x[2]);
    out[1] = x[1] + T_s * x[3] * std::sin(x[2]);
    out[2] = x[2] + T_s * u[0];
    out[3] = x[3] + T_s * u[1];
    if (A != nullptr) {
        A->setIdentity(4, 4);
        (*A)(0, 2) = -T_s * x[3] * std::sin(x[2]);
        (*A)(0, 3) = T_s * std::cos(x[2]);
        (*A)(1, 2) = T_s * x[3] * std::cos(x[2]);
        (*A)(1, 3) = T_s * std::sin(x[2]);
        B->setZero(4, 2);
        (*B)(2, 0) = T_s;
        (*B)(3, 1) = T_s;
    }
    return out;
}

/// One discrete step (RK4) of the dynamic single-track model.
/// Throws LowSpeedSingularity whenever the tire model is evaluated at v <= v_min.
inline StateVector step_dynamic_bicycle(const StateVector& x, const ControlInput& u, double T_s,
                                        const BicycleParams& p = {}, Eigen::MatrixXd* A = nullptr,
                                        Eigen::MatrixXd* B = nullptr) {
    if (x.size() != 8) throw DimensionMismatch("dynamic single-track state must have 8 entries");
    if (u.size() != 2) throw DimensionMismatch("dynamic single-track input must have 2 entries");
    auto rhs = [&p](const Eigen::VectorXd& xs, const Eigen::VectorXd& us) {
        return detail::bicycle_rhs(xs, us, p);
    };
    auto jac = [&p](const Eigen::VectorXd& xs, Eigen::MatrixXd& Fx, Eigen::MatrixXd& Fu) {
        detail::bicycle_rhs_jacobians(xs, p, Fx, Fu);
    };
    const int n_sub = std::max(1, p.rk4_substeps);
    const double h = T_s / n_sub;
    StateVector out = x;
    if (A != nullptr) {
        A->setIdentity(8, 8);
        B->setZero(8, 2);
    }
    for (int i = 0; i < n_sub; ++i) {
        Eigen::MatrixXd Ai, Bi;
        out = detail::rk4_step(out, u, h, rhs, jac, A ? &Ai : nullptr, A ? &Bi : nullptr);
        if (A != nullptr) {
            *A = Ai * (*A);
            *B = Ai * (*B) + Bi;
        }
    }
    detail::check_finite(out, "dynamic single-track step");
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark model
// ---------------------------------------------------------------------------

/**
 * One of the three benchmark systems: dynamics map, dimensions, sampling
 * time, horizon, constraint sets and cost weights.
 *
 * The vehicle benchmarks are posed in a road frame translating at the
 * reference speed, so the cruise condition is a true fixed point of the
 * discrete map and terminal ingredients exist. `frame_drift` holds the
 * per-step frame translation (zero for the quadcopter); obstacles co-move
 * with the frame.
 */
struct BenchmarkModel {
    BenchmarkId name = BenchmarkId::Quadcopter;
    int n_x = 0;
    int n_u = 0;
    double T_s = 0.0;
    int N = 0;

    Eigen::MatrixXd Q;  // state weights, PSD
    Eigen::MatrixXd R;  // input weights, PD
    StateVector x_ref;
    ControlInput u_ref;

    Eigen::VectorXd input_lo, input_hi;
    Eigen::VectorXd state_lo, state_hi;  // +-inf where unbounded
    ObstacleSet obstacles;
    Eigen::VectorXd frame_drift;

    QuadcopterParams quad;
    BicycleParams bicycle;

    /// Discrete one-step map in benchmark (frame) coordinates.
    StateVector step(const StateVector& x, const ControlInput& u) const {
        switch (name) {
            case BenchmarkId::Quadcopter: return step_quadcopter(x, u, T_s, quad);
            case BenchmarkId::KinematicST: return step_kinematic(x, u, T_s) - frame_drift;
            case BenchmarkId::DynamicST:
                return step_dynamic_bicycle(x, u, T_s, bicycle) - frame_drift;
        }
        throw Error("unreachable");
    }

    /// Analytic Jacobians of the one-step map (frame drift is additive, so
    /// they coincide with the raw model Jacobians).
    void step_jacobians(const StateVector& x, const ControlInput& u, Eigen::MatrixXd& A,
                        Eigen::MatrixXd& B) const {
        switch (name) {
            case BenchmarkId::Quadcopter: step_quadcopter(x, u, T_s, quad, &A, &B); return;
            case BenchmarkId::KinematicST: step_kinematic(x, u, T_s, &A, &B); return;
            case BenchmarkId::DynamicST: step_dynamic_bicycle(x, u, T_s, bicycle, &A, &B); return;
        }
        throw Error("unreachable");
    }

    bool position_plane() const { return name != BenchmarkId::Quadcopter; }

    /// Throws unless weights, dimensions and bounds satisfy the documented
    /// invariants (Q PSD, R PD, lower < upper, benchmark dimensions).
    void validate() const {
        if (Q.rows() != n_x || Q.cols() != n_x) throw DimensionMismatch("Q must be n_x by n_x");
        if (R.rows() != n_u || R.cols() != n_u) throw DimensionMismatch("R must be n_u by n_u");
        if (!Q.isApprox(Q.transpose(), 1e-12)) throw Error("Q must be symmetric");
        if (!R.isApprox(R.transpose(), 1e-12)) throw Error("R must be symmetric");
        // PSD check: Cholesky of Q + eps I must succeed, of R must succeed outright.
        Eigen::LLT<Eigen::MatrixXd> lltQ(
            Q + 1e-12 * Eigen::MatrixXd::Identity(n_x, n_x));
        if (lltQ.info() != Eigen::Success) throw Error("Q is not positive semidefinite");
        Eigen::LLT<Eigen::MatrixXd> lltR(R);
        if (lltR.info() != Eigen::Success) throw Error("R is not positive definite");
        for (int i = 0; i < n_u; ++i)
            if (!(input_lo[i] < input_hi[i])) throw Error("input bounds must satisfy lower < upper");
        const int want_nx = name == BenchmarkId::Quadcopter ? 10
                            : name == BenchmarkId::KinematicST ? 4 : 8;
        const int want_nu = name == BenchmarkId::Quadcopter ? 3 : 2;
        if (n_x != want_nx || n_u != want_nu) throw DimensionMismatch("benchmark dimensions");
        if (!x_ref.allFinite()) throw NonFiniteState("x_ref");
        if (obstacles.n_obs() > 0 && !(obstacles.r_safe > 0)) throw Error("r_safe must be > 0");
    }
};

/// Quadratic tracking stage cost (x-x_ref)'Q(x-x_ref) + (u-u_ref)'R(u-u_ref).
template <class ModelT>
double stage_cost(const StateVector& x, const ControlInput& u, const ModelT& model) {
    if (x.size() != model.n_x) throw DimensionMismatch("stage_cost state size");
    if (u.size() != model.n_u) throw DimensionMismatch("stage_cost input size");
    const Eigen::VectorXd dx = x - model.x_ref;
    const Eigen::VectorXd du = u - model.u_ref;
    return dx.dot(model.Q * dx) + du.dot(model.R * du);
}

/**
 * Every violated constraint of (x, u) against the model's sets, with the
 * amount of violation. Empty result means (x, u) is admissible and all
 * obstacle clearances are nonnegative. Obstacle margins are in squared
 * meters (r_safe^2 - squared distance).
 */
inline ViolationList constraint_violations(const StateVector& x, const ControlInput& u,
                                           const BenchmarkModel& model) {
    if (x.size() != model.n_x) throw DimensionMismatch("state size vs model");
    if (u.size() != model.n_u) throw DimensionMismatch("input size vs model");
    ViolationList out;
    for (int i = 0; i < model.n_u; ++i) {
        if (u[i] < model.input_lo[i])
            out.push_back({Violation::Kind::InputLower, i, model.input_lo[i] - u[i]});
        if (u[i] > model.input_hi[i])
            out.push_back({Violation::Kind::InputUpper, i, u[i] - model.input_hi[i]});
    }
    for (int i = 0; i < model.n_x; ++i) {
        if (x[i] < model.state_lo[i])
            out.push_back({Violation::Kind::StateLower, i, model.state_lo[i] - x[i]});
        if (x[i] > model.state_hi[i])
            out.push_back({Violation::Kind::StateUpper, i, x[i] - model.state_hi[i]});
    }
    if (model.position_plane()) {
        for (int i = 0; i < model.obstacles.n_obs(); ++i) {
            const auto& o = model.obstacles.centers[i];
            const double dx = x[0] - o[0], dy = x[1] - o[1];
            const double sq = dx * dx + dy * dy;
            const double rsq = model.obstacles.r_safe * model.obstacles.r_safe;
            if (sq < rsq) out.push_back({Violation::Kind::Obstacle, i, rsq - sq});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

inline BenchmarkModel make_quadcopter() {
    BenchmarkModel m;
    m.name = BenchmarkId::Quadcopter;
    m.n_x = 10;
    m.n_u = 3;
    m.T_s = 0.1;
    m.N = 10;
    Eigen::VectorXd q(10);
    q << 20, 1, 3, 1, 3, 0.01, 1, 4, 1, 4;
    m.Q = q.asDiagonal();
    Eigen::VectorXd r(3);
    r << 8, 8, 0.8;
    m.R = r.asDiagonal();
    m.x_ref = Eigen::VectorXd::Zero(10);
    m.u_ref = Eigen::Vector3d(0.0, 0.0, m.quad.hover_thrust());
    m.input_lo = Eigen::Vector3d(-M_PI / 4, -M_PI / 4, 0.0);
    m.input_hi = Eigen::Vector3d(M_PI / 4, M_PI / 4, 2.0 * m.quad.g);
    const double inf = std::numeric_limits<double>::infinity();
    m.state_lo = Eigen::VectorXd::Constant(10, -inf);
    m.state_hi = Eigen::VectorXd::Constant(10, inf);
    m.state_lo[6] = m.state_lo[8] = -M_PI / 9;  // attitude box, only bounded states
    m.state_hi[6] = m.state_hi[8] = M_PI / 9;
    m.frame_drift = Eigen::VectorXd::Zero(10);
    return m;
}

inline BenchmarkModel make_kinematic_st() {
    BenchmarkModel m;
    m.name = BenchmarkId::KinematicST;
    m.n_x = 4;
    m.n_u = 2;
    m.T_s = 0.01;
    m.N = 40;
    Eigen::VectorXd q(4);
    q << 10, 10, 0.2, 5;
    m.Q = q.asDiagonal();
    Eigen::VectorXd r(2);
    r << 2, 4;
    m.R = r.asDiagonal();
    const double v_ref = 2.5;
    m.x_ref = Eigen::Vector4d(0.0, 0.0, 0.0, v_ref);
    m.u_ref = Eigen::Vector2d(0.0, 0.0);
    const double delta_max = 25.0 * M_PI / 180.0;
    m.input_lo = Eigen::Vector2d(-delta_max, -6.0);
    m.input_hi = Eigen::Vector2d(delta_max, 3.2);
    const double inf = std::numeric_limits<double>::infinity();
    m.state_lo = Eigen::Vector4d(-5.0, -5.0, -inf, 0.0);
    m.state_hi = Eigen::Vector4d(55.0, 55.0, inf, 15.0);
    m.frame_drift = Eigen::Vector4d(m.T_s * v_ref, 0.0, 0.0, 0.0);
    m.obstacles.r_safe = 0.045;
    m.obstacles.centers = {Eigen::Vector2d(-0.18, 0.07)};
    return m;
}

inline BenchmarkModel make_dynamic_st() {
    BenchmarkModel m;
    m.name = BenchmarkId::DynamicST;
    m.n_x = 8;
    m.n_u = 2;
    m.T_s = 0.01;
    m.N = 40;
    Eigen::VectorXd q(8);
    q << 10, 10, 0.5, 0.5, 0.2, 5, 1, 5;
    m.Q = q.asDiagonal();
    Eigen::VectorXd r(2);
    r << 2, 4;
    m.R = r.asDiagonal();
    const double v_ref = 5.0;
    m.x_ref = Eigen::VectorXd::Zero(8);
    m.x_ref[3] = v_ref;
    m.u_ref = Eigen::Vector2d(0.0, 0.0);
    m.input_lo = Eigen::Vector2d(-1.0, -6.0);
    m.input_hi = Eigen::Vector2d(1.0, 3.2);
    const double inf = std::numeric_limits<double>::infinity();
    const double delta_max = 25.0 * M_PI / 180.0;
    m.state_lo = Eigen::VectorXd::Constant(8, -inf);
    m.state_hi = Eigen::VectorXd::Constant(8, inf);
    m.state_lo[0] = m.state_lo[1] = -5.0;
    m.state_hi[0] = m.state_hi[1] = 55.0;
    m.state_lo[3] = 1.0;  // keep expert/candidates clear of the tire-model floor
    m.state_hi[3] = 15.0;
    m.state_lo[7] = -delta_max;
    m.state_hi[7] = delta_max;
    m.frame_drift = Eigen::VectorXd::Zero(8);
    m.frame_drift[0] = m.T_s * v_ref;
    m.obstacles.r_safe = 0.04;
    m.obstacles.centers = {Eigen::Vector2d(-0.18, 0.08)};
    return m;
}

inline BenchmarkModel make_benchmark(BenchmarkId id) {
    switch (id) {
        case BenchmarkId::Quadcopter: return make_quadcopter();
        case BenchmarkId::KinematicST: return make_kinematic_st();
        case BenchmarkId::DynamicST: return make_dynamic_st();
    }
    throw Error("unreachable");
}

/// Apply configuration overrides. Every physical constant of the benchmark
/// definitions has a named key under the benchmark's section; values default
/// to the reference numbers baked into the factories.
inline BenchmarkModel make_benchmark(BenchmarkId id, const Config& cfg) {
    BenchmarkModel m = make_benchmark(id);
    const std::string s = to_string(id) + ".";
    m.T_s = cfg.get_double(s + "T_s", m.T_s);
    m.N = static_cast<int>(cfg.get_int(s + "N", m.N));
    for (int i = 0; i < m.n_x; ++i) {
        m.Q(i, i) = cfg.get_double(s + "Q" + std::to_string(i), m.Q(i, i));
        m.x_ref[i] = cfg.get_double(s + "x_ref" + std::to_string(i), m.x_ref[i]);
        m.state_lo[i] = cfg.get_double(s + "state_lo" + std::to_string(i), m.state_lo[i]);
        m.state_hi[i] = cfg.get_double(s + "state_hi" + std::to_string(i), m.state_hi[i]);
    }
    for (int i = 0; i < m.n_u; ++i) {
        m.R(i, i) = cfg.get_double(s + "R" + std::to_string(i), m.R(i, i));
        m.u_ref[i] = cfg.get_double(s + "u_ref" + std::to_string(i), m.u_ref[i]);
        m.input_lo[i] = cfg.get_double(s + "input_lo" + std::to_string(i), m.input_lo[i]);
        m.input_hi[i] = cfg.get_double(s + "input_hi" + std::to_string(i), m.input_hi[i]);
    }
    if (id == BenchmarkId::Quadcopter) {
        auto& p = m.quad;
        p.d0 = cfg.get_double(s + "d0", p.d0);
        p.d1 = cfg.get_double(s + "d1", p.d1);
        p.n0 = cfg.get_double(s + "n0", p.n0);
        p.k_T = cfg.get_double(s + "k_T", p.k_T);
        p.m = cfg.get_double(s + "m", p.m);
        p.g = cfg.get_double(s + "g", p.g);
        p.rk4_substeps = static_cast<int>(cfg.get_int(s + "rk4_substeps", p.rk4_substeps));
        if (!cfg.has(s + "u_ref2")) m.u_ref[2] = p.hover_thrust();
    } else {
        auto& p = m.bicycle;
        p.l_f = cfg.get_double(s + "l_f", p.l_f);
        p.l_r = cfg.get_double(s + "l_r", p.l_r);
        p.C_f = cfg.get_double(s + "C_f", p.C_f);
        p.C_r = cfg.get_double(s + "C_r", p.C_r);
        p.mass = cfg.get_double(s + "mass", p.mass);
        p.I_z = cfg.get_double(s + "I_z", p.I_z);
        p.tau_a = cfg.get_double(s + "tau_a", p.tau_a);
        p.v_min = cfg.get_double(s + "v_min", p.v_min);
        const double v_ref = cfg.get_double(s + "v_ref", m.x_ref[3]);
        m.x_ref[3] = v_ref;
        m.frame_drift[0] = m.T_s * v_ref;
        m.obstacles.r_safe = cfg.get_double(s + "r_safe", m.obstacles.r_safe);
        const int n_obs = static_cast<int>(cfg.get_int(s + "n_obs", m.obstacles.n_obs()));
        std::vector<Eigen::Vector2d> centers;
        for (int i = 0; i < n_obs; ++i) {
            Eigen::Vector2d c = i < m.obstacles.n_obs() ? m.obstacles.centers[i]
                                                        : Eigen::Vector2d(0, 0);
            c[0] = cfg.get_double(s + "obstacle" + std::to_string(i) + "_x", c[0]);
            c[1] = cfg.get_double(s + "obstacle" + std::to_string(i) + "_y", c[1]);
            centers.push_back(c);
        }
        m.obstacles.centers = centers;
    }
    m.validate();
    return m;
}

}  // namespace ampc
