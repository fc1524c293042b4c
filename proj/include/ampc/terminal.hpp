#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ampc/checksum.hpp"
#include "ampc/matrix_io.hpp"
#include "ampc/models.hpp"
#include "ampc/rng.hpp"

namespace ampc {

/**
 * Offline-computed terminal ingredients and tube gain.
 *
 * P and K_f come from a Riccati (LQR) design at the benchmark equilibrium.
 * The terminal set is the sublevel ellipsoid {x : (x-x_ref)' P (x-x_ref) <= alpha},
 * sized so that the set is constraint-admissible and the sampled one-step
 * invariance and Lyapunov decrease checks hold.
 *
 * The struct is self-contained (it carries the reference point and the input
 * box) so that the serialized artifact fully determines terminal behavior.
 */
struct TerminalIngredients {
    Eigen::MatrixXd P;        // terminal cost, PSD
    Eigen::MatrixXd K_f;      // terminal feedback gain, n_u x n_x
    Eigen::MatrixXd K_delta;  // tube (pre-stabilizing) gain, n_u x n_x
    double alpha = 0.0;

    StateVector x_ref;
    ControlInput u_ref;
    Eigen::VectorXd input_lo, input_hi;

    // Constraint-tightening growth model: margin_k = kappa * epsilon * (1-lambda^k)/(1-lambda).
    double epsilon = 0.0;
    double lambda = 0.0;
    double kappa = 0.0;

    std::string benchmark;

    double terminal_cost(const StateVector& x) const {
        Eigen::VectorXd d = x - x_ref;
        return d.dot(P * d);
    }

    /// Tightening margin after k steps of disturbance accumulation.
    double margin(int k) const {
        if (epsilon == 0.0 || k == 0) return 0.0;
        if (std::abs(1.0 - lambda) < 1e-12) return kappa * epsilon * k;
        return kappa * epsilon * (1.0 - std::pow(lambda, k)) / (1.0 - lambda);
    }
};

/// True iff (x - x_ref)' P (x - x_ref) <= alpha (closed set: boundary included).
inline bool in_terminal_set(const StateVector& x, const TerminalIngredients& ing) {
    if (x.size() != ing.x_ref.size()) throw DimensionMismatch("in_terminal_set state size");
    return ing.terminal_cost(x) <= ing.alpha;
}

/// Terminal controller u_ref - K_f (x - x_ref), clamped to the input box.
/// K_f is stored in the Riccati convention (rho(A - B K_f) < 1), so the
/// stabilizing feedback enters with a minus sign.
/// If `clamped` is given it reports whether any component saturated.
inline ControlInput terminal_control(const StateVector& x, const TerminalIngredients& ing,
                                     bool* clamped = nullptr) {
    ControlInput u = ing.u_ref - ing.K_f * (x - ing.x_ref);
    bool sat = false;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (u[i] < ing.input_lo[i]) { u[i] = ing.input_lo[i]; sat = true; }
        if (u[i] > ing.input_hi[i]) { u[i] = ing.input_hi[i]; sat = true; }
    }
    if (clamped != nullptr) *clamped = sat;
    return u;
}

/**
 * Central finite-difference Jacobians (step h) of the benchmark one-step map
 * at an equilibrium. Throws NotAnEquilibrium when (x_eq, u_eq) is not a fixed
 * point of the discrete map to the stated residual.
 */
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> linearize(const BenchmarkModel& model,
                                                             const StateVector& x_eq,
                                                             const ControlInput& u_eq,
                                                             double h = 1e-6,
                                                             double eq_tol = 1e-8) {
    const double residual = (model.step(x_eq, u_eq) - x_eq).lpNorm<Eigen::Infinity>();
    if (residual > eq_tol) throw NotAnEquilibrium(residual);
    Eigen::MatrixXd A(model.n_x, model.n_x), B(model.n_x, model.n_u);
    for (int j = 0; j < model.n_x; ++j) {
        StateVector xp = x_eq, xm = x_eq;
        xp[j] += h;
        xm[j] -= h;
        A.col(j) = (model.step(xp, u_eq) - model.step(xm, u_eq)) / (2.0 * h);
    }
    for (int j = 0; j < model.n_u; ++j) {
        ControlInput up = u_eq, um = u_eq;
        up[j] += h;
        um[j] -= h;
        B.col(j) = (model.step(x_eq, up) - model.step(x_eq, um)) / (2.0 * h);
    }
    return {A, B};
}

/**
 * Discrete algebraic Riccati equation by fixed-point iteration:
 *   P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA
 * until the infinity norm of the update falls below `tol`.
 * Returns (P, K) with K = (R + B'PB)^{-1} B'PA.
 */
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> solve_dare(const Eigen::MatrixXd& A,
                                                              const Eigen::MatrixXd& B,
                                                              const Eigen::MatrixXd& Q,
                                                              const Eigen::MatrixXd& R,
                                                              double tol = 1e-10,
                                                              int max_iter = 200000) {
    const auto n = A.rows();
    Eigen::MatrixXd P = Q;
    Eigen::MatrixXd K;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::MatrixXd S = R + B.transpose() * P * B;
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        if (llt.info() != Eigen::Success)
            throw NoConvergence("R + B'PB not positive definite in DARE iteration");
        K = llt.solve(B.transpose() * P * A);
        Eigen::MatrixXd Pn = Q + A.transpose() * P * (A - B * K);
        Pn = 0.5 * (Pn + Pn.transpose());
        const double delta = (Pn - P).lpNorm<Eigen::Infinity>();
        P = Pn;
        if (delta < tol) {
            Eigen::MatrixXd S2 = R + B.transpose() * P * B;
            K = Eigen::LLT<Eigen::MatrixXd>(S2).solve(B.transpose() * P * A);
            return {P, K};
        }
        if (!P.allFinite())
            throw NoConvergence("DARE iteration diverged (unstabilizable linearization?)");
    }
    (void)n;
    throw NoConvergence("DARE fixed-point iteration exceeded max iterations");
}

inline double spectral_radius(const Eigen::MatrixXd& M) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(M, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Deterministic points on (scale < 1: inside) the ellipsoid boundary
/// {x : (x-x_ref)' P (x-x_ref) = alpha * scale^2}.
inline std::vector<StateVector> sample_ellipsoid(const TerminalIngredients& ing, int count,
                                                 double scale = 1.0) {
    const auto n = ing.x_ref.size();
    Eigen::LLT<Eigen::MatrixXd> llt(ing.P);
    if (llt.info() != Eigen::Success)
        throw Error("terminal P must be positive definite for ellipsoid sampling");
    Eigen::MatrixXd L = llt.matrixL();
    SphereSequence seq(static_cast<int>(n));
    std::vector<StateVector> out;
    out.reserve(count);
    const double r = std::sqrt(std::max(ing.alpha, 0.0)) * scale;
    for (int i = 0; i < count; ++i) {
        Eigen::VectorXd d = seq.next();
        Eigen::VectorXd y = L.transpose().triangularView<Eigen::Upper>().solve(d);
        out.push_back(ing.x_ref + r * y);
    }
    return out;
}

/// Distance from point q to the filled ellipse {p : p' Binv p <= level}
/// (2x2, positive definite). Zero when q is inside.
inline double point_to_ellipse_distance(const Eigen::Matrix2d& Binv, double level,
                                        const Eigen::Vector2d& q) {
    if (q.dot(Binv * q) <= level) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Binv);
    // Semi-axes of the boundary in the eigenbasis.
    Eigen::Vector2d axes = (level / es.eigenvalues().array()).sqrt();
    Eigen::Vector2d qt = es.eigenvectors().transpose() * q;
    // Solve sum_i (axes_i qt_i / (t + axes_i^2))^2 = 1 for t >= 0 (exterior point).
    auto g = [&](double t) {
        double s = 0;
        for (int i = 0; i < 2; ++i) {
            double w = axes[i] * qt[i] / (t + axes[i] * axes[i]);
            s += w * w;
        }
        return s - 1.0;
    };
    double lo = 0.0, hi = axes.maxCoeff() * std::abs(qt.norm()) + axes.maxCoeff();
    while (g(hi) > 0) hi *= 2;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (g(mid) > 0) lo = mid;
        else hi = mid;
    }
    const double t = 0.5 * (lo + hi);
    double d2 = 0;
    for (int i = 0; i < 2; ++i) {
        double pi = axes[i] * axes[i] * qt[i] / (t + axes[i] * axes[i]);
        d2 += (pi - qt[i]) * (pi - qt[i]);
    }
    return std::sqrt(d2);
}

/**
 * Largest admissible terminal level by bisection (60 iterations on a
 * monotone predicate). Admissibility of {x : (x-x_ref)'P(x-x_ref) <= alpha}
 * is evaluated exactly: coordinate extents and terminal-controller input
 * extents via the ellipsoid support function sqrt(alpha c' P^{-1} c), and
 * obstacle clearance via the ellipsoid's exact shadow on the position plane.
 * The level is capped so the bisection window is bounded.
 */
inline double compute_alpha(const TerminalIngredients& ing, const Eigen::VectorXd& state_lo,
                            const Eigen::VectorXd& state_hi, const ObstacleSet& obstacles,
                            bool planar, double cap = 10.0, double margin = 0.0) {
    const auto n = ing.x_ref.size();
    Eigen::LLT<Eigen::MatrixXd> llt(ing.P);
    if (llt.info() != Eigen::Success)
        throw Error("terminal P must be positive definite to size alpha");
    const Eigen::MatrixXd Sigma = llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::Matrix2d shadow = planar ? Eigen::Matrix2d(Sigma.topLeftCorner<2, 2>())
                                          : Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d shadow_inv = shadow.inverse();

    auto admissible = [&](double alpha) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double extent = std::sqrt(std::max(alpha * Sigma(i, i), 0.0));
            if (std::isfinite(state_lo[i]) && ing.x_ref[i] - extent < state_lo[i] + margin)
                return false;
            if (std::isfinite(state_hi[i]) && ing.x_ref[i] + extent > state_hi[i] - margin)
                return false;
        }
        for (Eigen::Index j = 0; j < ing.u_ref.size(); ++j) {
            // Range of u_ref - K_f dx over the ellipsoid (symmetric in dx).
            const Eigen::VectorXd k = ing.K_f.row(j).transpose();
            const double extent = std::sqrt(std::max(alpha * k.dot(Sigma * k), 0.0));
            if (ing.u_ref[j] - extent < ing.input_lo[j] + margin) return false;
            if (ing.u_ref[j] + extent > ing.input_hi[j] - margin) return false;
        }
        if (planar) {
            for (const auto& o : obstacles.centers) {
                Eigen::Vector2d q = o - ing.x_ref.head<2>();
                if (point_to_ellipse_distance(shadow_inv, alpha, q) <
                    obstacles.r_safe + margin)
                    return false;
            }
        }
        return true;
    };
    if (admissible(cap)) return cap;
    double lo = 0.0, hi = cap;
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (admissible(mid)) lo = mid;
        else hi = mid;
    }
    if (lo < 1e-9) throw EmptyTerminalSet(lo);
    return lo;
}

inline double compute_alpha(const TerminalIngredients& ing, const BenchmarkModel& model,
                            double cap = 10.0, double margin = 0.0) {
    return compute_alpha(ing, model.state_lo, model.state_hi, model.obstacles,
                         model.position_plane(), cap, margin);
}

struct TerminalDesignOptions {
    double alpha_cap = 10.0;  // in the unscaled Riccati metric
    // V_f = scale * x'Px. The (scale-1)*stage-cost surplus in the Lyapunov
    // decrease absorbs the nonlinearity residual, which lets the certified
    // terminal set grow until the constraint bisection binds.
    double terminal_cost_scale = 10.0;
    int invariance_samples = 1000;
    double admissibility_margin = 1e-6;  // keeps terminal rollouts strictly feasible
    double decrease_tol = 1e-6;
    double epsilon = 0.0;  // disturbance bound used for constraint tightening
};

/**
 * Full offline design for a benchmark: linearize at the reference
 * equilibrium, solve the Riccati equation for (P, K_f), set K_delta = K_f,
 * size alpha by constraint bisection, then shrink until the sampled
 * invariance and decrease certificates hold.
 */
inline TerminalIngredients design_terminal(const BenchmarkModel& model,
                                           const TerminalDesignOptions& opts = {}) {
    TerminalIngredients ing;
    ing.benchmark = to_string(model.name);
    ing.x_ref = model.x_ref;
    ing.u_ref = model.u_ref;
    ing.input_lo = model.input_lo;
    ing.input_hi = model.input_hi;

    auto [A, B] = linearize(model, model.x_ref, model.u_ref);
    auto [P, K] = solve_dare(A, B, model.Q, model.R);
    ing.P = opts.terminal_cost_scale * P;
    ing.K_f = K;
    ing.K_delta = K;

    ing.epsilon = opts.epsilon;
    ing.lambda = spectral_radius(A - B * ing.K_delta);
    ing.kappa = B.lpNorm<Eigen::Infinity>();
    if (ing.lambda >= 1.0)
        throw NoConvergence("closed loop A - B K_delta is not contractive");

    ing.alpha = compute_alpha(ing, model, opts.alpha_cap * opts.terminal_cost_scale,
                              opts.admissibility_margin);

    // Certify one-step invariance and Lyapunov decrease on deterministic
    // samples; halve alpha until the nonlinear residuals are absorbed.
    auto certified = [&](double alpha) {
        TerminalIngredients probe = ing;
        probe.alpha = alpha;
        for (double scale : {1.0, 0.7, 0.4}) {
            int count = opts.invariance_samples / 3 + 1;
            for (const StateVector& x : sample_ellipsoid(probe, count, scale)) {
                ControlInput u = terminal_control(x, probe);
                StateVector xn = model.step(x, u);
                const double vf = probe.terminal_cost(x);
                const double vfn = probe.terminal_cost(xn);
                if (vfn > alpha) return false;
                Eigen::VectorXd dx = x - model.x_ref;
                Eigen::VectorXd du = u - model.u_ref;
                const double stage = dx.dot(model.Q * dx) + du.dot(model.R * du);
                if (vfn - vf > -stage + opts.decrease_tol) return false;
            }
        }
        return true;
    };
    int shrinks = 0;
    while (!certified(ing.alpha)) {
        ing.alpha *= 0.5;
        if (++shrinks > 60 || ing.alpha < 1e-9) throw EmptyTerminalSet(ing.alpha);
    }
    return ing;
}

// ---------------------------------------------------------------------------
// Serialization (flat text artifact with checksum)
// ---------------------------------------------------------------------------

namespace detail {

inline void dump_matrix(std::ostringstream& out, const std::string& name,
                        const Eigen::MatrixXd& m) {
    out << name << " " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out << (c ? " " : "") << format_double(m(r, c));
        out << "\n";
    }
}

inline Eigen::MatrixXd parse_matrix(std::istringstream& in, const std::string& want) {
    std::string name;
    Eigen::Index rows, cols;
    if (!(in >> name >> rows >> cols) || name != want)
        throw IoError("terminal artifact: expected matrix " + want);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            if (!(in >> m(r, c))) throw IoError("terminal artifact: truncated matrix " + want);
    return m;
}

}  // namespace detail

inline std::string serialize_ingredients(const TerminalIngredients& ing) {
    std::ostringstream body;
    body << "ampc-terminal-ingredients v1\n";
    body << "benchmark " << ing.benchmark << "\n";
    body << "alpha " << format_double(ing.alpha) << "\n";
    body << "epsilon " << format_double(ing.epsilon) << "\n";
    body << "lambda " << format_double(ing.lambda) << "\n";
    body << "kappa " << format_double(ing.kappa) << "\n";
    detail::dump_matrix(body, "P", ing.P);
    detail::dump_matrix(body, "K_f", ing.K_f);
    detail::dump_matrix(body, "K_delta", ing.K_delta);
    detail::dump_matrix(body, "x_ref", ing.x_ref);
    detail::dump_matrix(body, "u_ref", ing.u_ref);
    detail::dump_matrix(body, "input_lo", ing.input_lo);
    detail::dump_matrix(body, "input_hi", ing.input_hi);
    std::string s = body.str();
    return s + "checksum " + checksum_hex(s) + "\n";
}

inline std::string ingredients_checksum(const TerminalIngredients& ing) {
    std::string s = serialize_ingredients(ing);
    auto pos = s.rfind("checksum ");
    return s.substr(pos + 9, 16);
}

inline TerminalIngredients deserialize_ingredients(const std::string& text) {
    auto pos = text.rfind("checksum ");
    if (pos == std::string::npos) throw IoError("terminal artifact: missing checksum");
    const std::string body = text.substr(0, pos);
    const std::string declared = text.substr(pos + 9, 16);
    if (checksum_hex(body) != declared)
        throw IoError("terminal artifact: checksum mismatch (corrupt or edited)");
    std::istringstream in(body);
    std::string line;
    std::getline(in, line);
    if (line != "ampc-terminal-ingredients v1") throw IoError("terminal artifact: bad header");
    TerminalIngredients ing;
    std::string key;
    in >> key >> ing.benchmark;
    in >> key >> ing.alpha;
    in >> key >> ing.epsilon;
    in >> key >> ing.lambda;
    in >> key >> ing.kappa;
    ing.P = detail::parse_matrix(in, "P");
    ing.K_f = detail::parse_matrix(in, "K_f");
    ing.K_delta = detail::parse_matrix(in, "K_delta");
    ing.x_ref = detail::parse_matrix(in, "x_ref");
    ing.u_ref = detail::parse_matrix(in, "u_ref");
    ing.input_lo = detail::parse_matrix(in, "input_lo");
    ing.input_hi = detail::parse_matrix(in, "input_hi");
    return ing;
}

inline void save_ingredients(const std::string& path, const TerminalIngredients& ing) {
    write_file(path, serialize_ingredients(ing));
}

inline TerminalIngredients load_ingredients(const std::string& path) {
    return deserialize_ingredients(read_file(path));
}

}  // namespace ampc
