#pragma once

#include <optional>
#include <string>
#include <Eigen/Core>

#include "ampc/models.hpp"
#include "ampc/terminal.hpp"

namespace ampc {

/// Full-sequence feasibility verdict, one flag per constraint category.
struct FeasibilityReport {
    bool state_ok = true;
    bool input_ok = true;
    bool obstacle_ok = true;
    bool terminal_ok = true;

    struct FirstViolation {
        int stage;               // 0..N (terminal and state checks run at N)
        std::string constraint;  // e.g. "state_hi[3]", "input_lo[0]", "obstacle[1]", "terminal"
        double margin;           // amount of violation beyond the slack
    };
    std::optional<FirstViolation> first_violation;

    bool feasible() const { return state_ok && input_ok && obstacle_ok && terminal_ok; }
};

/// Nominal forward simulation of u_seq (N x n_u, one row per step) from x.
/// Returns the visited states as an (N+1) x n_x matrix.
inline Eigen::MatrixXd rollout(const BenchmarkModel& model, const StateVector& x,
                               const Eigen::MatrixXd& u_seq) {
    if (u_seq.cols() != model.n_u || u_seq.rows() != model.N)
        throw DimensionMismatch("rollout expects an N x n_u input sequence");
    if (x.size() != model.n_x) throw DimensionMismatch("rollout state size");
    Eigen::MatrixXd xs(model.N + 1, model.n_x);
    xs.row(0) = x.transpose();
    StateVector cur = x;
    for (int k = 0; k < model.N; ++k) {
        cur = model.step(cur, u_seq.row(k).transpose());
        if (!cur.allFinite()) throw NonFiniteState("rollout diverged at stage " + std::to_string(k));
        xs.row(k + 1) = cur.transpose();
    }
    return xs;
}

namespace detail {

struct ViolationScan {
    FeasibilityReport rep;

    void note(bool& flag, int stage, const std::string& id, double margin) {
        flag = false;
        if (!rep.first_violation || stage < rep.first_violation->stage)
            rep.first_violation = FeasibilityReport::FirstViolation{stage, id, margin};
    }
};

}  // namespace detail

/**
 * Membership test of u_seq in the feasible-sequence set at x: input bounds at
 * every stage, state bounds and obstacle clearance at every visited state
 * (x itself included), and terminal-set membership of the final state. The
 * scan never stops early, so the report carries every category.
 *
 * Bounds are tightened by the ingredient margins (zero at epsilon = 0) and
 * relaxed by `slack` to shield the test from solver round-off. A sequence
 * that drives the model out of its validity region (non-finite state or the
 * low-speed tire singularity) fails the state category at that stage.
 */
inline FeasibilityReport is_feasible(const BenchmarkModel& model, const TerminalIngredients& ing,
                                     const StateVector& x, const Eigen::MatrixXd& u_seq,
                                     double slack = 1e-9, bool tightened = true) {
    if (u_seq.cols() != model.n_u || u_seq.rows() != model.N)
        throw DimensionMismatch("is_feasible expects an N x n_u input sequence");
    if (x.size() != model.n_x) throw DimensionMismatch("is_feasible state size");

    detail::ViolationScan scan;
    auto margin_at = [&](int k) { return tightened ? ing.margin(k) : 0.0; };

    // Inputs never depend on the rollout, so the whole category is always scanned.
    for (int k = 0; k < model.N; ++k) {
        const double m = margin_at(k);
        for (int i = 0; i < model.n_u; ++i) {
            const double lo = model.input_lo[i] + m, hi = model.input_hi[i] - m;
            if (u_seq(k, i) < lo - slack)
                scan.note(scan.rep.input_ok, k, "input_lo[" + std::to_string(i) + "]",
                          lo - u_seq(k, i));
            if (u_seq(k, i) > hi + slack)
                scan.note(scan.rep.input_ok, k, "input_hi[" + std::to_string(i) + "]",
                          u_seq(k, i) - hi);
        }
    }

    StateVector cur = x;
    bool broke = false;
    for (int k = 0; k <= model.N; ++k) {
        const double m = margin_at(k);
        for (int i = 0; i < model.n_x; ++i) {
            const double lo = model.state_lo[i] + m, hi = model.state_hi[i] - m;
            if (cur[i] < lo - slack)
                scan.note(scan.rep.state_ok, k, "state_lo[" + std::to_string(i) + "]",
                          lo - cur[i]);
            if (cur[i] > hi + slack)
                scan.note(scan.rep.state_ok, k, "state_hi[" + std::to_string(i) + "]",
                          cur[i] - hi);
        }
        if (model.position_plane()) {
            for (int i = 0; i < model.obstacles.n_obs(); ++i) {
                const auto& o = model.obstacles.centers[i];
                const double dx = cur[0] - o[0], dy = cur[1] - o[1];
                const double need = model.obstacles.r_safe + m;
                const double sq = dx * dx + dy * dy;
                if (sq < need * need - slack)
                    scan.note(scan.rep.obstacle_ok, k, "obstacle[" + std::to_string(i) + "]",
                              need * need - sq);
            }
        }
        if (k == model.N) break;
        try {
            cur = model.step(cur, u_seq.row(k).transpose());
            if (!cur.allFinite()) throw NonFiniteState("is_feasible rollout");
        } catch (const Error&) {
            // Left the model's validity region: counts against the state category.
            scan.note(scan.rep.state_ok, k + 1, "model_validity", 0.0);
            scan.rep.terminal_ok = false;
            broke = true;
            break;
        }
    }
    if (!broke) {
        const double vf = ing.terminal_cost(cur);
        if (vf > ing.alpha + slack)
            scan.note(scan.rep.terminal_ok, model.N, "terminal", vf - ing.alpha);
    }
    return scan.rep;
}

/// Input sequence produced by rolling the clamped terminal controller for N
/// steps from x. For x in the terminal set this is a feasible sequence by
/// invariance, which makes it the canonical safe initial candidate.
inline Eigen::MatrixXd terminal_rollout_sequence(const BenchmarkModel& model,
                                                 const TerminalIngredients& ing,
                                                 const StateVector& x) {
    Eigen::MatrixXd u_seq(model.N, model.n_u);
    StateVector cur = x;
    for (int k = 0; k < model.N; ++k) {
        const ControlInput u = terminal_control(cur, ing);
        u_seq.row(k) = u.transpose();
        cur = model.step(cur, u);
    }
    return u_seq;
}

/**
 * Cost functional of Algorithm-style sequence evaluation: the inputs are
 * applied literally along a nominal rollout and scored by the sum of stage
 * costs plus the terminal cost.
 */
inline double sequence_cost(const BenchmarkModel& model, const TerminalIngredients& ing,
                            const StateVector& x, const Eigen::MatrixXd& u_seq) {
    if (u_seq.cols() != model.n_u || u_seq.rows() != model.N)
        throw DimensionMismatch("sequence_cost expects an N x n_u input sequence");
    double cost = 0.0;
    StateVector cur = x;
    for (int k = 0; k < model.N; ++k) {
        const ControlInput u = u_seq.row(k).transpose();
        cost += stage_cost(cur, u, model);
        cur = model.step(cur, u);
        if (!cur.allFinite())
            throw NonFiniteState("sequence_cost rollout diverged at stage " + std::to_string(k));
    }
    return cost + ing.terminal_cost(cur);
}

}  // namespace ampc
