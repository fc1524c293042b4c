#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>
#include <Eigen/Core>

#include "ampc/config.hpp"
#include "ampc/matrix_io.hpp"
#include "ampc/nmpc.hpp"
#include "ampc/parallel.hpp"
#include "ampc/policy.hpp"
#include "ampc/rng.hpp"
#include "ampc/safe_wrapper.hpp"
#include "ampc/training.hpp"

namespace ampc {

enum class RolloutOutcome { SafeComplete, Violated, Diverged };

inline const char* to_string(RolloutOutcome o) {
    switch (o) {
        case RolloutOutcome::SafeComplete: return "safe_complete";
        case RolloutOutcome::Violated: return "violated";
        case RolloutOutcome::Diverged: return "diverged";
    }
    return "?";
}

/// Closed-loop trace: realized states/inputs, the disturbance sequence, the
/// per-step safety decisions (wrapped controllers only) and violation flags.
struct RolloutRecord {
    Eigen::MatrixXd states;       // (T+1) x n_x (truncated on early exit)
    Eigen::MatrixXd inputs;       // T x n_u applied inputs
    Eigen::MatrixXd disturbance;  // T x n_u
    std::vector<SafetyDecision> decisions;
    std::vector<char> violation_flags;  // per executed step
    RolloutOutcome outcome = RolloutOutcome::SafeComplete;
    int violated_step = -1;

    bool any_intervention() const {
        for (const auto& d : decisions)
            if (d.intervention()) return true;
        return false;
    }
};

/// What drives the loop: the receding-horizon expert, the naive first-input
/// policy, or the safety-wrapped policy with its stored candidate.
struct Controller {
    enum class Kind { Expert, NaivePolicy, WrappedPolicy };
    Kind kind = Kind::NaivePolicy;
    const Policy* policy = nullptr;
    const SqpSolver<BenchmarkModel>* solver = nullptr;
    std::optional<Candidate> initial_candidate;

    static Controller expert(const SqpSolver<BenchmarkModel>& s) {
        Controller c;
        c.kind = Kind::Expert;
        c.solver = &s;
        return c;
    }
    static Controller naive(const Policy& p) {
        Controller c;
        c.kind = Kind::NaivePolicy;
        c.policy = &p;
        return c;
    }
    static Controller wrapped(const Policy& p, Candidate init) {
        Controller c;
        c.kind = Kind::WrappedPolicy;
        c.policy = &p;
        c.initial_candidate = std::move(init);
        return c;
    }
};

/**
 * Closed-loop simulation with bounded input disturbance: the applied input
 * is the controller output plus an i.i.d. uniform [-eps, eps] draw, clamped
 * to the physical input box. Constraints are checked on realized states and
 * inputs. Naive rollouts stop at the first violation; wrapped and expert
 * rollouts run the full horizon.
 */
inline RolloutRecord closed_loop_run(const BenchmarkModel& model, const TerminalIngredients& ing,
                                     const Controller& controller, const StateVector& x0,
                                     int steps, double eps, std::uint64_t seed) {
    RolloutRecord rec;
    rec.states.resize(steps + 1, model.n_x);
    rec.inputs.resize(steps, model.n_u);
    rec.disturbance.resize(steps, model.n_u);
    rec.states.row(0) = x0.transpose();

    Rng rng = Rng::stream(seed, 0xd157);
    StateVector x = x0;
    Candidate cand;
    if (controller.kind == Controller::Kind::WrappedPolicy) {
        if (!controller.initial_candidate.has_value())
            throw UsageError("wrapped controller needs an initial candidate");
        cand = *controller.initial_candidate;
    }
    std::optional<OcpSolution> prev;

    int executed = 0;
    for (int t = 0; t < steps; ++t) {
        ControlInput u_cmd(model.n_u);
        switch (controller.kind) {
            case Controller::Kind::Expert: {
                auto [u0, sol] = expert_action(*controller.solver, x, prev ? &*prev : nullptr);
                u_cmd = u0;
                prev = std::move(sol);
                break;
            }
            case Controller::Kind::NaivePolicy:
                u_cmd = controller.policy->propose(x).row(0).transpose();
                break;
            case Controller::Kind::WrappedPolicy: {
                SafeStepResult r = safe_step(
                    x, [&](const StateVector& s) { return controller.policy->propose(s); }, cand,
                    model, ing);
                u_cmd = r.u0;
                cand = std::move(r.next);
                rec.decisions.push_back(r.decision);
                break;
            }
        }
        ControlInput d(model.n_u);
        for (int j = 0; j < model.n_u; ++j) d[j] = eps * rng.uniform(-1.0, 1.0);
        ControlInput u = (u_cmd + d).cwiseMax(model.input_lo).cwiseMin(model.input_hi);
        rec.inputs.row(t) = u.transpose();
        rec.disturbance.row(t) = d.transpose();

        const bool violated = !constraint_violations(x, u, model).empty();
        rec.violation_flags.push_back(violated ? 1 : 0);
        if (violated && rec.violated_step < 0) {
            rec.outcome = RolloutOutcome::Violated;
            rec.violated_step = t;
        }
        ++executed;
        try {
            x = model.step(x, u);
        } catch (const Error&) {
            rec.outcome = RolloutOutcome::Diverged;
            break;
        }
        if (!x.allFinite()) {
            rec.outcome = RolloutOutcome::Diverged;
            break;
        }
        rec.states.row(t + 1) = x.transpose();
        if (violated && controller.kind == Controller::Kind::NaivePolicy) break;
        // Final-state violations count for the last executed step.
        if (t + 1 == steps && !constraint_violations(x, model.u_ref, model).empty() &&
            rec.violated_step < 0) {
            rec.outcome = RolloutOutcome::Violated;
            rec.violated_step = t + 1;
        }
    }
    rec.states.conservativeResize(executed + 1, Eigen::NoChange);
    rec.inputs.conservativeResize(executed, Eigen::NoChange);
    rec.disturbance.conservativeResize(executed, Eigen::NoChange);
    return rec;
}

/**
 * Open-loop feasibility protocol: from each test state, apply the policy's
 * first input, step the nominal dynamics, re-evaluate the policy at the
 * successor and score feasibility of that successor proposal.
 */
inline double open_loop_eval(const BenchmarkModel& model, const TerminalIngredients& ing,
                             const std::function<Eigen::MatrixXd(const StateVector&)>& policy,
                             const Eigen::MatrixXd& test_states, int jobs = 1) {
    const auto M = test_states.rows();
    if (M == 0) throw EmptyTestSet("open_loop_eval needs at least one test state");
    std::vector<char> ok(M, 0);
    parallel_for(static_cast<int>(M), jobs, [&](int i) {
        const StateVector x = test_states.row(i).transpose();
        try {
            const Eigen::MatrixXd u_hat = policy(x);
            const StateVector successor = model.step(x, u_hat.row(0).transpose());
            const Eigen::MatrixXd next_prop = policy(successor);
            ok[i] = is_feasible(model, ing, successor, next_prop).feasible() ? 1 : 0;
        } catch (const Error&) {
            ok[i] = 0;
        }
    });
    double count = 0;
    for (char c : ok) count += c;
    return 100.0 * count / static_cast<double>(M);
}

/// Aggregated evaluation metrics in the reporting convention of the tables:
/// Safe % over naive rollouts, Interv. % over wrapped rollouts, and reason
/// percentages over the intervening rollouts (several may apply at once).
struct MetricsSummary {
    double feas_pct = 0.0;
    double safe_pct = 0.0;
    double wrapped_safe_pct = 0.0;
    double interv_pct = 0.0;
    double reason_state_pct = 0.0;
    double reason_term_pct = 0.0;
    double reason_cost_pct = 0.0;
    int n_rollouts = 0;
    double epochs_to_stop = 0.0;

    Config to_config() const {
        Config c;
        c.set_double("metrics.feas_pct", feas_pct);
        c.set_double("metrics.safe_pct", safe_pct);
        c.set_double("metrics.wrapped_safe_pct", wrapped_safe_pct);
        c.set_double("metrics.interv_pct", interv_pct);
        c.set_double("metrics.reason_state_pct", reason_state_pct);
        c.set_double("metrics.reason_term_pct", reason_term_pct);
        c.set_double("metrics.reason_cost_pct", reason_cost_pct);
        c.set_int("metrics.n_rollouts", n_rollouts);
        c.set_double("metrics.epochs_to_stop", epochs_to_stop);
        return c;
    }
};

struct ClosedLoopOptions {
    int steps = 0;  // 0: benchmark default (quadcopter 100, vehicles 470)
    double eps = 0.0;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool keep_records = false;
};

inline int default_rollout_steps(const BenchmarkModel& m) {
    return m.name == BenchmarkId::Quadcopter ? 100 : 470;
}

struct ClosedLoopResult {
    MetricsSummary metrics;
    std::vector<RolloutRecord> naive_records;    // populated when keep_records
    std::vector<RolloutRecord> wrapped_records;
};

/**
 * Closed-loop protocol: each evaluation row provides a feasible state and
 * its stored safe candidate (the expert sequence). The rollout starts from
 * the post-action state of that candidate's first input; the naive run
 * scores Safe %, the wrapped run scores Interv. % and the reason breakdown.
 */
inline ClosedLoopResult closed_loop_eval(const BenchmarkModel& model,
                                         const TerminalIngredients& ing, const Policy& policy,
                                         const Dataset& eval_rows, ClosedLoopOptions opts) {
    const int M = static_cast<int>(eval_rows.size());
    if (M < 1) throw EmptyTestSet("closed_loop_eval needs at least one rollout");
    const int steps = opts.steps > 0 ? opts.steps : default_rollout_steps(model);

    struct PerRollout {
        bool naive_safe = false, wrapped_safe = false, intervened = false;
        bool r_state = false, r_term = false, r_cost = false;
    };
    std::vector<PerRollout> rows(M);
    ClosedLoopResult out;
    if (opts.keep_records) {
        out.naive_records.resize(M);
        out.wrapped_records.resize(M);
    }

    parallel_for(M, opts.jobs, [&](int i) {
        const StateVector x0 = eval_rows.inputs.row(i).transpose();
        const Eigen::MatrixXd u_init = eval_rows.target_sequence(i, model.N, model.n_u);
        const StateVector x1 = model.step(x0, u_init.row(0).transpose());
        Candidate cand = shift_append(u_init, x0, model, ing);
        cand.source = CandidateSource::Initial;

        RolloutRecord naive = closed_loop_run(model, ing, Controller::naive(policy), x1, steps,
                                              opts.eps, opts.seed ^ (2 * i));
        RolloutRecord wrapped =
            closed_loop_run(model, ing, Controller::wrapped(policy, cand), x1, steps, opts.eps,
                            opts.seed ^ (2 * i + 1));
        PerRollout& r = rows[i];
        r.naive_safe = naive.outcome == RolloutOutcome::SafeComplete;
        r.wrapped_safe = wrapped.outcome == RolloutOutcome::SafeComplete;
        for (const auto& d : wrapped.decisions) {
            if (!d.intervention()) continue;
            r.intervened = true;
            r.r_state |= d.reason_state;
            r.r_term |= d.reason_terminal;
            r.r_cost |= d.reason_cost;
        }
        if (opts.keep_records) {
            out.naive_records[i] = std::move(naive);
            out.wrapped_records[i] = std::move(wrapped);
        }
    });

    MetricsSummary& m = out.metrics;
    m.n_rollouts = M;
    int n_interv = 0;
    for (const auto& r : rows) {
        m.safe_pct += r.naive_safe ? 1 : 0;
        m.wrapped_safe_pct += r.wrapped_safe ? 1 : 0;
        if (r.intervened) {
            ++n_interv;
            m.reason_state_pct += r.r_state ? 1 : 0;
            m.reason_term_pct += r.r_term ? 1 : 0;
            m.reason_cost_pct += r.r_cost ? 1 : 0;
        }
    }
    m.safe_pct *= 100.0 / M;
    m.wrapped_safe_pct *= 100.0 / M;
    m.interv_pct = 100.0 * n_interv / M;
    if (n_interv > 0) {
        m.reason_state_pct *= 100.0 / n_interv;
        m.reason_term_pct *= 100.0 / n_interv;
        m.reason_cost_pct *= 100.0 / n_interv;
    }
    return out;
}

/// Per-rollout trace artifact: realized trajectories in the flat binary
/// matrix format plus a plain-text decision log, one record per step.
inline void save_rollout_record(const std::string& prefix, const RolloutRecord& rec) {
    save_matrix(prefix + "_states.bin", rec.states);
    save_matrix(prefix + "_inputs.bin", rec.inputs);
    save_matrix(prefix + "_disturbance.bin", rec.disturbance);
    std::ostringstream log;
    log << "# t chosen proposal_feasible candidate_feasible reason_state reason_terminal "
           "reason_cost proposal_cost candidate_cost violation\n";
    for (std::size_t t = 0; t < rec.violation_flags.size(); ++t) {
        log << t;
        if (t < rec.decisions.size()) {
            const auto& d = rec.decisions[t];
            log << " " << (d.chosen == Chosen::Proposal ? "proposal" : "candidate") << " "
                << d.proposal_feasible << " " << d.candidate_feasible << " " << d.reason_state
                << " " << d.reason_terminal << " " << d.reason_cost << " "
                << (d.proposal_cost ? format_double(*d.proposal_cost) : "nan") << " "
                << format_double(d.candidate_cost);
        } else {
            log << " naive - - - - - - -";
        }
        log << " " << static_cast<int>(rec.violation_flags[t]) << "\n";
    }
    log << "# outcome " << to_string(rec.outcome) << " violated_step " << rec.violated_step
        << "\n";
    write_file(prefix + "_decisions.log", log.str());
}

}  // namespace ampc
