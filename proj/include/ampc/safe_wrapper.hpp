#pragma once

#include <optional>
#include <Eigen/Core>

#include "ampc/feasibility.hpp"
#include "ampc/models.hpp"
#include "ampc/terminal.hpp"

namespace ampc {

enum class CandidateSource { Initial, NnAccepted, Shifted };

inline const char* to_string(CandidateSource s) {
    switch (s) {
        case CandidateSource::Initial: return "initial";
        case CandidateSource::NnAccepted: return "nn_accepted";
        case CandidateSource::Shifted: return "shifted";
    }
    return "?";
}

/// The stored safe input sequence u~(t) with provenance.
struct Candidate {
    Eigen::MatrixXd u_seq;  // N x n_u
    CandidateSource source = CandidateSource::Initial;
    double cost_at_creation = 0.0;
};

enum class Chosen { Proposal, Candidate };

/**
 * Outcome of one evaluation of the safety gate. `reasons` uses one flag per
 * gate of the acceptance check: State (state/input/obstacle feasibility
 * along the predicted rollout), Terminal (terminal-set membership of the
 * final state), Cost (fails to strictly reduce the sequence cost against the
 * stored candidate). Gates are evaluated independently, so several reasons
 * can co-occur.
 */
struct SafetyDecision {
    bool proposal_feasible = false;
    Chosen chosen = Chosen::Candidate;
    bool reason_state = false;
    bool reason_terminal = false;
    bool reason_cost = false;
    std::optional<double> proposal_cost;
    double candidate_cost = 0.0;
    // The stored candidate itself failed the feasibility re-check at the
    // current state (possible under disturbance); it is applied regardless
    // and the flag surfaces the tightening deficiency.
    bool candidate_feasible = true;

    bool intervention() const { return chosen == Chosen::Candidate; }
    int reason_count() const {
        return (reason_state ? 1 : 0) + (reason_terminal ? 1 : 0) + (reason_cost ? 1 : 0);
    }
};

/// Shift-and-append candidate update: drop the applied first input and append
/// the terminal controller evaluated at the N-step nominal flow.
inline Candidate shift_append(const Eigen::MatrixXd& u_applied, const StateVector& x,
                              const BenchmarkModel& model, const TerminalIngredients& ing) {
    if (u_applied.rows() != model.N || u_applied.cols() != model.n_u)
        throw DimensionMismatch("shift_append expects an N x n_u sequence");
    Eigen::MatrixXd xs = rollout(model, x, u_applied);  // throws NonFiniteState on divergence
    Candidate next;
    next.u_seq.resize(model.N, model.n_u);
    next.u_seq.topRows(model.N - 1) = u_applied.bottomRows(model.N - 1);
    next.u_seq.row(model.N - 1) =
        terminal_control(xs.row(model.N).transpose(), ing).transpose();
    next.source = CandidateSource::Shifted;
    next.cost_at_creation =
        sequence_cost(model, ing, xs.row(1).transpose(), next.u_seq);
    return next;
}

/// A candidate for a state inside the terminal set: roll the terminal
/// controller for the whole horizon (feasible by invariance).
inline Candidate terminal_candidate(const StateVector& x, const BenchmarkModel& model,
                                    const TerminalIngredients& ing) {
    Candidate c;
    c.u_seq = terminal_rollout_sequence(model, ing, x);
    c.source = CandidateSource::Initial;
    c.cost_at_creation = sequence_cost(model, ing, x, c.u_seq);
    return c;
}

struct SafeStepResult {
    ControlInput u0;
    Candidate next;
    SafetyDecision decision;
};

/**
 * One step of the safety-augmented evaluation: score the proposal against
 * the stored candidate, apply the first input of the winner, and update the
 * candidate by shift-and-append.
 *
 * The proposal wins only when it passes the full feasibility check and
 * strictly beats the candidate's sequence cost (ties keep the provably safe
 * incumbent). A proposal whose rollout leaves the model's validity region
 * fails both the State and Cost gates.
 */
template <class PolicyFn>
SafeStepResult safe_step(const StateVector& x, const PolicyFn& policy, const Candidate& cand,
                         const BenchmarkModel& model, const TerminalIngredients& ing,
                         double slack = 1e-9) {
    SafeStepResult out;
    SafetyDecision& d = out.decision;

    d.candidate_feasible = is_feasible(model, ing, x, cand.u_seq, slack).feasible();
    d.candidate_cost = sequence_cost(model, ing, x, cand.u_seq);

    const Eigen::MatrixXd proposal = policy(x);
    if (proposal.rows() != model.N || proposal.cols() != model.n_u)
        throw DimensionMismatch("policy proposal must be N x n_u");
    FeasibilityReport rep = is_feasible(model, ing, x, proposal, slack);
    d.proposal_feasible = rep.feasible();
    d.reason_state = !(rep.state_ok && rep.input_ok && rep.obstacle_ok);
    d.reason_terminal = !rep.terminal_ok;
    try {
        d.proposal_cost = sequence_cost(model, ing, x, proposal);
    } catch (const Error&) {
        d.proposal_cost.reset();  // diverged rollout: no finite cost exists
    }

    const bool strictly_better =
        d.proposal_cost.has_value() && *d.proposal_cost < d.candidate_cost;
    d.reason_cost = !strictly_better;
    d.chosen = (d.proposal_feasible && strictly_better) ? Chosen::Proposal : Chosen::Candidate;

    const Eigen::MatrixXd& chosen_seq =
        d.chosen == Chosen::Proposal ? proposal : cand.u_seq;
    out.u0 = chosen_seq.row(0).transpose();
    out.next = shift_append(chosen_seq, x, model, ing);
    if (d.chosen == Chosen::Proposal) out.next.source = CandidateSource::NnAccepted;
    return out;
}

}  // namespace ampc
