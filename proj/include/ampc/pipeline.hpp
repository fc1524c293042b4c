#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ampc/config.hpp"
#include "ampc/harness.hpp"
#include "ampc/nmpc.hpp"
#include "ampc/policy.hpp"
#include "ampc/terminal.hpp"
#include "ampc/training.hpp"

namespace ampc {

/**
 * End-to-end pipeline behind the command-line tool. Every command takes the
 * same resolved run configuration; a single root seed fans out to the
 * sampler, splits, weight init, shuffles and rollouts through fixed stream
 * ids, which is what makes repeat runs byte-identical.
 */
struct RunConfig {
    Config cfg;
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out = ".";

    BenchmarkId benchmark() const {
        return benchmark_from_string(cfg.get_string("run.benchmark", "quadcopter"));
    }
    std::string bench_name() const { return to_string(benchmark()); }

    std::string ingredients_path() const { return out + "/terminal_" + bench_name() + ".txt"; }
    std::string dataset_prefix() const { return out + "/dataset_" + bench_name(); }
    std::string checkpoint_path(const std::string& arch) const {
        return out + "/checkpoint_" + bench_name() + "_" + arch + ".bin";
    }
    std::string curves_path(const std::string& arch) const {
        return out + "/curves_" + bench_name() + "_" + arch + ".csv";
    }
    std::string metrics_path(const std::string& arch, const std::string& mode) const {
        return out + "/metrics_" + bench_name() + "_" + arch + "_" + mode + ".txt";
    }

    int dataset_size() const {
        const int def = benchmark() == BenchmarkId::Quadcopter ? 20000
                        : benchmark() == BenchmarkId::KinematicST ? 5000
                                                                  : 10000;
        return static_cast<int>(cfg.get_int("dataset.M", def));
    }

    TerminalDesignOptions terminal_options() const {
        TerminalDesignOptions t;
        t.alpha_cap = cfg.get_double("terminal.alpha_cap", t.alpha_cap);
        t.terminal_cost_scale = cfg.get_double("terminal.cost_scale", t.terminal_cost_scale);
        t.invariance_samples =
            static_cast<int>(cfg.get_int("terminal.invariance_samples", t.invariance_samples));
        t.epsilon = cfg.get_double("terminal.epsilon", t.epsilon);
        return t;
    }

    SolverOptions solver_options() const {
        SolverOptions s;
        s.max_iterations = static_cast<int>(cfg.get_int("solver.max_iterations", s.max_iterations));
        s.kkt_tol = cfg.get_double("solver.kkt_tol", s.kkt_tol);
        s.constraint_tol = cfg.get_double("solver.constraint_tol", s.constraint_tol);
        s.backoff = cfg.get_double("solver.backoff", s.backoff);
        const std::string sched = cfg.get_string("solver.penalty_schedule", "");
        if (!sched.empty()) {
            s.penalty_schedule.clear();
            std::size_t start = 0;
            while (start < sched.size()) {
                auto comma = sched.find(',', start);
                if (comma == std::string::npos) comma = sched.size();
                s.penalty_schedule.push_back(
                    std::strtod(sched.substr(start, comma - start).c_str(), nullptr));
                start = comma + 1;
            }
            if (s.penalty_schedule.empty())
                throw ConfigError("solver.penalty_schedule must list at least one weight");
        }
        return s;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.learning_rate = cfg.get_double("train.learning_rate", 1e-3);
        t.cosine_decay = cfg.get_bool("train.cosine_decay", true);
        t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", 64));
        t.max_epochs = static_cast<int>(cfg.get_int("train.max_epochs", 400));
        t.patience = static_cast<int>(cfg.get_int("train.patience", 60));
        t.validation_fraction = cfg.get_double("train.validation_fraction", 0.1);
        t.max_wall_seconds = cfg.get_double("train.max_wall_seconds", 0.0);
        t.seed = seed;
        return t;
    }

    double test_fraction() const { return cfg.get_double("split.test_fraction", 0.2); }
    std::uint64_t split_seed() const { return seed ^ 0x7e57ULL; }

    int eval_rollouts() const { return static_cast<int>(cfg.get_int("eval.M", 100)); }
    int eval_steps() const { return static_cast<int>(cfg.get_int("eval.steps", 0)); }
    double eval_eps() const { return cfg.get_double("eval.eps", 0.0); }
    bool eval_save_traces() const { return cfg.get_bool("eval.save_traces", false); }
};

namespace detail {

inline void require_dir(const std::string& out) {
    std::filesystem::create_directories(out);
}

}  // namespace detail

inline void cmd_design_terminal(const RunConfig& rc) {
    detail::require_dir(rc.out);
    BenchmarkModel model = make_benchmark(rc.benchmark(), rc.cfg);
    TerminalIngredients ing = design_terminal(model, rc.terminal_options());
    save_ingredients(rc.ingredients_path(), ing);
    auto [A, B] = linearize(model, model.x_ref, model.u_ref);
    std::printf("terminal design %s: rho(A-BK_f) = %.6f, alpha = %.6g, checksum %s\n",
                rc.bench_name().c_str(), spectral_radius(A - B * ing.K_f), ing.alpha,
                ingredients_checksum(ing).c_str());
}

inline void cmd_gen_data(const RunConfig& rc) {
    detail::require_dir(rc.out);
    BenchmarkModel model = make_benchmark(rc.benchmark(), rc.cfg);
    TerminalIngredients ing = load_ingredients(rc.ingredients_path());
    SamplerWindows windows = SamplerWindows::from_config(model, rc.cfg);
    Dataset ds = generate_dataset(model, ing, windows, rc.dataset_size(), rc.seed,
                                  rc.solver_options(), rc.jobs);
    save_dataset(rc.dataset_prefix(), ds);
    std::printf("dataset %s: %lld rows, checksum %s\n", rc.bench_name().c_str(),
                static_cast<long long>(ds.size()), dataset_checksum(ds).c_str());
}

inline Policy make_policy(const RunConfig& rc, PolicyArch arch, const BenchmarkModel& model) {
    Policy pol;
    pol.arch = arch;
    if (arch == PolicyArch::Mlp) {
        std::vector<int> hidden;
        std::string widths = rc.cfg.get_string("train.mlp_hidden", "64,64");
        std::size_t start = 0;
        while (start < widths.size()) {
            auto comma = widths.find(',', start);
            if (comma == std::string::npos) comma = widths.size();
            hidden.push_back(std::stoi(widths.substr(start, comma - start)));
            start = comma + 1;
        }
        pol.mlp = MlpPolicy::create(model.n_x, hidden, model.N, model.n_u, rc.seed);
    } else {
        const int n_h = static_cast<int>(rc.cfg.get_int("train.rnn_hidden", 64));
        pol.rnn = RnnPolicy::create(model.n_x, n_h, model.N, model.n_u, rc.seed);
    }
    pol.norm = Normalizer::identity(model.n_x, model.n_u);
    return pol;
}

struct TrainOutcome {
    Policy policy;
    TrainReport report;
    Config meta;
};

inline TrainOutcome run_training(const RunConfig& rc, PolicyArch arch) {
    BenchmarkModel model = make_benchmark(rc.benchmark(), rc.cfg);
    TerminalIngredients ing = load_ingredients(rc.ingredients_path());
    Dataset ds = load_dataset(rc.dataset_prefix());
    if (ds.manifest.get_string("dataset.ingredients_checksum", "") != ingredients_checksum(ing))
        throw LineageMismatch("dataset was generated against different terminal ingredients");
    if (ds.manifest.get_string("dataset.benchmark", "") != rc.bench_name())
        throw LineageMismatch("dataset benchmark does not match the run configuration");

    auto [trainval, test] = split(ds, 1.0 - rc.test_fraction(), rc.split_seed());
    (void)test;  // evaluation commands rebuild the same split

    TrainOutcome out;
    out.policy = make_policy(rc, arch, model);
    out.report = train(out.policy, trainval, rc.train_config());

    out.meta.set("train.benchmark", rc.bench_name());
    out.meta.set("train.arch", to_string(arch));
    out.meta.set_u64("train.seed", rc.seed);
    out.meta.set_int("train.epochs_run", out.report.epochs_run);
    out.meta.set_double("train.best_val_loss", out.report.best_val_loss);
    out.meta.set("train.stop_reason", to_string(out.report.stop_reason));
    out.meta.set_double("split.test_fraction", rc.test_fraction());
    out.meta.set_u64("split.seed", rc.split_seed());
    out.meta.set("lineage.dataset", dataset_checksum(ds));
    out.meta.set("lineage.ingredients", ingredients_checksum(ing));
    return out;
}

inline void cmd_train(const RunConfig& rc, PolicyArch arch) {
    detail::require_dir(rc.out);
    TrainOutcome res = run_training(rc, arch);
    save_checkpoint(rc.checkpoint_path(to_string(arch)), res.policy, res.meta);
    std::vector<double> epochs(res.report.train_curve.size());
    for (std::size_t i = 0; i < epochs.size(); ++i) epochs[i] = static_cast<double>(i + 1);
    save_csv(rc.curves_path(to_string(arch)), {"epoch", "train_loss", "val_loss"},
             {epochs, res.report.train_curve, res.report.val_curve});
    std::printf("train %s %s: %d epochs (%s), best val loss %.6g\n", rc.bench_name().c_str(),
                to_string(arch).c_str(), res.report.epochs_run,
                to_string(res.report.stop_reason), res.report.best_val_loss);
}

/// Rebuild the held-out test rows recorded in the checkpoint metadata.
inline Dataset test_rows_for(const Config& meta, const Dataset& ds) {
    const double tf = std::strtod(meta.get_string("split.test_fraction", "0.2").c_str(), nullptr);
    auto [trainval, test] = split(ds, 1.0 - tf, meta.get_u64("split.seed", 0));
    (void)trainval;
    return test;
}

struct EvalOutcome {
    MetricsSummary metrics;
};

inline EvalOutcome run_eval(const RunConfig& rc, const std::string& mode,
                            const std::string& checkpoint_file) {
    BenchmarkModel model = make_benchmark(rc.benchmark(), rc.cfg);
    TerminalIngredients ing = load_ingredients(rc.ingredients_path());
    Dataset ds = load_dataset(rc.dataset_prefix());
    auto [policy, meta] = load_checkpoint(checkpoint_file);
    if (meta.get_string("lineage.dataset", "") != dataset_checksum(ds))
        throw LineageMismatch("checkpoint was trained on a different dataset");
    if (meta.get_string("lineage.ingredients", "") != ingredients_checksum(ing))
        throw LineageMismatch("checkpoint/ingredients mismatch");

    Dataset test = test_rows_for(meta, ds);
    const int M = std::min<int>(rc.eval_rollouts(), static_cast<int>(test.size()));
    Dataset rows = test;
    rows.inputs = test.inputs.topRows(M);
    rows.targets = test.targets.topRows(M);

    EvalOutcome out;
    if (mode == "open") {
        out.metrics.feas_pct = open_loop_eval(
            model, ing, [&](const StateVector& x) { return policy.propose(x); }, rows.inputs,
            rc.jobs);
        out.metrics.n_rollouts = M;
    } else if (mode == "closed") {
        ClosedLoopOptions opts;
        opts.steps = rc.eval_steps();
        opts.eps = rc.eval_eps();
        opts.seed = rc.seed;
        opts.jobs = rc.jobs;
        opts.keep_records = rc.eval_save_traces();
        ClosedLoopResult res = closed_loop_eval(model, ing, policy, rows, opts);
        out.metrics = res.metrics;
        if (rc.eval_save_traces()) {
            const std::string dir = rc.out + "/traces_" + rc.bench_name() + "_" +
                                    meta.get_string("train.arch", "policy");
            detail::require_dir(dir);
            for (int i = 0; i < static_cast<int>(res.wrapped_records.size()); ++i) {
                save_rollout_record(dir + "/naive_" + std::to_string(i), res.naive_records[i]);
                save_rollout_record(dir + "/wrapped_" + std::to_string(i),
                                    res.wrapped_records[i]);
            }
        }
    } else {
        throw UsageError("eval mode must be open or closed");
    }
    out.metrics.epochs_to_stop = meta.get_double("train.epochs_run", 0.0);
    return out;
}

inline void cmd_eval(const RunConfig& rc, const std::string& mode,
                     const std::string& checkpoint_file) {
    detail::require_dir(rc.out);
    EvalOutcome res = run_eval(rc, mode, checkpoint_file);
    auto [policy, meta] = load_checkpoint(checkpoint_file);
    Config artifact = res.metrics.to_config();
    artifact.set("eval.mode", mode);
    artifact.set("eval.benchmark", rc.bench_name());
    artifact.set("eval.arch", meta.get_string("train.arch", "?"));
    artifact.set_u64("eval.seed", rc.seed);
    artifact.set_double("eval.eps", rc.eval_eps());
    artifact.set("lineage.checkpoint", checkpoint_checksum(policy, meta));
    artifact.set("lineage.dataset", meta.get_string("lineage.dataset", ""));
    artifact.set("lineage.ingredients", meta.get_string("lineage.ingredients", ""));
    const std::string path = rc.metrics_path(meta.get_string("train.arch", "policy"), mode);
    artifact.save(path);
    if (mode == "open") {
        std::printf("eval-open %s %s: feasibility %.1f%% over %d states\n",
                    rc.bench_name().c_str(), meta.get_string("train.arch", "?").c_str(),
                    res.metrics.feas_pct, res.metrics.n_rollouts);
    } else {
        std::printf(
            "eval-closed %s %s: safe %.1f%% (wrapped %.1f%%), interv %.1f%%, reasons "
            "state/term/cost %.1f/%.1f/%.1f%% over %d rollouts\n",
            rc.bench_name().c_str(), meta.get_string("train.arch", "?").c_str(),
            res.metrics.safe_pct, res.metrics.wrapped_safe_pct, res.metrics.interv_pct,
            res.metrics.reason_state_pct, res.metrics.reason_term_pct,
            res.metrics.reason_cost_pct, res.metrics.n_rollouts);
    }
}

inline void cmd_report(const std::vector<std::string>& metric_files) {
    std::printf("%-14s %-5s %-7s %8s %8s %8s %8s %8s %8s\n", "benchmark", "arch", "mode", "feas%",
                "safe%", "interv%", "state%", "term%", "cost%");
    for (const auto& f : metric_files) {
        Config c = Config::load(f);
        std::printf("%-14s %-5s %-7s %8.1f %8.1f %8.1f %8.1f %8.1f %8.1f\n",
                    c.get_string("eval.benchmark", "?").c_str(),
                    c.get_string("eval.arch", "?").c_str(),
                    c.get_string("eval.mode", "?").c_str(), c.get_double("metrics.feas_pct", 0),
                    c.get_double("metrics.safe_pct", 0), c.get_double("metrics.interv_pct", 0),
                    c.get_double("metrics.reason_state_pct", 0),
                    c.get_double("metrics.reason_term_pct", 0),
                    c.get_double("metrics.reason_cost_pct", 0));
    }
}

}  // namespace ampc
