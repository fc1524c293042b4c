#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ampc/pipeline.hpp"

using namespace ampc;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitSampler = 3;
constexpr int kExitTraining = 4;
constexpr int kExitLineage = 5;

int dispatch(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const SamplerExhausted& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitSampler;
    } catch (const NonFiniteLoss& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitTraining;
    } catch (const LineageMismatch& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitLineage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe approximate-MPC laboratory: expert NMPC, policy imitation, and "
                 "safety-augmented evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string out = "runs";
    std::string benchmark;
    app.add_option("--config", config_path, "configuration file (key = value with [sections])")
        ->envname("AMPC_CONFIG");
    app.add_option("--seed", seed, "root seed; all randomness derives from it")
        ->envname("AMPC_SEED");
    app.add_option("--jobs", jobs, "worker cap for parallel stages")->envname("AMPC_JOBS");
    app.add_option("--out", out, "artifact directory")->envname("AMPC_OUT");
    app.add_option("--benchmark", benchmark, "quadcopter | kinematic_st | dynamic_st")
        ->envname("AMPC_BENCHMARK");

    auto* design = app.add_subcommand("design-terminal", "compute and store terminal ingredients");
    auto* gen = app.add_subcommand("gen-data", "generate the expert demonstration dataset");
    auto* train_cmd = app.add_subcommand("train", "train a policy on the stored dataset");
    std::string arch = "rnn";
    train_cmd->add_option("--arch", arch, "mlp | rnn");
    auto* eval_open = app.add_subcommand("eval-open", "open-loop feasibility protocol");
    auto* eval_closed = app.add_subcommand("eval-closed", "closed-loop safety protocol");
    std::string checkpoint;
    eval_open->add_option("--checkpoint", checkpoint, "checkpoint artifact to evaluate");
    eval_closed->add_option("--checkpoint", checkpoint, "checkpoint artifact to evaluate");
    auto* report = app.add_subcommand("report", "tabulate metrics artifacts");
    std::vector<std::string> metric_files;
    report->add_option("files", metric_files, "metrics artifacts to combine");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    return dispatch([&] {
        RunConfig rc;
        if (!config_path.empty()) rc.cfg = Config::load(config_path);
        if (!benchmark.empty()) rc.cfg.set("run.benchmark", benchmark);
        rc.seed = seed;
        rc.jobs = jobs;
        rc.out = out;

        if (design->parsed()) {
            cmd_design_terminal(rc);
        } else if (gen->parsed()) {
            cmd_gen_data(rc);
        } else if (train_cmd->parsed()) {
            cmd_train(rc, policy_arch_from_string(arch));
        } else if (eval_open->parsed()) {
            if (checkpoint.empty()) throw UsageError("eval-open needs --checkpoint");
            cmd_eval(rc, "open", checkpoint);
        } else if (eval_closed->parsed()) {
            if (checkpoint.empty()) throw UsageError("eval-closed needs --checkpoint");
            cmd_eval(rc, "closed", checkpoint);
        } else if (report->parsed()) {
            cmd_report(metric_files);
        }
    });
}
