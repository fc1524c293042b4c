#include "doctest.h"
#include <chrono>

#include <cstdlib>
#include <filesystem>

#include "ampc/pipeline.hpp"

using namespace ampc;
namespace fs = std::filesystem;

namespace {

/// Small, fast run configuration for pipeline tests.
RunConfig tiny_run(const fs::path& out, std::uint64_t seed) {
    RunConfig rc;
    rc.cfg = Config::parse(
        "[run]\n"
        "benchmark = kinematic_st\n"
        "[dataset]\n"
        "M = 24\n"
        "[train]\n"
        "rnn_hidden = 16\n"
        "mlp_hidden = 16\n"
        "max_epochs = 25\n"
        "patience = 25\n"
        "batch_size = 8\n"
        "[eval]\n"
        "M = 4\n"
        "steps = 50\n");
    rc.seed = seed;
    rc.jobs = 2;
    rc.out = out.string();
    return rc;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(AMPC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("pipeline end to end with bit-identical repeats") {
    fs::path dir_a = fs::temp_directory_path() / "ampc_cli_a";
    fs::path dir_b = fs::temp_directory_path() / "ampc_cli_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    for (const fs::path& dir : {dir_a, dir_b}) {
        RunConfig rc = tiny_run(dir, 20260808);
        cmd_design_terminal(rc);
        cmd_gen_data(rc);
        cmd_train(rc, PolicyArch::Rnn);
        cmd_eval(rc, "open", rc.checkpoint_path("rnn"));
        cmd_eval(rc, "closed", rc.checkpoint_path("rnn"));
    }
    for (const char* name :
         {"terminal_kinematic_st.txt", "dataset_kinematic_st.manifest", "dataset_kinematic_st.bin",
          "checkpoint_kinematic_st_rnn.bin", "curves_kinematic_st_rnn.csv",
          "metrics_kinematic_st_rnn_open.txt", "metrics_kinematic_st_rnn_closed.txt"}) {
        CAPTURE(name);
        CHECK(read_file((dir_a / name).string()) == read_file((dir_b / name).string()));
    }

    // The wrapped controller is exactly safe at eps = 0 regardless of policy.
    Config closed = Config::load((dir_a / "metrics_kinematic_st_rnn_closed.txt").string());
    CHECK(closed.get_double("metrics.wrapped_safe_pct", -1) == 100.0);
    CHECK(closed.get_double("metrics.interv_pct", -1) >= 0.0);
    Config open = Config::load((dir_a / "metrics_kinematic_st_rnn_open.txt").string());
    CHECK(open.get_double("metrics.feas_pct", -1) >= 0.0);
    CHECK(open.get_double("metrics.feas_pct", -1) <= 100.0);

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("training refuses mixed lineage") {
    fs::path dir = fs::temp_directory_path() / "ampc_cli_lineage";
    fs::remove_all(dir);
    RunConfig rc = tiny_run(dir, 3);
    cmd_design_terminal(rc);
    cmd_gen_data(rc);
    // Regenerate ingredients with a different design: dataset is now stale.
    RunConfig other = rc;
    other.cfg.set_double("terminal.cost_scale", 5.0);
    cmd_design_terminal(other);
    CHECK_THROWS_AS(run_training(rc, PolicyArch::Mlp), LineageMismatch);
    fs::remove_all(dir);
}

TEST_CASE("checkpoints carry report metadata") {
    fs::path dir = fs::temp_directory_path() / "ampc_cli_meta";
    fs::remove_all(dir);
    RunConfig rc = tiny_run(dir, 5);
    cmd_design_terminal(rc);
    cmd_gen_data(rc);
    cmd_train(rc, PolicyArch::Mlp);
    auto [policy, meta] = load_checkpoint(rc.checkpoint_path("mlp"));
    CHECK(meta.get_string("train.arch", "") == "mlp");
    CHECK(meta.get_string("train.stop_reason", "").size() > 0);
    CHECK(meta.get_int("train.epochs_run", 0) > 0);
    CHECK(meta.get_string("lineage.dataset", "").size() == 16);
    CHECK(meta.get_string("lineage.ingredients", "").size() == 16);
    fs::remove_all(dir);
}

TEST_CASE("a 10-row smoke generation finishes within the minute budget") {
    fs::path dir = fs::temp_directory_path() / "ampc_cli_smoke";
    fs::remove_all(dir);
    RunConfig rc = tiny_run(dir, 11);
    rc.cfg.set_int("dataset.M", 10);
    const auto t0 = std::chrono::steady_clock::now();
    cmd_design_terminal(rc);
    cmd_gen_data(rc);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(dt < 60.0);
    Dataset ds = load_dataset(rc.dataset_prefix());
    CHECK(ds.size() == 10);
    CHECK(ds.manifest.get_u64("dataset.seed", 0) == 11);
    fs::remove_all(dir);
}

TEST_CASE("process exit codes") {
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("design-terminal --benchmark not_a_system --out /tmp/ampc_cli_x") == 2);
    CHECK(run_cli("eval-open --out /tmp/ampc_cli_x") == 2);  // missing --checkpoint
    CHECK(run_cli("definitely-not-a-subcommand") == 2);
}

TEST_SUITE_END();
