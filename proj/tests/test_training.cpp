#include "doctest.h"

#include <filesystem>

#include "ampc/rng.hpp"
#include "ampc/training.hpp"

using namespace ampc;

namespace {

struct KinFixture {
    BenchmarkModel model = make_kinematic_st();
    TerminalIngredients ing = design_terminal(model);
};

const KinFixture& kin() {
    static KinFixture f;
    return f;
}

/// Synthetic dataset with an exactly-linear "expert": targets = G x.
Dataset linear_synthetic(const Eigen::MatrixXd& G, int M, int n_x, int N, int n_u,
                         std::uint64_t seed) {
    Dataset ds;
    ds.inputs.resize(M, n_x);
    ds.targets.resize(M, N * n_u);
    Rng rng(seed);
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < n_x; ++j) ds.inputs(i, j) = rng.uniform(-1, 1);
        ds.targets.row(i) = (G * ds.inputs.row(i).transpose()).transpose();
    }
    ds.normalizer = Normalizer::identity(n_x, n_u);
    ds.manifest.set("dataset.benchmark", "synthetic");
    ds.manifest.set_int("dataset.M", M);
    ds.manifest.set_int("dataset.n_x", n_x);
    ds.manifest.set_int("dataset.N", N);
    ds.manifest.set_int("dataset.n_u", n_u);
    store_normalizer(ds.manifest, ds.normalizer);
    seal_dataset(ds);
    return ds;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("dataset row at a pinned equilibrium imitates the reference input") {
    const auto& f = kin();
    SamplerWindows w;
    w.lo = f.model.x_ref;
    w.hi = f.model.x_ref;
    Dataset ds = generate_dataset(f.model, f.ing, w, 1, 7);
    CHECK(ds.size() == 1);
    CHECK((ds.inputs.row(0).transpose() - f.model.x_ref).lpNorm<Eigen::Infinity>() == 0.0);
    for (int k = 0; k < f.model.N; ++k)
        for (int j = 0; j < f.model.n_u; ++j)
            CHECK(ds.targets(0, k * f.model.n_u + j) ==
                  doctest::Approx(f.model.u_ref[j]).epsilon(1e-6));
}

TEST_CASE("every generated row re-validates as feasible") {
    const auto& f = kin();
    Dataset ds = generate_dataset(f.model, f.ing, SamplerWindows::defaults(f.model), 12, 11,
                                  SolverOptions{}, 2);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        FeasibilityReport rep =
            is_feasible(f.model, f.ing, ds.inputs.row(i).transpose(),
                        ds.target_sequence(i, f.model.N, f.model.n_u));
        CHECK(rep.feasible());
    }
}

TEST_CASE("dataset generation is deterministic and byte-stable") {
    const auto& f = kin();
    SamplerWindows w = SamplerWindows::defaults(f.model);
    Dataset a = generate_dataset(f.model, f.ing, w, 6, 1234, SolverOptions{}, 2);
    Dataset b = generate_dataset(f.model, f.ing, w, 6, 1234, SolverOptions{}, 1);
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    CHECK(dataset_checksum(a) == dataset_checksum(b));

    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "ampc_ds_test";
    fs::create_directories(dir);
    save_dataset((dir / "a").string(), a);
    save_dataset((dir / "b").string(), b);
    CHECK(read_file((dir / "a.bin").string()) == read_file((dir / "b.bin").string()));
    CHECK(read_file((dir / "a.manifest").string()) == read_file((dir / "b.manifest").string()));

    Dataset loaded = load_dataset((dir / "a").string());
    CHECK(loaded.inputs == a.inputs);
    CHECK(loaded.targets == a.targets);
    CHECK(dataset_checksum(loaded) == dataset_checksum(a));
    fs::remove_all(dir);
}

TEST_CASE("sampler exhaustion is reported") {
    const auto& f = kin();
    SamplerWindows w;
    // Pin the sampler inside the obstacle: nothing can ever be accepted.
    w.lo = f.model.x_ref;
    w.hi = f.model.x_ref;
    w.lo[0] = w.hi[0] = f.model.obstacles.centers[0][0];
    w.lo[1] = w.hi[1] = f.model.obstacles.centers[0][1];
    CHECK_THROWS_AS(
        generate_dataset(f.model, f.ing, w, 1, 3, SolverOptions{}, 1, /*max_attempts=*/50),
        SamplerExhausted);
}

TEST_CASE("split sizes, disjointness and determinism") {
    Dataset ds = linear_synthetic(Eigen::MatrixXd::Identity(6, 4).leftCols(4), 10, 4, 3, 2, 5);
    auto [a, b] = split(ds, 0.5, 77);
    CHECK(a.size() == 5);
    CHECK(b.size() == 5);

    // Union equals the original multiset of rows.
    std::vector<std::vector<double>> rows;
    for (auto* part : {&a, &b})
        for (Eigen::Index i = 0; i < part->size(); ++i) {
            std::vector<double> r(part->inputs.cols());
            for (Eigen::Index j = 0; j < part->inputs.cols(); ++j) r[j] = part->inputs(i, j);
            rows.push_back(r);
        }
    std::vector<std::vector<double>> orig;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        std::vector<double> r(ds.inputs.cols());
        for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j) r[j] = ds.inputs(i, j);
        orig.push_back(r);
    }
    std::sort(rows.begin(), rows.end());
    std::sort(orig.begin(), orig.end());
    CHECK(rows == orig);

    auto [a2, b2] = split(ds, 0.5, 77);
    CHECK(a.inputs == a2.inputs);
    CHECK(b.targets == b2.targets);
    CHECK_THROWS_AS(split(ds, 0.01, 1), EmptySplit);

    auto [tr, va, te] = split3(ds, 0.6, 0.2, 9);
    CHECK(tr.size() + va.size() + te.size() == 10);
    CHECK(te.manifest.get_string("split.role", "") == "second");
    CHECK(tr.manifest.get_string("split.parent", "x") ==
          va.manifest.get_string("split.parent", "y"));
}

TEST_CASE("training memorizes a single repeated sample") {
    Dataset ds = linear_synthetic(Eigen::MatrixXd::Random(6, 4), 1, 4, 3, 2, 21);
    // Duplicate the row so a validation split exists.
    Dataset dup;
    dup.inputs = ds.inputs.colwise().replicate(4);
    dup.targets = ds.targets.colwise().replicate(4);
    dup.manifest = ds.manifest;
    dup.normalizer = ds.normalizer;
    dup.manifest.set_int("dataset.M", 4);
    seal_dataset(dup);

    Policy pol;
    pol.arch = PolicyArch::Rnn;
    pol.rnn = RnnPolicy::create(4, 24, 3, 2, 99);
    pol.norm = dup.normalizer;
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 4;
    cfg.max_epochs = 2000;
    cfg.patience = 2000;
    cfg.validation_fraction = 0.25;
    cfg.seed = 5;
    TrainReport rep = train(pol, dup, cfg);
    CHECK(rep.best_val_loss < 1e-6);
}

TEST_CASE("linear policy on a linear expert recovers the map") {
    Eigen::MatrixXd G = Eigen::MatrixXd::Random(6, 4);
    Dataset ds = linear_synthetic(G, 256, 4, 3, 2, 33);
    Policy pol;
    pol.arch = PolicyArch::Mlp;
    pol.mlp = MlpPolicy::create(4, {}, 3, 2, 101);  // single affine layer
    pol.norm = ds.normalizer;
    TrainConfig cfg;
    cfg.learning_rate = 2e-2;
    cfg.batch_size = 64;
    cfg.max_epochs = 3000;
    cfg.patience = 3000;
    cfg.validation_fraction = 0.1;
    cfg.seed = 6;
    train(pol, ds, cfg);
    CHECK((pol.mlp.W[0] - G).lpNorm<Eigen::Infinity>() < 1e-3);
    CHECK(pol.mlp.b[0].lpNorm<Eigen::Infinity>() < 1e-3);
}

TEST_CASE("patience=1 stops after exactly one non-improving epoch") {
    Dataset ds = linear_synthetic(Eigen::MatrixXd::Random(6, 4), 20, 4, 3, 2, 44);
    Policy pol;
    pol.arch = PolicyArch::Mlp;
    pol.mlp = MlpPolicy::create(4, {8}, 3, 2, 55);
    pol.norm = ds.normalizer;
    TrainConfig cfg;
    cfg.learning_rate = 0.0;  // frozen parameters: validation can never improve
    cfg.max_epochs = 100;
    cfg.patience = 1;
    cfg.validation_fraction = 0.2;
    cfg.seed = 7;
    TrainReport rep = train(pol, ds, cfg);
    CHECK(rep.stop_reason == StopReason::EarlyStop);
    CHECK(rep.epochs_run == 2);  // epoch 1 sets the best, epoch 2 fails to improve
}

TEST_CASE("returned checkpoint matches the minimum of the validation curve") {
    Dataset ds = linear_synthetic(Eigen::MatrixXd::Random(6, 4), 64, 4, 3, 2, 66);
    Policy pol;
    pol.arch = PolicyArch::Mlp;
    pol.mlp = MlpPolicy::create(4, {16}, 3, 2, 77);
    pol.norm = ds.normalizer;
    TrainConfig cfg;
    cfg.learning_rate = 5e-3;
    cfg.max_epochs = 120;
    cfg.patience = 120;
    cfg.seed = 8;
    TrainReport rep = train(pol, ds, cfg);
    double min_curve = *std::min_element(rep.val_curve.begin(), rep.val_curve.end());
    CHECK(rep.best_val_loss == doctest::Approx(min_curve).epsilon(1e-15));
    // Re-evaluate the returned parameters on the same validation split.
    auto [tr, va] = split(ds, 1.0 - cfg.validation_fraction, cfg.seed);
    double total = 0;
    for (Eigen::Index i = 0; i < va.size(); ++i) {
        Eigen::VectorXd xn = ds.normalizer.normalize_state(va.inputs.row(i).transpose());
        total += pol.loss_grad(xn, ds.normalizer.normalize_inputs(va.target_sequence(i, 3, 2)))
                     .first;
    }
    CHECK(total / va.size() == doctest::Approx(rep.best_val_loss).epsilon(1e-12));
}

TEST_CASE("one small Adam step decreases a single sample's loss") {
    Rng rng(0xada);
    for (int trial = 0; trial < 100; ++trial) {
        MlpPolicy net = MlpPolicy::create(4, {10}, 3, 2, 1000 + trial);
        Eigen::VectorXd x(4);
        for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-1, 1);
        Eigen::MatrixXd target(3, 2);
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 2; ++j) target(k, j) = rng.uniform(-1, 1);
        auto [l0, g] = backward(net, x, target);
        // One Adam step from zero moments reduces to signed-gradient descent.
        Eigen::VectorXd theta = pack_params(net);
        Eigen::VectorXd step = g.cwiseQuotient((g.cwiseAbs().array() + 1e-8).matrix());
        unpack_params(net, theta - 1e-5 * step);
        CHECK(backward(net, x, target).first < l0);
    }
}

TEST_CASE("training is deterministic bit for bit") {
    Dataset ds = linear_synthetic(Eigen::MatrixXd::Random(6, 4), 48, 4, 3, 2, 88);
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.max_epochs = 40;
    cfg.patience = 40;
    cfg.seed = 9;
    auto run = [&]() {
        Policy pol;
        pol.arch = PolicyArch::Rnn;
        pol.rnn = RnnPolicy::create(4, 12, 3, 2, 111);
        pol.norm = ds.normalizer;
        train(pol, ds, cfg);
        return pol.pack();
    };
    CHECK(run() == run());
}

TEST_CASE("divergence raises NonFiniteLoss") {
    Dataset ds = linear_synthetic(100.0 * Eigen::MatrixXd::Random(6, 4), 32, 4, 3, 2, 99);
    Policy pol;
    pol.arch = PolicyArch::Mlp;
    pol.mlp = MlpPolicy::create(4, {8}, 3, 2, 13);
    pol.norm = ds.normalizer;
    TrainConfig cfg;
    cfg.learning_rate = 1e200;  // parameter overflow makes the squared loss non-finite
    cfg.cosine_decay = false;
    cfg.max_epochs = 50;
    cfg.patience = 50;
    cfg.seed = 10;
    CHECK_THROWS_AS(train(pol, ds, cfg), NonFiniteLoss);
}

TEST_SUITE_END();
