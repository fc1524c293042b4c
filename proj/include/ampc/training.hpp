#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>
#include <Eigen/Core>

#include "ampc/config.hpp"
#include "ampc/feasibility.hpp"
#include "ampc/matrix_io.hpp"
#include "ampc/nmpc.hpp"
#include "ampc/parallel.hpp"
#include "ampc/policy.hpp"
#include "ampc/rng.hpp"

namespace ampc {

/// Per-component rectangular window the initial-condition sampler draws from.
struct SamplerWindows {
    Eigen::VectorXd lo, hi;

    static SamplerWindows defaults(const BenchmarkModel& m) {
        SamplerWindows w;
        w.lo = m.x_ref;
        w.hi = m.x_ref;
        switch (m.name) {
            case BenchmarkId::Quadcopter: {
                for (int i = 0; i < 3; ++i) { w.lo[i] -= 2.0; w.hi[i] += 2.0; }
                for (int i = 3; i < 6; ++i) { w.lo[i] -= 1.0; w.hi[i] += 1.0; }
                const double phi = 0.8 * (M_PI / 9);
                for (int i : {6, 8}) { w.lo[i] -= phi; w.hi[i] += phi; }
                for (int i : {7, 9}) { w.lo[i] -= 0.5; w.hi[i] += 0.5; }
                break;
            }
            case BenchmarkId::KinematicST: {
                const double gp = 0.15, gpsi = 10.0 * M_PI / 180.0, gv = 0.4;
                w.lo[0] += -0.25 - gp; w.hi[0] += -0.25 + gp;
                w.lo[1] -= gp; w.hi[1] += gp;
                w.lo[2] -= gpsi; w.hi[2] += gpsi;
                w.lo[3] -= gv; w.hi[3] += gv;
                break;
            }
            case BenchmarkId::DynamicST: {
                const double gp = 0.10, gpsi = 5.0 * M_PI / 180.0, gv = 0.25;
                w.lo[0] += -0.15 - gp; w.hi[0] += -0.15 + gp;
                w.lo[1] -= gp; w.hi[1] += gp;
                w.lo[2] -= gpsi; w.hi[2] += gpsi;
                w.lo[3] -= gv; w.hi[3] += gv;
                w.lo[4] -= 0.02; w.hi[4] += 0.02;    // yaw rate
                w.lo[5] -= 0.005; w.hi[5] += 0.005;  // side slip
                w.lo[6] -= 0.2; w.hi[6] += 0.2;      // acceleration state
                w.lo[7] -= 0.02; w.hi[7] += 0.02;    // steering angle
                break;
            }
        }
        return w;
    }

    static SamplerWindows from_config(const BenchmarkModel& m, const Config& cfg) {
        SamplerWindows w = defaults(m);
        const std::string p = "sampler." + to_string(m.name) + ".";
        for (int i = 0; i < m.n_x; ++i) {
            w.lo[i] = cfg.get_double(p + "lo" + std::to_string(i), w.lo[i]);
            w.hi[i] = cfg.get_double(p + "hi" + std::to_string(i), w.hi[i]);
        }
        return w;
    }
};

/**
 * Supervised imitation dataset: states paired with the expert's recomposed
 * input sequences (row-major N*n_u per row). The manifest carries benchmark
 * id, lineage checksums, sampler window, seed and the normalization
 * constants, so training and evaluation provably share scaling.
 */
struct Dataset {
    Eigen::MatrixXd inputs;   // M x n_x
    Eigen::MatrixXd targets;  // M x (N * n_u)
    Config manifest;
    Normalizer normalizer;

    Eigen::Index size() const { return inputs.rows(); }

    Eigen::MatrixXd target_sequence(Eigen::Index row, int N, int n_u) const {
        Eigen::MatrixXd u(N, n_u);
        for (int k = 0; k < N; ++k)
            for (int j = 0; j < n_u; ++j) u(k, j) = targets(row, k * n_u + j);
        return u;
    }
};

namespace detail {

inline std::string join_csv(const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

inline Eigen::VectorXd parse_csv_vector(const std::string& s) {
    std::vector<double> vals;
    std::size_t start = 0;
    while (start < s.size()) {
        auto comma = s.find(',', start);
        if (comma == std::string::npos) comma = s.size();
        vals.push_back(std::strtod(s.substr(start, comma - start).c_str(), nullptr));
        start = comma + 1;
    }
    return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace detail

inline void store_normalizer(Config& c, const Normalizer& n) {
    c.set("norm.x_mu", detail::join_csv(n.x_mu));
    c.set("norm.x_sigma", detail::join_csv(n.x_sigma));
    c.set("norm.u_center", detail::join_csv(n.u_center));
    c.set("norm.u_half", detail::join_csv(n.u_half));
}

inline Normalizer load_normalizer(const Config& c) {
    Normalizer n;
    n.x_mu = detail::parse_csv_vector(c.get_string("norm.x_mu", "0"));
    n.x_sigma = detail::parse_csv_vector(c.get_string("norm.x_sigma", "1"));
    n.u_center = detail::parse_csv_vector(c.get_string("norm.u_center", "0"));
    n.u_half = detail::parse_csv_vector(c.get_string("norm.u_half", "1"));
    return n;
}

/// Lineage token: fingerprint of the manifest (sans checksum) plus payload.
inline std::string dataset_checksum(const Dataset& ds) {
    Config m = ds.manifest;
    m.set("dataset.checksum", "");
    Fnv1a h;
    h.update(m.dump());
    h.update(encode_matrix(ds.inputs));
    h.update(encode_matrix(ds.targets));
    return h.hex();
}

inline void seal_dataset(Dataset& ds) {
    ds.manifest.set("dataset.checksum", "");
    ds.manifest.set("dataset.checksum", dataset_checksum(ds));
}

inline void save_dataset(const std::string& prefix, const Dataset& ds) {
    write_file(prefix + ".manifest", ds.manifest.dump());
    // One flat binary matrix: [inputs | targets], dimensions in the header.
    Eigen::MatrixXd all(ds.inputs.rows(), ds.inputs.cols() + ds.targets.cols());
    all << ds.inputs, ds.targets;
    save_matrix(prefix + ".bin", all);
}

inline Dataset load_dataset(const std::string& prefix) {
    Dataset ds;
    ds.manifest = Config::load(prefix + ".manifest");
    Eigen::MatrixXd all = load_matrix(prefix + ".bin");
    const int n_x = static_cast<int>(ds.manifest.get_int("dataset.n_x", 0));
    if (n_x <= 0 || n_x > all.cols()) throw IoError("dataset manifest: bad n_x");
    ds.inputs = all.leftCols(n_x);
    ds.targets = all.rightCols(all.cols() - n_x);
    ds.normalizer = load_normalizer(ds.manifest);
    const std::string declared = ds.manifest.get_string("dataset.checksum", "");
    if (declared != dataset_checksum(ds))
        throw IoError("dataset checksum mismatch (corrupt or mixed lineage)");
    return ds;
}

/**
 * Rejection sampling of expert demonstrations: draw x0 from the window,
 * solve the OCP, keep converged pairs. Row r uses the derived stream
 * (seed xor r), so the dataset is reproducible and rows can be generated
 * concurrently and merged in index order.
 *
 * Throws SamplerExhausted when a row needs more than `max_attempts_per_row`
 * draws (acceptance below 1/max_attempts).
 */
template <class ModelT>
Dataset generate_dataset(const ModelT& model, const TerminalIngredients& ing,
                         const SamplerWindows& windows, int M, std::uint64_t seed,
                         const SolverOptions& solver_opts = {}, int jobs = 1,
                         int max_attempts_per_row = 1000) {
    if (M <= 0) throw UsageError("dataset size must be positive");
    Dataset ds;
    ds.inputs.resize(M, model.n_x);
    ds.targets.resize(M, model.N * model.n_u);
    SqpSolver<ModelT> solver(model, ing, solver_opts);

    parallel_for(M, jobs, [&](int r) {
        Rng rng = Rng::stream(seed ^ static_cast<std::uint64_t>(r), 0xda7a);
        for (int attempt = 0;; ++attempt) {
            if (attempt >= max_attempts_per_row)
                throw SamplerExhausted("row " + std::to_string(r) + " rejected " +
                                       std::to_string(max_attempts_per_row) + " draws");
            StateVector x0 = rng.uniform_vector(windows.lo, windows.hi);
            OcpSolution sol = solver.solve(x0);
            if (sol.status != SolveStatus::Converged) continue;
            if (!is_feasible(model, ing, x0, sol.u_seq, 1e-6).feasible()) continue;
            ds.inputs.row(r) = x0.transpose();
            for (int k = 0; k < model.N; ++k)
                for (int j = 0; j < model.n_u; ++j)
                    ds.targets(r, k * model.n_u + j) = sol.u_seq(k, j);
            break;
        }
    });

    ds.normalizer = Normalizer::fit(model, ds.inputs);
    ds.manifest.set("dataset.benchmark", to_string(model.name));
    ds.manifest.set_int("dataset.M", M);
    ds.manifest.set_u64("dataset.seed", seed);
    ds.manifest.set_int("dataset.n_x", model.n_x);
    ds.manifest.set_int("dataset.N", model.N);
    ds.manifest.set_int("dataset.n_u", model.n_u);
    ds.manifest.set("dataset.ingredients_checksum", ingredients_checksum(ing));
    ds.manifest.set("sampler.lo", detail::join_csv(windows.lo));
    ds.manifest.set("sampler.hi", detail::join_csv(windows.hi));
    store_normalizer(ds.manifest, ds.normalizer);
    seal_dataset(ds);
    return ds;
}

/// Disjoint, exhaustive, seeded permutation split. `fraction` of the rows
/// (rounded) goes to the first part.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction,
                                         std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw UsageError("split fraction must be in (0,1)");
    const auto M = ds.size();
    const auto n_a = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(M)));
    if (n_a == 0 || n_a == M) throw EmptySplit("split would leave an empty part");
    std::vector<Eigen::Index> perm(M);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = Rng::stream(seed, 0x5911);
    for (Eigen::Index i = M - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.integer(static_cast<std::uint64_t>(i + 1))]);
    auto take = [&](Eigen::Index begin, Eigen::Index end, const char* role) {
        Dataset part;
        part.inputs.resize(end - begin, ds.inputs.cols());
        part.targets.resize(end - begin, ds.targets.cols());
        for (Eigen::Index i = begin; i < end; ++i) {
            part.inputs.row(i - begin) = ds.inputs.row(perm[i]);
            part.targets.row(i - begin) = ds.targets.row(perm[i]);
        }
        part.manifest = ds.manifest;
        part.normalizer = ds.normalizer;
        part.manifest.set("split.parent", ds.manifest.get_string("dataset.checksum", ""));
        part.manifest.set("split.role", role);
        part.manifest.set_u64("split.seed", seed);
        part.manifest.set_double("split.fraction", fraction);
        part.manifest.set_int("dataset.M", part.size());
        seal_dataset(part);
        return part;
    };
    return {take(0, n_a, "first"), take(n_a, M, "second")};
}

/// Three-way split (train/validation/test) built from two seeded two-way splits.
inline std::tuple<Dataset, Dataset, Dataset> split3(const Dataset& ds, double train_frac,
                                                    double val_frac, std::uint64_t seed) {
    auto [rest, test] = split(ds, train_frac + val_frac, seed);
    auto [train, val] = split(rest, train_frac / (train_frac + val_frac), seed + 1);
    return {train, val, test};
}

enum class StopReason { EarlyStop, MaxEpochs, WallClock };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::EarlyStop: return "early_stop";
        case StopReason::MaxEpochs: return "max_epochs";
        case StopReason::WallClock: return "wall_clock";
    }
    return "?";
}

struct TrainConfig {
    double learning_rate = 1e-3;
    bool cosine_decay = true;
    int batch_size = 64;
    int max_epochs = 2000;
    int patience = 200;           // epochs without validation improvement
    double validation_fraction = 0.1;
    std::uint64_t seed = 1;
    double max_wall_seconds = 0;  // 0 = disabled (keeps training deterministic)

    void validate() const {
        if (patience < 1) throw UsageError("patience must be >= 1");
        if (!(validation_fraction > 0 && validation_fraction < 1))
            throw UsageError("validation fraction must be in (0,1)");
    }
};

struct TrainReport {
    int epochs_run = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<double> train_curve, val_curve;
    StopReason stop_reason = StopReason::MaxEpochs;
};

/**
 * Adam on the sequence MSE with a fixed up-front validation split, seeded
 * mini-batch shuffling, early stopping, and best-checkpoint return. The
 * policy is trained in normalized units using the dataset's stored scaling.
 */
inline TrainReport train(Policy& policy, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    const int N = policy.horizon();
    const int n_u = static_cast<int>(ds.manifest.get_int("dataset.n_u", 0));
    if (ds.inputs.cols() != (policy.arch == PolicyArch::Mlp
                                 ? policy.mlp.widths.front()
                                 : policy.rnn.W_x.cols()))
        throw DimensionMismatch("dataset state dimension vs policy input");
    if (ds.targets.cols() != static_cast<Eigen::Index>(N) * n_u)
        throw DimensionMismatch("dataset target width vs policy output");
    policy.norm = ds.normalizer;

    auto [train_ds, val_ds] = split(ds, 1.0 - cfg.validation_fraction, cfg.seed);
    const auto Mtr = train_ds.size(), Mva = val_ds.size();

    // Pre-normalized copies (states standardized, targets mapped to [-1,1]).
    auto prep = [&](const Dataset& d, Eigen::MatrixXd& X, std::vector<Eigen::MatrixXd>& Y) {
        X.resize(d.size(), d.inputs.cols());
        Y.resize(d.size());
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            X.row(i) = ds.normalizer.normalize_state(d.inputs.row(i).transpose()).transpose();
            Y[i] = ds.normalizer.normalize_inputs(d.target_sequence(i, N, n_u));
        }
    };
    Eigen::MatrixXd Xtr, Xva;
    std::vector<Eigen::MatrixXd> Ytr, Yva;
    prep(train_ds, Xtr, Ytr);
    prep(val_ds, Xva, Yva);

    const auto n_params = policy.param_count();
    Eigen::VectorXd theta = policy.pack();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long step = 0;

    TrainReport report;
    Eigen::VectorXd best_theta = theta;
    int since_best = 0;
    std::vector<Eigen::Index> order(Mtr);
    std::iota(order.begin(), order.end(), 0);
    const auto t_start = std::chrono::steady_clock::now();

    auto val_loss = [&]() {
        double total = 0;
        for (Eigen::Index i = 0; i < Mva; ++i)
            total += policy.loss_grad(Xva.row(i).transpose(), Yva[i]).first;
        return total / static_cast<double>(Mva);
    };

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng = Rng::stream(cfg.seed, 0xe90c ^ static_cast<std::uint64_t>(epoch));
        for (Eigen::Index i = Mtr - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.integer(static_cast<std::uint64_t>(i + 1))]);
        const double lr = cfg.cosine_decay
                              ? cfg.learning_rate * 0.5 *
                                    (1.0 + std::cos(M_PI * (epoch - 1.0) / cfg.max_epochs))
                              : cfg.learning_rate;

        double train_total = 0;
        for (Eigen::Index begin = 0; begin < Mtr; begin += cfg.batch_size) {
            const auto end = std::min<Eigen::Index>(begin + cfg.batch_size, Mtr);
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
            double batch_loss = 0;
            for (Eigen::Index i = begin; i < end; ++i) {
                auto [li, gi] = policy.loss_grad(Xtr.row(order[i]).transpose(), Ytr[order[i]]);
                batch_loss += li;
                grad += gi;
            }
            const double inv = 1.0 / static_cast<double>(end - begin);
            batch_loss *= inv;
            grad *= inv;
            train_total += batch_loss * static_cast<double>(end - begin);
            if (!std::isfinite(batch_loss)) throw NonFiniteLoss("training diverged");
            ++step;
            m = beta1 * m + (1 - beta1) * grad;
            v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            theta -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
            policy.unpack(theta);
        }
        const double tl = train_total / static_cast<double>(Mtr);
        const double vl = val_loss();
        if (!std::isfinite(vl)) throw NonFiniteLoss("validation loss diverged");
        report.train_curve.push_back(tl);
        report.val_curve.push_back(vl);
        report.epochs_run = epoch;
        if (vl < report.best_val_loss) {
            report.best_val_loss = vl;
            best_theta = theta;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            report.stop_reason = StopReason::EarlyStop;
            break;
        }
        if (cfg.max_wall_seconds > 0) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            if (elapsed > cfg.max_wall_seconds) {
                report.stop_reason = StopReason::WallClock;
                break;
            }
        }
    }
    policy.unpack(best_theta);
    return report;
}

}  // namespace ampc
