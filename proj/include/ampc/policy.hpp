#pragma once

#include <cmath>
#include <string>
#include <vector>
#include <Eigen/Core>

#include "ampc/checksum.hpp"
#include "ampc/config.hpp"
#include "ampc/errors.hpp"
#include "ampc/matrix_io.hpp"
#include "ampc/models.hpp"
#include "ampc/rng.hpp"

namespace ampc {

/**
 * Affine scaling between physical quantities and network units.
 *
 * States are standardized with per-component mean/scale estimated from the
 * training set; inputs are mapped to [-1, 1] through the input box. The
 * constants ride along in dataset manifests and checkpoints so training and
 * inference provably use identical scaling.
 */
struct Normalizer {
    Eigen::VectorXd x_mu, x_sigma;
    Eigen::VectorXd u_center, u_half;

    Eigen::VectorXd normalize_state(const Eigen::VectorXd& x) const {
        return (x - x_mu).cwiseQuotient(x_sigma);
    }
    Eigen::MatrixXd normalize_inputs(const Eigen::MatrixXd& u_seq) const {
        Eigen::MatrixXd y = u_seq;
        for (Eigen::Index k = 0; k < y.rows(); ++k)
            y.row(k) = (u_seq.row(k).transpose() - u_center).cwiseQuotient(u_half).transpose();
        return y;
    }
    Eigen::MatrixXd denormalize_inputs(const Eigen::MatrixXd& y_seq) const {
        Eigen::MatrixXd u = y_seq;
        for (Eigen::Index k = 0; k < u.rows(); ++k)
            u.row(k) = (u_center + u_half.cwiseProduct(y_seq.row(k).transpose())).transpose();
        return u;
    }

    static Normalizer identity(int n_x, int n_u) {
        Normalizer n;
        n.x_mu = Eigen::VectorXd::Zero(n_x);
        n.x_sigma = Eigen::VectorXd::Ones(n_x);
        n.u_center = Eigen::VectorXd::Zero(n_u);
        n.u_half = Eigen::VectorXd::Ones(n_u);
        return n;
    }

    /// Standardization constants from a sample of states plus the input box.
    static Normalizer fit(const BenchmarkModel& model, const Eigen::MatrixXd& states) {
        Normalizer n;
        n.x_mu = states.colwise().mean().transpose();
        Eigen::MatrixXd centered = states.rowwise() - n.x_mu.transpose();
        n.x_sigma = (centered.array().square().colwise().mean().sqrt() + 1e-9).matrix();
        n.u_center = 0.5 * (model.input_lo + model.input_hi);
        n.u_half = 0.5 * (model.input_hi - model.input_lo);
        return n;
    }
};

// ---------------------------------------------------------------------------
// Parameter-count formulas
// ---------------------------------------------------------------------------

/// Parameters of an MLP output layer that emits the whole horizon at once.
inline long long mlp_last_layer_param_count(long long n_u, long long N, long long n_h) {
    return n_u * N * (n_h + 1);
}

/// Total parameters of the shared-cell recurrent policy; N never appears.
inline long long rnn_param_count(long long n_x, long long n_h, long long n_u) {
    return n_h * n_x + n_h * n_h + n_u * n_h + n_h + n_u;
}

// ---------------------------------------------------------------------------
// MLP policy (horizon-wide head)
// ---------------------------------------------------------------------------

/**
 * Feedforward policy: tanh hidden layers, identity output head of size
 * N*n_u reshaped row-major to the horizon. Operates entirely in normalized
 * units; scaling lives in the surrounding Policy.
 */
struct MlpPolicy {
    std::vector<int> widths;  // [n_in, hidden..., N*n_u]
    std::vector<Eigen::MatrixXd> W;
    std::vector<Eigen::VectorXd> b;
    int horizon = 0;
    int n_u = 0;

    static MlpPolicy create(int n_x, const std::vector<int>& hidden, int N, int n_u,
                            std::uint64_t seed) {
        MlpPolicy p;
        p.horizon = N;
        p.n_u = n_u;
        p.widths.push_back(n_x);
        for (int h : hidden) p.widths.push_back(h);
        p.widths.push_back(N * n_u);
        Rng rng = Rng::stream(seed, 0x317);
        for (std::size_t l = 0; l + 1 < p.widths.size(); ++l) {
            const int rows = p.widths[l + 1], cols = p.widths[l];
            const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
            Eigen::MatrixXd Wl(rows, cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) Wl(r, c) = rng.uniform(-bound, bound);
            p.W.push_back(Wl);
            p.b.push_back(Eigen::VectorXd::Zero(rows));
        }
        return p;
    }

    long long param_count() const {
        long long n = 0;
        for (std::size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
        return n;
    }

    /// Normalized input -> normalized N x n_u output.
    Eigen::MatrixXd forward(const Eigen::VectorXd& x) const {
        if (x.size() != widths.front()) throw DimensionMismatch("mlp_forward input size");
        Eigen::VectorXd z = x;
        for (std::size_t l = 0; l + 1 < W.size(); ++l)
            z = (W[l] * z + b[l]).array().tanh().matrix();
        Eigen::VectorXd y = W.back() * z + b.back();
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                              Eigen::RowMajor>>(y.data(), horizon, n_u);
    }
};

// ---------------------------------------------------------------------------
// RNN policy (shared cell, autoregressive unroll)
// ---------------------------------------------------------------------------

/**
 * Recurrent policy: a single tanh cell unrolled N times with the measured
 * state fed at every step, h_0 = 0, and an affine output head per step.
 */
struct RnnPolicy {
    Eigen::MatrixXd W_x;  // n_h x n_in
    Eigen::MatrixXd W_h;  // n_h x n_h
    Eigen::VectorXd b_h;
    Eigen::MatrixXd W_y;  // n_u x n_h
    Eigen::VectorXd b_y;
    int horizon = 0;

    static RnnPolicy create(int n_x, int n_h, int N, int n_u, std::uint64_t seed) {
        RnnPolicy p;
        p.horizon = N;
        Rng rng = Rng::stream(seed, 0x323);
        auto init = [&rng](Eigen::MatrixXd& M, int rows, int cols, int fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            M.resize(rows, cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) M(r, c) = rng.uniform(-bound, bound);
        };
        init(p.W_x, n_h, n_x, n_x);
        init(p.W_h, n_h, n_h, n_h);
        p.b_h = Eigen::VectorXd::Zero(n_h);
        init(p.W_y, n_u, n_h, n_h);
        p.b_y = Eigen::VectorXd::Zero(n_u);
        return p;
    }

    int hidden_size() const { return static_cast<int>(W_h.rows()); }
    int n_u() const { return static_cast<int>(W_y.rows()); }

    long long param_count() const {
        return W_x.size() + W_h.size() + b_h.size() + W_y.size() + b_y.size();
    }

    Eigen::MatrixXd forward(const Eigen::VectorXd& x) const {
        if (x.size() != W_x.cols()) throw DimensionMismatch("rnn_forward input size");
        const int n_h = hidden_size();
        Eigen::VectorXd h = Eigen::VectorXd::Zero(n_h);
        Eigen::MatrixXd out(horizon, n_u());
        const Eigen::VectorXd drive = W_x * x + b_h;
        for (int t = 0; t < horizon; ++t) {
            h = (drive + W_h * h).array().tanh().matrix();
            out.row(t) = (W_y * h + b_y).transpose();
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Flat parameter views (enables the finite-difference oracle and Adam)
// ---------------------------------------------------------------------------

// Ordering: MLP packs W[0] row-major, b[0], W[1], b[1], ...;
// RNN packs W_x, W_h, b_h, W_y, b_y (matrices row-major).

namespace detail {

inline void pack_matrix(Eigen::VectorXd& out, Eigen::Index& off, const Eigen::MatrixXd& M) {
    for (Eigen::Index r = 0; r < M.rows(); ++r)
        for (Eigen::Index c = 0; c < M.cols(); ++c) out[off++] = M(r, c);
}

inline void unpack_matrix(const Eigen::VectorXd& in, Eigen::Index& off, Eigen::MatrixXd& M) {
    for (Eigen::Index r = 0; r < M.rows(); ++r)
        for (Eigen::Index c = 0; c < M.cols(); ++c) M(r, c) = in[off++];
}

}  // namespace detail

inline Eigen::VectorXd pack_params(const MlpPolicy& p) {
    Eigen::VectorXd v(p.param_count());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < p.W.size(); ++l) {
        detail::pack_matrix(v, off, p.W[l]);
        for (Eigen::Index i = 0; i < p.b[l].size(); ++i) v[off++] = p.b[l][i];
    }
    return v;
}

inline void unpack_params(MlpPolicy& p, const Eigen::VectorXd& v) {
    if (v.size() != p.param_count()) throw DimensionMismatch("mlp unpack size");
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < p.W.size(); ++l) {
        detail::unpack_matrix(v, off, p.W[l]);
        for (Eigen::Index i = 0; i < p.b[l].size(); ++i) p.b[l][i] = v[off++];
    }
}

inline Eigen::VectorXd pack_params(const RnnPolicy& p) {
    Eigen::VectorXd v(p.param_count());
    Eigen::Index off = 0;
    detail::pack_matrix(v, off, p.W_x);
    detail::pack_matrix(v, off, p.W_h);
    for (Eigen::Index i = 0; i < p.b_h.size(); ++i) v[off++] = p.b_h[i];
    detail::pack_matrix(v, off, p.W_y);
    for (Eigen::Index i = 0; i < p.b_y.size(); ++i) v[off++] = p.b_y[i];
    return v;
}

inline void unpack_params(RnnPolicy& p, const Eigen::VectorXd& v) {
    if (v.size() != p.param_count()) throw DimensionMismatch("rnn unpack size");
    Eigen::Index off = 0;
    detail::unpack_matrix(v, off, p.W_x);
    detail::unpack_matrix(v, off, p.W_h);
    for (Eigen::Index i = 0; i < p.b_h.size(); ++i) p.b_h[i] = v[off++];
    detail::unpack_matrix(v, off, p.W_y);
    for (Eigen::Index i = 0; i < p.b_y.size(); ++i) p.b_y[i] = v[off++];
}

// ---------------------------------------------------------------------------
// Backward passes (reverse accumulation, hand-derived)
// ---------------------------------------------------------------------------

/// Mean-squared-error loss over all N*n_u entries and its exact gradient in
/// pack_params ordering.
inline std::pair<double, Eigen::VectorXd> backward(const MlpPolicy& p, const Eigen::VectorXd& x,
                                                   const Eigen::MatrixXd& target) {
    if (target.rows() != p.horizon || target.cols() != p.n_u)
        throw DimensionMismatch("mlp backward target shape");
    const std::size_t L = p.W.size();
    std::vector<Eigen::VectorXd> z(L + 1);
    z[0] = x;
    for (std::size_t l = 0; l + 1 < L; ++l)
        z[l + 1] = (p.W[l] * z[l] + p.b[l]).array().tanh().matrix();
    Eigen::VectorXd y = p.W[L - 1] * z[L - 1] + p.b[L - 1];

    const double scale = 1.0 / static_cast<double>(p.horizon * p.n_u);
    Eigen::VectorXd t_flat(p.horizon * p.n_u);
    for (int k = 0; k < p.horizon; ++k)
        for (int j = 0; j < p.n_u; ++j) t_flat[k * p.n_u + j] = target(k, j);
    Eigen::VectorXd r = y - t_flat;
    const double loss = scale * r.squaredNorm();

    std::vector<Eigen::MatrixXd> dW(L);
    std::vector<Eigen::VectorXd> db(L);
    Eigen::VectorXd delta = 2.0 * scale * r;
    for (std::size_t l = L; l-- > 0;) {
        dW[l] = delta * z[l].transpose();
        db[l] = delta;
        if (l > 0) {
            delta = (p.W[l].transpose() * delta).cwiseProduct(
                (1.0 - z[l].array().square()).matrix());
        }
    }
    Eigen::VectorXd grad(p.param_count());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < L; ++l) {
        detail::pack_matrix(grad, off, dW[l]);
        for (Eigen::Index i = 0; i < db[l].size(); ++i) grad[off++] = db[l][i];
    }
    return {loss, grad};
}

/// Backpropagation through time for the shared-cell policy: contributions to
/// the cell parameters are accumulated over every unrolled step.
inline std::pair<double, Eigen::VectorXd> backward(const RnnPolicy& p, const Eigen::VectorXd& x,
                                                   const Eigen::MatrixXd& target) {
    const int N = p.horizon, nu = p.n_u(), nh = p.hidden_size();
    if (target.rows() != N || target.cols() != nu)
        throw DimensionMismatch("rnn backward target shape");
    std::vector<Eigen::VectorXd> h(N + 1);
    h[0] = Eigen::VectorXd::Zero(nh);
    const Eigen::VectorXd drive = p.W_x * x + p.b_h;
    std::vector<Eigen::VectorXd> g(N);
    const double scale = 1.0 / static_cast<double>(N * nu);
    double loss = 0.0;
    for (int t = 0; t < N; ++t) {
        h[t + 1] = (drive + p.W_h * h[t]).array().tanh().matrix();
        Eigen::VectorXd r = p.W_y * h[t + 1] + p.b_y - target.row(t).transpose();
        loss += scale * r.squaredNorm();
        g[t] = 2.0 * scale * r;
    }

    Eigen::MatrixXd dW_x = Eigen::MatrixXd::Zero(nh, p.W_x.cols());
    Eigen::MatrixXd dW_h = Eigen::MatrixXd::Zero(nh, nh);
    Eigen::VectorXd db_h = Eigen::VectorXd::Zero(nh);
    Eigen::MatrixXd dW_y = Eigen::MatrixXd::Zero(nu, nh);
    Eigen::VectorXd db_y = Eigen::VectorXd::Zero(nu);
    Eigen::VectorXd dh = Eigen::VectorXd::Zero(nh);
    for (int t = N - 1; t >= 0; --t) {
        dW_y.noalias() += g[t] * h[t + 1].transpose();
        db_y += g[t];
        dh += p.W_y.transpose() * g[t];
        Eigen::VectorXd da = dh.cwiseProduct((1.0 - h[t + 1].array().square()).matrix());
        dW_x.noalias() += da * x.transpose();
        dW_h.noalias() += da * h[t].transpose();
        db_h += da;
        dh = p.W_h.transpose() * da;
    }
    Eigen::VectorXd grad(p.param_count());
    Eigen::Index off = 0;
    detail::pack_matrix(grad, off, dW_x);
    detail::pack_matrix(grad, off, dW_h);
    for (Eigen::Index i = 0; i < db_h.size(); ++i) grad[off++] = db_h[i];
    detail::pack_matrix(grad, off, dW_y);
    for (Eigen::Index i = 0; i < db_y.size(); ++i) grad[off++] = db_y[i];
    return {loss, grad};
}

// ---------------------------------------------------------------------------
// Unified policy (architecture + scaling)
// ---------------------------------------------------------------------------

enum class PolicyArch { Mlp, Rnn };

inline std::string to_string(PolicyArch a) { return a == PolicyArch::Mlp ? "mlp" : "rnn"; }

inline PolicyArch policy_arch_from_string(const std::string& s) {
    if (s == "mlp") return PolicyArch::Mlp;
    if (s == "rnn") return PolicyArch::Rnn;
    throw UsageError("unknown policy architecture '" + s + "'");
}

/// A trained (or training) policy together with its scaling: maps a physical
/// state to a physical N x n_u input-sequence proposal.
struct Policy {
    PolicyArch arch = PolicyArch::Mlp;
    MlpPolicy mlp;
    RnnPolicy rnn;
    Normalizer norm;

    int horizon() const { return arch == PolicyArch::Mlp ? mlp.horizon : rnn.horizon; }

    long long param_count() const {
        return arch == PolicyArch::Mlp ? mlp.param_count() : rnn.param_count();
    }
    Eigen::VectorXd pack() const {
        return arch == PolicyArch::Mlp ? pack_params(mlp) : pack_params(rnn);
    }
    void unpack(const Eigen::VectorXd& v) {
        if (arch == PolicyArch::Mlp) unpack_params(mlp, v);
        else unpack_params(rnn, v);
    }
    /// Normalized-space forward pass.
    Eigen::MatrixXd forward_normalized(const Eigen::VectorXd& xn) const {
        return arch == PolicyArch::Mlp ? mlp.forward(xn) : rnn.forward(xn);
    }
    std::pair<double, Eigen::VectorXd> loss_grad(const Eigen::VectorXd& xn,
                                                 const Eigen::MatrixXd& target) const {
        return arch == PolicyArch::Mlp ? backward(mlp, xn, target) : backward(rnn, xn, target);
    }
    /// Physical state -> physical input-sequence proposal.
    Eigen::MatrixXd propose(const StateVector& x) const {
        return norm.denormalize_inputs(forward_normalized(norm.normalize_state(x)));
    }
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// Layout: magic, length-prefixed metadata (a Config dump), the normalizer,
// the architecture dimensions, the flat parameter vector, and a trailing
// checksum over everything before it.

inline std::string serialize_checkpoint(const Policy& p, const Config& meta) {
    std::string out = "AMPCCKP1";
    Config m = meta;
    m.set("arch.kind", to_string(p.arch));
    if (p.arch == PolicyArch::Mlp) {
        std::string widths;
        for (std::size_t i = 0; i < p.mlp.widths.size(); ++i)
            widths += (i ? "," : "") + std::to_string(p.mlp.widths[i]);
        m.set("arch.widths", widths);
        m.set_int("arch.horizon", p.mlp.horizon);
        m.set_int("arch.n_u", p.mlp.n_u);
    } else {
        m.set_int("arch.n_x", p.rnn.W_x.cols());
        m.set_int("arch.n_h", p.rnn.hidden_size());
        m.set_int("arch.horizon", p.rnn.horizon);
        m.set_int("arch.n_u", p.rnn.n_u());
    }
    const std::string meta_text = m.dump();
    detail::put_u64_le(out, meta_text.size());
    out += meta_text;
    out += encode_matrix(p.norm.x_mu);
    out += encode_matrix(p.norm.x_sigma);
    out += encode_matrix(p.norm.u_center);
    out += encode_matrix(p.norm.u_half);
    out += encode_matrix(p.pack());
    out += "checksum " + checksum_hex(out) + "\n";
    return out;
}

namespace detail {

inline Eigen::MatrixXd take_matrix(const std::string& buf, std::size_t& off) {
    if (buf.size() < off + 24) throw IoError("checkpoint: truncated matrix header");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + off);
    const std::uint64_t rows = get_u64_le(p + 8), cols = get_u64_le(p + 16);
    const std::size_t len = 24 + rows * cols * 8;
    if (buf.size() < off + len) throw IoError("checkpoint: truncated matrix payload");
    Eigen::MatrixXd m = decode_matrix(buf.substr(off, len));
    off += len;
    return m;
}

}  // namespace detail

inline std::pair<Policy, Config> deserialize_checkpoint(const std::string& buf) {
    auto cpos = buf.rfind("checksum ");
    if (cpos == std::string::npos || buf.compare(0, 8, "AMPCCKP1") != 0)
        throw IoError("checkpoint: bad header or missing checksum");
    if (checksum_hex(buf.substr(0, cpos)) != buf.substr(cpos + 9, 16))
        throw IoError("checkpoint: checksum mismatch");
    std::size_t off = 8;
    const auto* raw = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint64_t meta_len = detail::get_u64_le(raw + off);
    off += 8;
    Config meta = Config::parse(buf.substr(off, meta_len));
    off += meta_len;
    Policy p;
    p.arch = policy_arch_from_string(meta.get_string("arch.kind", "mlp"));
    p.norm.x_mu = detail::take_matrix(buf, off);
    p.norm.x_sigma = detail::take_matrix(buf, off);
    p.norm.u_center = detail::take_matrix(buf, off);
    p.norm.u_half = detail::take_matrix(buf, off);
    Eigen::VectorXd params = detail::take_matrix(buf, off);
    const int N = static_cast<int>(meta.get_int("arch.horizon", 0));
    const int n_u = static_cast<int>(meta.get_int("arch.n_u", 0));
    if (p.arch == PolicyArch::Mlp) {
        std::vector<int> hidden;
        std::string widths = meta.get_string("arch.widths", "");
        std::vector<int> all;
        std::size_t start = 0;
        while (start < widths.size()) {
            auto comma = widths.find(',', start);
            if (comma == std::string::npos) comma = widths.size();
            all.push_back(std::stoi(widths.substr(start, comma - start)));
            start = comma + 1;
        }
        if (all.size() < 2) throw IoError("checkpoint: bad mlp widths");
        hidden.assign(all.begin() + 1, all.end() - 1);
        p.mlp = MlpPolicy::create(all.front(), hidden, N, n_u, 0);
        unpack_params(p.mlp, params);
    } else {
        p.rnn = RnnPolicy::create(static_cast<int>(meta.get_int("arch.n_x", 0)),
                                  static_cast<int>(meta.get_int("arch.n_h", 0)), N, n_u, 0);
        unpack_params(p.rnn, params);
    }
    return {p, meta};
}

inline void save_checkpoint(const std::string& path, const Policy& p, const Config& meta) {
    write_file(path, serialize_checkpoint(p, meta));
}

inline std::pair<Policy, Config> load_checkpoint(const std::string& path) {
    return deserialize_checkpoint(read_file(path));
}

inline std::string checkpoint_checksum(const Policy& p, const Config& meta) {
    std::string s = serialize_checkpoint(p, meta);
    auto pos = s.rfind("checksum ");
    return s.substr(pos + 9, 16);
}

}  // namespace ampc
