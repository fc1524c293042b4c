#pragma once

#include <cmath>
#include <cstdint>
#include <Eigen/Core>

namespace ampc {

/**
 * Deterministic PRNG used everywhere randomness is needed.
 *
 * splitmix64 core with explicit uniform/normal transforms so that streams are
 * bit-reproducible across compilers and standard libraries (std::*_distribution
 * is implementation-defined). Independent streams are derived by hashing a
 * (seed, stream id) pair, which is how one root seed fans out to samplers,
 * weight init, mini-batch shuffles and disturbance draws without overlap.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    /// Derive an independent stream from (seed, stream id).
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
        Rng boot(seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1)));
        boot.next();  // decorrelate nearby ids
        return Rng(boot.next());
    }

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (deterministic, no cached spare).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::uint64_t integer(std::uint64_t n) {  // uniform in [0, n)
        return n == 0 ? 0 : next() % n;
    }

    Eigen::VectorXd uniform_vector(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
        Eigen::VectorXd v(lo.size());
        for (Eigen::Index i = 0; i < lo.size(); ++i) v[i] = uniform(lo[i], hi[i]);
        return v;
    }

private:
    std::uint64_t state_;
};

/// Acklam's rational approximation of the inverse normal CDF (|err| < 1.15e-9).
inline double inverse_normal_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    if (p <= 0.0) return -1e308;
    if (p >= 1.0) return 1e308;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - plow) {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double q = p - 0.5;
    double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

/**
 * Deterministic low-discrepancy directions on the unit sphere in R^dim.
 *
 * Additive Weyl recurrence in [0,1)^dim (irrational increments from sqrt of
 * primes), pushed through the inverse normal CDF and normalized. Used for the
 * boundary/interior sampling of ellipsoidal terminal sets.
 */
class SphereSequence {
public:
    explicit SphereSequence(int dim) : dim_(dim), point_(Eigen::VectorXd::Zero(dim)) {
        static const double primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                        31, 37, 41, 43, 47, 53, 59, 61, 67, 71};
        inc_.resize(dim);
        for (int i = 0; i < dim; ++i) {
            double s = std::sqrt(primes[i % 20]) * (1 + i / 20);
            inc_[i] = s - std::floor(s);
        }
        for (int i = 0; i < dim; ++i) point_[i] = 0.5;
    }

    Eigen::VectorXd next() {
        Eigen::VectorXd g(dim_);
        for (int i = 0; i < dim_; ++i) {
            point_[i] += inc_[i];
            point_[i] -= std::floor(point_[i]);
            double p = std::min(std::max(point_[i], 1e-12), 1.0 - 1e-12);
            g[i] = inverse_normal_cdf(p);
        }
        double n = g.norm();
        if (n < 1e-12) { g.setZero(); g[0] = 1.0; n = 1.0; }
        return g / n;
    }

private:
    int dim_;
    Eigen::VectorXd point_;
    Eigen::VectorXd inc_;
};

}  // namespace ampc
