#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdvdm/tensor.hpp"

namespace gdvdm {

enum class ScheduleKind { Linear, Cosine };

// Per-timestep diffusion rates. Arrays are stored 0-based; index t-1 holds the
// value for timestep t in [1, T]. alpha_bar before any step is 1 by convention.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta_t
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s
    ScheduleKind kind = ScheduleKind::Cosine;
    double cosine_offset = 0.008;

    double beta_at(int t) const { return beta.at(t - 1); }
    double alpha_at(int t) const { return alpha.at(t - 1); }
    double alpha_bar_at(int t) const { return alpha_bar.at(t - 1); }
};

inline constexpr double kBetaClip = 0.999;

namespace detail {
inline void finalize_from_beta(NoiseSchedule& s) {
    s.alpha.resize(s.beta.size());
    s.alpha_bar.resize(s.beta.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < s.beta.size(); ++i) {
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
    }
}
}  // namespace detail

inline NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument(
            "make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.kind = ScheduleKind::Linear;
    s.beta.resize(T);
    for (int t = 0; t < T; ++t) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(t) / (T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    }
    detail::finalize_from_beta(s);
    return s;
}

// alpha_bar_t = f(t)/f(0), f(u) = cos^2(((u/T + s)/(1 + s)) * pi/2);
// betas derived from consecutive ratios, clipped to kBetaClip, then alpha_bar
// is recomputed from the clipped betas so the product invariant holds exactly.
inline NoiseSchedule make_cosine_schedule(int T, double s_offset = 0.008) {
    if (T < 1) throw std::invalid_argument("make_cosine_schedule: T must be >= 1");
    if (!(s_offset > 0.0)) throw std::invalid_argument("make_cosine_schedule: s must be > 0");
    const double pi_half = 3.14159265358979323846 * 0.5;
    auto f = [&](double u) {
        const double c = std::cos((u / T + s_offset) / (1.0 + s_offset) * pi_half);
        return c * c;
    };
    NoiseSchedule s;
    s.T = T;
    s.kind = ScheduleKind::Cosine;
    s.cosine_offset = s_offset;
    s.beta.resize(T);
    const double f0 = f(0.0);
    double prev = f0;
    for (int t = 1; t <= T; ++t) {
        const double cur = f(static_cast<double>(t));
        double beta = 1.0 - cur / prev;
        beta = std::min(beta, kBetaClip);
        s.beta[t - 1] = beta;
        prev = cur;
    }
    detail::finalize_from_beta(s);
    return s;
}

inline void check_timestep(const NoiseSchedule& sched, int t) {
    if (t < 1 || t > sched.T)
        throw std::invalid_argument("timestep " + std::to_string(t) + " out of [1," +
                                    std::to_string(sched.T) + "]");
}

// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps
template <typename T>
TensorT<T> forward_sample(const TensorT<T>& x0, int t, const TensorT<T>& eps,
                          const NoiseSchedule& sched) {
    require_same_shape(x0.shape, eps.shape, "forward_sample");
    check_timestep(sched, t);
    const double abar = sched.alpha_bar_at(t);
    const T a = static_cast<T>(std::sqrt(abar));
    const T b = static_cast<T>(std::sqrt(1.0 - abar));
    TensorT<T> out;
    out.shape = x0.shape;
    out.v.resize(x0.v.size());
    for (std::size_t i = 0; i < x0.v.size(); ++i) out.v[i] = a * x0.v[i] + b * eps.v[i];
    return out;
}

// One ancestral step: mu = (x_t - beta_t/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t),
// output mu + sqrt(beta_t) * z with z suppressed at t = 1.
template <typename T>
TensorT<T> reverse_step(const TensorT<T>& x_t, const TensorT<T>& eps_hat, int t,
                        const TensorT<T>& z, const NoiseSchedule& sched) {
    require_same_shape(x_t.shape, eps_hat.shape, "reverse_step eps_hat");
    require_same_shape(x_t.shape, z.shape, "reverse_step z");
    check_timestep(sched, t);
    const double alpha = sched.alpha_at(t);
    const double abar = sched.alpha_bar_at(t);
    const double beta = sched.beta_at(t);
    const T inv_sqrt_alpha = static_cast<T>(1.0 / std::sqrt(alpha));
    const T eps_coef = static_cast<T>(beta / std::sqrt(1.0 - abar));
    const T sigma = (t == 1) ? T(0) : static_cast<T>(std::sqrt(beta));
    TensorT<T> out;
    out.shape = x_t.shape;
    out.v.resize(x_t.v.size());
    for (std::size_t i = 0; i < x_t.v.size(); ++i)
        out.v[i] = inv_sqrt_alpha * (x_t.v[i] - eps_coef * eps_hat.v[i]) + sigma * z.v[i];
    return out;
}

}  // namespace gdvdm
