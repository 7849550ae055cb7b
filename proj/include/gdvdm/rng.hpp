#pragma once

#include <cmath>
#include <cstdint>

#include "gdvdm/tensor.hpp"

namespace gdvdm {

// Counter-splittable PRNG built on splitmix64. All randomness in the project
// flows through this type so that runs are bit-identical across platforms
// (libstdc++ distributions are implementation-defined; these are not).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Derive an independent stream, e.g. per sample index.
    static Rng derive(std::uint64_t seed, std::uint64_t index) {
        Rng r(seed);
        std::uint64_t mixed = r.next_u64();
        return Rng(mixed ^ (index * 0x9E3779B97F4A7C15ULL) ^ splitmix(index + 0x632BE59BD9B4E019ULL));
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return splitmix_mix(state_);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1]
    double uniform_open0() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // uniform integer in [lo, hi] inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // standard normal via Box-Muller (pairwise, cached)
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open0();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void fill_normal(TensorT<T>& t) {
        for (auto& x : t.v) x = static_cast<T>(normal());
    }

    template <typename T>
    TensorT<T> normal_tensor(std::vector<int> shape) {
        TensorT<T> t(std::move(shape));
        fill_normal(t);
        return t;
    }

  private:
    static std::uint64_t splitmix_mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t splitmix(std::uint64_t seed) {
        seed += 0x9E3779B97F4A7C15ULL;
        return splitmix_mix(seed);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace gdvdm
