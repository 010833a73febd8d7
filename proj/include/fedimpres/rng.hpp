#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace fedimpres {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Seed fan-out: every stochastic stream (partition, toy data, model init,
// per-client shuffling, synthesis pools) is keyed off the master seed by
//   h0 = splitmix64(master ^ fnv1a64(stream))
//   h1 = splitmix64(h0 ^ a)
//   h2 = splitmix64(h1 + 0x9e3779b97f4a7c15 * (b + 1))
// so streams never share state and can be regenerated independently.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t a = 0,
                          std::uint64_t b = 0) noexcept;

// mt19937_64 plus hand-written distributions. The standard library's
// distribution objects are implementation-defined, which would make pinned
// golden files depend on the toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Uniform in (0, 1).
    double uniform_open();
    double normal();
    // Gamma(shape, 1) sample (Marsaglia-Tsang).
    double gamma(double shape);
    // log of a Gamma(shape, 1) sample; stays finite for tiny shapes where the
    // sample itself underflows.
    double log_gamma(double shape);
    // Unbiased integer in [0, n).
    std::size_t below(std::size_t n);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace fedimpres
