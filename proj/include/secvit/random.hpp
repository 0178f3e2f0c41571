#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "secvit/tensor.hpp"

namespace secvit {

// SplitMix64. One u64 seed reproduces every stream bit-for-bit on any host.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    std::size_t index(std::size_t n) { return std::size_t(next_u64() % n); }

    // Box-Muller; draws are paired so call sequence stays deterministic.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0) u1 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (auto& x : t.vec()) x = T(uniform(lo, hi));
    }

    template <typename T>
    Tensor<T> tensor_uniform(Shape shape, double lo, double hi) {
        Tensor<T> t(std::move(shape));
        fill_uniform(t, lo, hi);
        return t;
    }

    // First k entries of a seeded partial Fisher-Yates shuffle of 0..n-1.
    std::vector<std::uint32_t> sample_distinct(std::size_t n, std::size_t k) {
        std::vector<std::uint32_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = std::uint32_t(i);
        for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
            std::size_t j = i + index(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    std::vector<std::uint32_t> permutation(std::size_t n) {
        auto p = sample_distinct(n, n);
        return p;
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0;
};

}  // namespace secvit
