#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace steglab {

// Counter-based splitmix64 generator. State is (key, counter): draw i of
// stream `key` is mix(key + i * golden). Serializes to two u64 words and
// splits into independent streams without touching the parent's state.
// The algorithm name recorded in manifests/checkpoints is "splitmix64-counter".
class Rng {
  public:
    explicit Rng(std::uint64_t key = 0, std::uint64_t counter = 0)
        : key_(key), counter_(counter) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ull * counter_++); }

    // Derived stream: deterministic, independent of this stream's position.
    Rng split(std::uint64_t stream) const { return Rng(mix(key_ ^ mix(stream))); }

    // Uniform in [0, 1).
    double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n >= 1.
    std::uint64_t next_below(std::uint64_t n) {
        // Rejection-free modulo is biased for huge n; all uses here have n << 2^32.
        return next_u64() % n;
    }

    // Standard normal via Box-Muller.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices drawn from [0, n), in draw order.
    std::vector<std::uint32_t> sample_without_replacement(std::uint32_t n, std::uint32_t k) {
        std::vector<std::uint32_t> pool(n);
        for (std::uint32_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::uint32_t> out(k);
        for (std::uint32_t i = 0; i < k; ++i) {
            std::uint32_t j = i + static_cast<std::uint32_t>(next_below(n - i));
            std::swap(pool[i], pool[j]);
            out[i] = pool[i];
        }
        return out;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void restore(std::uint64_t key, std::uint64_t counter) {
        key_ = key;
        counter_ = counter;
    }

    static constexpr const char* algorithm_name() { return "splitmix64-counter"; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace steglab
