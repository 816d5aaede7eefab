#ifndef CSQN_RNG_HPP
#define CSQN_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace csqn {

// splitmix64 finalizer; used to derive independent substream seeds from a
// master seed plus a path of indices (task id, epoch, sample index, ...).
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> path) {
    uint64_t s = mix64(master);
    for (uint64_t p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ull));
    return s;
}

// Stream identifiers so unrelated consumers of the same master seed never
// collide. Values are part of the reproducibility contract; do not renumber.
enum class StreamId : uint64_t {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Curvature = 4,
    Split = 5,
    Synthetic = 6,
    Permutation = 7,
    TaskOrder = 8,
    CurvatureBatch = 9,
};

// Deterministic random stream: mt19937_64 (bit-stream pinned by the C++
// standard) with hand-rolled distributions, since std::*_distribution output
// is implementation-defined.
class RngStream {
  public:
    explicit RngStream(uint64_t seed) : gen_(seed) {}

    static RngStream derive(uint64_t master, StreamId id,
                            std::initializer_list<uint64_t> path = {}) {
        uint64_t s = derive_seed(master, {static_cast<uint64_t>(id)});
        for (uint64_t p : path) s = mix64(s ^ mix64(p + 0x9e3779b97f4a7c15ull));
        return RngStream(s);
    }

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [0, n) by rejection; unbiased and deterministic.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; caches the second deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace csqn

#endif  // CSQN_RNG_HPP
