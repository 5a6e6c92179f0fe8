#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace dpnmt {

// Pinned pseudo-random generator so corpora and initializations reproduce
// across platforms and language ports.
//
// State update (xorshift64*):
//   x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
//   output = x * 0x2545F4914F6CDD1D  (mod 2^64)
// The 64-bit state is seeded with one round of splitmix64 applied to the
// user seed (a zero state is replaced by the splitmix64 constant).
// uniform() = (next() >> 11) * 2^-53.
// below(n) rejects draws >= floor(2^64 / n) * n and returns draw % n.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next();
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<std::size_t>(below(v.size()))];
    }

  private:
    std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dpnmt
