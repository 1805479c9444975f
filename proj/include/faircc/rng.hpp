#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace faircc {

// Mixes a base seed with a stream tag so sub-generators are decorrelated.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

// Seeded generator with hand-rolled uniform/normal transforms so that a given
// seed produces the same stream on every platform (std::*_distribution is not
// portable across standard libraries).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Uniform integer in [lo, hi], inclusive; unbiased via rejection.
    int uniform_int(int lo, int hi);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(0, i);
            std::swap(v[i], v[static_cast<std::size_t>(j)]);
        }
    }

    // Independent generator for a named sub-stream of the original seed.
    Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

  private:
    std::mt19937_64 gen_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace faircc
