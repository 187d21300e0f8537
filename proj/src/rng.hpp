#pragma once

#include <cstdint>
#include <string_view>
#include <utility>

namespace umurl {

// Counter-based random stream: draw i is mix64(key + i * PHI), so the
// sequence is a pure function of (seed, fork path) and identical on every
// platform. fork() derives an independent stream without advancing the
// parent, which is what lets per-sample augmentation streams be handed out
// as hash(seed, epoch, sample, modality, view).
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    RngStream fork(std::uint64_t salt) const;
    RngStream fork(std::string_view tag) const;

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; the spare value is cached.
    double normal();
    double normal(double mean, double sigma);

    // Uniform integer in [0, n), rejection sampled (n > 0).
    std::uint64_t below(std::uint64_t n);

    bool bernoulli(double p);

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    RngStream(std::uint64_t key, int);  // pre-mixed key

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace umurl
