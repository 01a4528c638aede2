#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace sibre {

// Deterministic counter-based generator. Every draw is a hash of
// (stream key, draw counter), so a stream is fully determined by its key and
// two streams with distinct keys never share a sequence segment. Keys are
// derived from (run seed, stream label) which makes whole runs reproducible
// bit-for-bit across platforms.
//
// Mixing function: the splitmix64 finalizer
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27; z *= 0x94D049BB133111EB;
//   z ^= z >> 31;
// applied as out = mix(key ^ mix(counter * GOLDEN)), GOLDEN = 0x9E3779B97F4A7C15.
class Rng {
public:
    Rng(std::uint64_t run_seed, std::string_view stream_label = "root");

    // Uniform draw in the open interval (0,1); never returns 0.0 or 1.0.
    double uniform();

    std::uint64_t next_u64();

    // Unbiased draw in [0, n) via rejection sampling. n must be > 0.
    std::uint64_t next_below(std::uint64_t n);

    // Child stream keyed by (this stream's key, label). Same label twice
    // yields the same child; advancing the parent does not affect children.
    Rng split(std::string_view label) const;

    // Fisher-Yates shuffle driven by this stream.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t key() const { return key_; }

private:
    struct RawKey {};
    Rng(RawKey, std::uint64_t key) : key_(key) {}

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace sibre
