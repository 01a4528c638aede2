#include "sibre/rng.hpp"

#include "sibre/errors.hpp"

namespace sibre {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace

Rng::Rng(std::uint64_t run_seed, std::string_view stream_label)
    : key_(mix64(run_seed ^ mix64(fnv1a64(stream_label)))) {}

std::uint64_t Rng::next_u64() {
    ++counter_;
    return mix64(key_ ^ mix64(counter_ * kGolden));
}

double Rng::uniform() {
    // (k + 0.5) / 2^53 for k in [0, 2^53): strictly inside (0,1).
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    if (n == 0) fail(ErrorCode::state, "Rng::next_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

Rng Rng::split(std::string_view label) const {
    return Rng(RawKey{}, mix64(key_ ^ fnv1a64(label) ^ 0x6A09E667F3BCC909ULL));
}

} // namespace sibre
