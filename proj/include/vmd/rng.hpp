#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vmd {

// Named sub-streams split off a single root seed. The numeric values are part
// of the reproducibility contract: changing them changes every result.
enum class Stream : std::uint64_t {
    data = 1,
    mask = 2,
    epsilon = 3,
    sampler = 4,
    init = 5,
};

std::uint64_t splitmix64(std::uint64_t& state);

// FNV-1a; stable across platforms, used to turn cell tags into stream keys.
std::uint64_t hash_tag(std::string_view tag);

// Mersenne-Twister engine with platform-independent uniform/normal draws
// (std::*_distribution output differs between standard libraries).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    // Deterministic child stream of (root, stream, key).
    static Rng derive(std::uint64_t root, Stream stream, std::uint64_t key = 0);

    std::uint64_t next_u64() { return engine_(); }

    // 53-bit uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    int uniform_int(int n);

    // Standard normal (Box-Muller with a cached spare).
    double normal();

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vmd
