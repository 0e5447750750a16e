#pragma once

#include <cstdint>
#include <random>

#include "cseg/volume.hpp"

namespace cseg::test {

inline LabelVolume random_mask(Dims d, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution on(density);
    LabelVolume m(d, {});
    for (auto& v : m.data()) v = on(rng) ? 1 : 0;
    return m;
}

inline ProbVolume random_prob(Dims d, std::uint64_t seed, Spacing s = {}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    ProbVolume p(d, s);
    for (auto& v : p.data()) v = u(rng);
    return p;
}

inline HuVolume random_hu(Dims d, std::uint64_t seed, Spacing s = {}) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(-1024, 3071);
    HuVolume p(d, s);
    for (auto& v : p.data()) v = static_cast<std::int16_t>(u(rng));
    return p;
}

// Solid axis-aligned box [lo, hi) of ones.
inline LabelVolume box_mask(Dims d, Index3 lo, Index3 hi, Spacing s = {}) {
    LabelVolume m(d, s);
    for (int z = lo.z; z < hi.z; ++z)
        for (int y = lo.y; y < hi.y; ++y)
            for (int x = lo.x; x < hi.x; ++x) m(x, y, z) = 1;
    return m;
}

}  // namespace cseg::test
