#pragma once

#include <cstdint>
#include <random>

#include <stainkit/image.hpp>

namespace stainkit::testing {

inline Patch random_patch(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Patch p(h, w);
    for (float& v : p.data()) {
        v = u(rng);
    }
    return p;
}

inline Patch constant_patch(std::size_t h, std::size_t w, float r, float g, float b) {
    Patch p(h, w);
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto px = p.pixel(i);
        px[0] = r;
        px[1] = g;
        px[2] = b;
    }
    return p;
}

} // namespace stainkit::testing
