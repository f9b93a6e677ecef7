#ifndef STAINKIT_SYNTHETIC_HPP
#define STAINKIT_SYNTHETIC_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "colorspace.hpp"
#include "error.hpp"
#include "image.hpp"
#include "rng.hpp"

namespace stainkit {

/// Parameters of the H&E-like patch generator. Each patch is an eosin
/// wash with elliptical hematoxylin nuclei (which displace the eosin) and
/// occasional white lumen, plus Gaussian noise in OD space.
struct SyntheticSpec {
    std::size_t count = 100;
    std::size_t height = 32;
    std::size_t width = 32;
    std::array<double, 3> hematoxylin{0.650, 0.704, 0.286};
    std::array<double, 3> eosin{0.072, 0.990, 0.105};
    double nuclei_density = 0.002;  // expected nuclei per pixel
    double radius_min = 2.5;
    double radius_max = 6.0;
    double h_conc_min = 0.8;
    double h_conc_max = 1.4;
    double e_conc_min = 0.5;
    double e_conc_max = 1.0;
    double e_jitter = 0.15;        // relative per-pixel eosin variation
    double lumen_probability = 0.3;
    double od_noise = 0.005;
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const char* m) { throw Error(ErrorKind::InvalidConfig, m); };
        if (height == 0 || width == 0) fail("synthetic patch dimensions must be positive");
        if (!(radius_min > 0.0 && radius_min <= radius_max)) fail("synthetic radius range invalid");
        if (!(h_conc_min >= 0.0 && h_conc_min <= h_conc_max)) fail("synthetic hematoxylin range invalid");
        if (!(e_conc_min >= 0.0 && e_conc_min <= e_conc_max)) fail("synthetic eosin range invalid");
        if (!(nuclei_density >= 0.0)) fail("nuclei_density must be non-negative");
        if (!(e_jitter >= 0.0 && e_jitter < 1.0)) fail("e_jitter must lie in [0, 1)");
        if (!(lumen_probability >= 0.0 && lumen_probability <= 1.0)) fail("lumen_probability must lie in [0, 1]");
        if (!(od_noise >= 0.0)) fail("od_noise must be non-negative");
        (void)StainMatrix::from_two(hematoxylin, eosin);
    }
};

namespace detail {

struct Ellipse {
    double cy, cx, ry, rx, cos_t, sin_t;

    [[nodiscard]] bool contains(double y, double x) const {
        const double dy = y - cy;
        const double dx = x - cx;
        const double u = (dx * cos_t + dy * sin_t) / rx;
        const double v = (-dx * sin_t + dy * cos_t) / ry;
        return u * u + v * v <= 1.0;
    }
};

inline Ellipse random_ellipse(Stream& rng, double h, double w, double rmin, double rmax) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    return {rng.uniform(0.0, h), rng.uniform(0.0, w), rng.uniform(rmin, rmax), rng.uniform(rmin, rmax),
            std::cos(theta), std::sin(theta)};
}

} // namespace detail

/// Patch `index` of the set; independent of every other index.
inline Patch synthesize_patch(const SyntheticSpec& spec, std::uint64_t index) {
    const StainMatrix m = StainMatrix::from_two(spec.hematoxylin, spec.eosin);
    const auto h_vec = m.row(0);
    const auto e_vec = m.row(1);
    Stream rng(spec.seed, {index, 0x5e7});
    const double hh = static_cast<double>(spec.height);
    const double ww = static_cast<double>(spec.width);

    const double expected = spec.nuclei_density * hh * ww;
    std::poisson_distribution<int> poisson(std::max(expected, 1e-12));
    const int n_nuclei = expected > 0.0 ? poisson(rng.engine()) : 0;
    std::vector<detail::Ellipse> nuclei;
    std::vector<double> nucleus_conc;
    for (int i = 0; i < n_nuclei; ++i) {
        nuclei.push_back(detail::random_ellipse(rng, hh, ww, spec.radius_min, spec.radius_max));
        nucleus_conc.push_back(rng.uniform(spec.h_conc_min, spec.h_conc_max));
    }
    std::vector<detail::Ellipse> lumen;
    if (rng.uniform(0.0, 1.0) < spec.lumen_probability) {
        lumen.push_back(detail::random_ellipse(rng, hh, ww, 1.5 * spec.radius_min, 2.0 * spec.radius_max));
    }
    const double wash = rng.uniform(spec.e_conc_min, spec.e_conc_max);

    // Nuclei and lumen are rasterized over their bounding boxes first.
    const std::size_t n = spec.height * spec.width;
    std::vector<double> nucleus(n, -1.0);
    std::vector<char> empty(n, 0);
    auto raster = [&](const detail::Ellipse& e, auto&& mark) {
        const double r = std::max(e.rx, e.ry);
        const auto lo = [](double v) { return static_cast<std::size_t>(std::max(0.0, std::floor(v - 0.5))); };
        const std::size_t y1 = std::min(spec.height, static_cast<std::size_t>(std::max(0.0, std::ceil(e.cy + r))));
        const std::size_t x1 = std::min(spec.width, static_cast<std::size_t>(std::max(0.0, std::ceil(e.cx + r))));
        for (std::size_t y = lo(e.cy - r); y < y1; ++y) {
            for (std::size_t x = lo(e.cx - r); x < x1; ++x) {
                if (e.contains(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5)) mark(y * spec.width + x);
            }
        }
    };
    for (std::size_t i = 0; i < nuclei.size(); ++i) {
        raster(nuclei[i], [&](std::size_t j) { nucleus[j] = std::max(nucleus[j], nucleus_conc[i]); });
    }
    for (const auto& l : lumen) {
        raster(l, [&](std::size_t j) { empty[j] = 1; });
    }

    Patch out(spec.height, spec.width);
    for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
            const std::size_t j = y * spec.width + x;
            double ch = 0.0;
            double ce = wash * (1.0 + spec.e_jitter * rng.uniform(-1.0, 1.0));
            if (nucleus[j] >= 0.0) {
                ch = std::max(ch, nucleus[j]);
                ce = 0.0;
            }
            if (empty[j]) {
                ch = 0.0;
                ce = 0.0;
            }
            for (int k = 0; k < 3; ++k) {
                double od = ch * h_vec[k] + ce * e_vec[k];
                if (spec.od_noise > 0.0) {
                    od += rng.normal(0.0, spec.od_noise);
                }
                out.at(y, x, k) = od_to_intensity(static_cast<float>(std::clamp(od, 0.0, kOdMax)));
            }
        }
    }
    return out;
}

inline std::vector<Patch> synthesize_set(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<Patch> set;
    set.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        set.push_back(synthesize_patch(spec, i));
    }
    return set;
}

} // namespace stainkit

#endif
