#ifndef STAINKIT_AUGMENT_HPP
#define STAINKIT_AUGMENT_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "colorspace.hpp"
#include "error.hpp"
#include "image.hpp"
#include "rng.hpp"

namespace stainkit {

// ---------------------------------------------------------------------------
// Configuration

enum class Category { Basic, Morphology, BC, HSVLight, HSVStrong, HEDLight, HEDStrong, HSVOnlyMax };

inline constexpr std::array<std::pair<Category, std::string_view>, 8> kCategoryNames{{
    {Category::Basic, "Basic"},
    {Category::Morphology, "Morphology"},
    {Category::BC, "BC"},
    {Category::HSVLight, "HSVLight"},
    {Category::HSVStrong, "HSVStrong"},
    {Category::HEDLight, "HEDLight"},
    {Category::HEDStrong, "HEDStrong"},
    {Category::HSVOnlyMax, "HSVOnlyMax"},
}};

constexpr std::string_view to_string(Category c) {
    for (const auto& [cat, name] : kCategoryNames) {
        if (cat == c) {
            return name;
        }
    }
    return "Unknown";
}

inline Category category_from_string(std::string_view name) {
    for (const auto& [cat, n] : kCategoryNames) {
        if (n == name) {
            return cat;
        }
    }
    throw Error(ErrorKind::InvalidConfig, "unknown augmentation category '" + std::string(name) + "'");
}

/// Which transform groups a category runs. Categories nest: every group
/// except HSVOnlyMax includes the geometric group, and so on upward.
struct StageSet {
    bool geometric = false;
    bool morphology = false;
    bool bc = false;
    bool hsv = false;
    bool hed = false;

    friend bool operator==(const StageSet&, const StageSet&) = default;
};

constexpr StageSet stages_of(Category c) {
    switch (c) {
    case Category::Basic: return {true, false, false, false, false};
    case Category::Morphology: return {true, true, false, false, false};
    case Category::BC: return {true, true, true, false, false};
    case Category::HSVLight:
    case Category::HSVStrong: return {true, true, true, true, false};
    case Category::HEDLight:
    case Category::HEDStrong: return {true, true, true, false, true};
    case Category::HSVOnlyMax: return {false, false, false, true, false};
    }
    return {};
}

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    [[nodiscard]] bool contains(double v) const noexcept { return v >= lo && v <= hi; }
    friend bool operator==(const Range&, const Range&) = default;
};

namespace keys {
inline constexpr std::string_view scale = "scale";
inline constexpr std::string_view elastic_alpha = "elastic_alpha";
inline constexpr std::string_view elastic_sigma = "elastic_sigma";
inline constexpr std::string_view noise_sigma = "noise_sigma";
inline constexpr std::string_view blur_sigma = "blur_sigma";
inline constexpr std::string_view brightness = "brightness";
inline constexpr std::string_view contrast = "contrast";
inline constexpr std::string_view hue = "hue";
inline constexpr std::string_view saturation = "saturation";
inline constexpr std::string_view value = "value";
inline constexpr std::string_view hed_alpha = "hed_alpha";
inline constexpr std::string_view hed_beta = "hed_beta";
} // namespace keys

struct AugmentConfig {
    Category category = Category::Basic;
    std::map<std::string, Range, std::less<>> ranges;
    std::uint64_t seed = 0;

    /// Ranges tuned for H&E patches: scale [0.8, 1.2], elastic alpha
    /// [80, 120] and sigma [9, 11], noise and blur sigma [0, 0.1],
    /// brightness [0.65, 1.35], contrast [0.5, 1.5]; HSV hue/saturation
    /// ratios [-0.1, 0.1] light and [-1, 1] strong; HED ratios
    /// [-0.05, 0.05] light and [-0.2, 0.2] strong. HSVOnlyMax perturbs
    /// hue, saturation and value over [-1, 1] with nothing else.
    static AugmentConfig defaults(Category category, std::uint64_t seed = 0) {
        AugmentConfig cfg;
        cfg.category = category;
        cfg.seed = seed;
        const StageSet st = stages_of(category);
        auto set = [&](std::string_view k, double lo, double hi) { cfg.ranges[std::string(k)] = Range{lo, hi}; };
        if (st.morphology) {
            set(keys::scale, 0.8, 1.2);
            set(keys::elastic_alpha, 80.0, 120.0);
            set(keys::elastic_sigma, 9.0, 11.0);
            set(keys::noise_sigma, 0.0, 0.1);
            set(keys::blur_sigma, 0.0, 0.1);
        }
        if (st.bc) {
            set(keys::brightness, 0.65, 1.35);
            set(keys::contrast, 0.5, 1.5);
        }
        switch (category) {
        case Category::HSVLight:
            set(keys::hue, -0.1, 0.1);
            set(keys::saturation, -0.1, 0.1);
            set(keys::value, 0.0, 0.0);
            break;
        case Category::HSVStrong:
            set(keys::hue, -1.0, 1.0);
            set(keys::saturation, -1.0, 1.0);
            set(keys::value, 0.0, 0.0);
            break;
        case Category::HSVOnlyMax:
            set(keys::hue, -1.0, 1.0);
            set(keys::saturation, -1.0, 1.0);
            set(keys::value, -1.0, 1.0);
            break;
        case Category::HEDLight:
            set(keys::hed_alpha, -0.05, 0.05);
            set(keys::hed_beta, -0.05, 0.05);
            break;
        case Category::HEDStrong:
            set(keys::hed_alpha, -0.2, 0.2);
            set(keys::hed_beta, -0.2, 0.2);
            break;
        default: break;
        }
        return cfg;
    }

    [[nodiscard]] Range range(std::string_view key) const {
        auto it = ranges.find(key);
        if (it == ranges.end()) {
            throw Error(ErrorKind::InvalidConfig, "missing range '" + std::string(key) + "'");
        }
        return it->second;
    }

    /// The key set must equal that of defaults(category); every interval
    /// must be ordered and lie in the transform's admissible domain.
    void validate() const {
        const AugmentConfig ref = defaults(category);
        for (const auto& [k, r] : ranges) {
            if (!ref.ranges.contains(k)) {
                throw Error(ErrorKind::InvalidConfig,
                            "range '" + k + "' does not apply to category " + std::string(to_string(category)));
            }
            if (!(std::isfinite(r.lo) && std::isfinite(r.hi)) || r.lo > r.hi) {
                throw Error(ErrorKind::InvalidConfig, "range '" + k + "' must satisfy lo <= hi");
            }
        }
        for (const auto& [k, r] : ref.ranges) {
            if (!ranges.contains(k)) {
                throw Error(ErrorKind::InvalidConfig, "missing range '" + k + "'");
            }
        }
        auto require = [&](std::string_view k, bool ok, const char* what) {
            if (ranges.contains(k) && !ok) {
                throw Error(ErrorKind::InvalidConfig, "range '" + std::string(k) + "' " + what);
            }
        };
        auto r = [&](std::string_view k) { return ranges.contains(k) ? range(k) : Range{}; };
        require(keys::scale, r(keys::scale).lo > 0.0 && r(keys::scale).hi <= 4.0, "must lie in (0, 4]");
        require(keys::elastic_alpha, r(keys::elastic_alpha).lo >= 0.0, "must be >= 0");
        require(keys::elastic_sigma, r(keys::elastic_sigma).lo > 0.0, "must be > 0");
        require(keys::noise_sigma, r(keys::noise_sigma).lo >= 0.0, "must be >= 0");
        require(keys::blur_sigma, r(keys::blur_sigma).lo >= 0.0, "must be >= 0");
        require(keys::brightness, r(keys::brightness).lo > 0.0, "must be > 0");
        require(keys::contrast, r(keys::contrast).lo > 0.0, "must be > 0");
        for (auto k : {keys::hue, keys::saturation, keys::value}) {
            require(k, r(k).lo >= -1.0 && r(k).hi <= 1.0, "must lie in [-1, 1]");
        }
        require(keys::hed_alpha, r(keys::hed_alpha).lo >= -1.0, "must be >= -1");
    }
};

/// Concrete draws for one augmentation call. Fields of groups the category
/// does not run keep their neutral values.
struct SampledParams {
    StageSet stages;
    int rotation_k = 0;
    bool flip_horizontal = false;
    bool flip_vertical = false;
    double scale = 1.0;
    double elastic_alpha = 0.0;
    double elastic_sigma = 10.0;
    std::uint64_t elastic_seed = 0;
    double blur_sigma = 0.0;
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
    double brightness = 1.0;
    double contrast = 1.0;
    double hue = 0.0;
    double saturation = 0.0;
    double value = 0.0;
    std::array<double, 3> hed_alpha{};
    std::array<double, 3> hed_beta{};

    friend bool operator==(const SampledParams&, const SampledParams&) = default;
};

namespace detail {
enum class StreamId : std::uint64_t { Geometric = 1, Morphology = 2, BC = 3, Hsv = 4, Hed = 5 };
}

/// Each transform group draws from its own stream addressed by
/// (seed, call_index, group), so the geometric draws of a Morphology call
/// equal those of a Basic call with the same seed and index.
inline SampledParams sample_params(const AugmentConfig& cfg, std::uint64_t call_index) {
    using detail::StreamId;
    SampledParams s;
    s.stages = stages_of(cfg.category);
    auto stream = [&](StreamId id) { return Stream(cfg.seed, {call_index, static_cast<std::uint64_t>(id)}); };
    auto draw = [&](Stream& st, std::string_view key) {
        const Range r = cfg.range(key);
        return st.uniform(r.lo, r.hi);
    };
    if (s.stages.geometric) {
        Stream st = stream(StreamId::Geometric);
        s.rotation_k = st.uniform_int(0, 3);
        s.flip_horizontal = st.coin();
        s.flip_vertical = st.coin();
    }
    if (s.stages.morphology) {
        Stream st = stream(StreamId::Morphology);
        s.scale = draw(st, keys::scale);
        s.elastic_alpha = draw(st, keys::elastic_alpha);
        s.elastic_sigma = draw(st, keys::elastic_sigma);
        s.blur_sigma = draw(st, keys::blur_sigma);
        s.noise_sigma = draw(st, keys::noise_sigma);
        s.elastic_seed = st.engine()();
        s.noise_seed = st.engine()();
    }
    if (s.stages.bc) {
        Stream st = stream(StreamId::BC);
        s.brightness = draw(st, keys::brightness);
        s.contrast = draw(st, keys::contrast);
    }
    if (s.stages.hsv) {
        Stream st = stream(StreamId::Hsv);
        s.hue = draw(st, keys::hue);
        s.saturation = draw(st, keys::saturation);
        s.value = draw(st, keys::value);
    }
    if (s.stages.hed) {
        Stream st = stream(StreamId::Hed);
        for (int i = 0; i < 3; ++i) {
            s.hed_alpha[i] = draw(st, keys::hed_alpha);
            s.hed_beta[i] = draw(st, keys::hed_beta);
        }
    }
    return s;
}

/// Replaces every draw with the identity point of its transform.
inline SampledParams neutralized(SampledParams s) {
    SampledParams n;
    n.stages = s.stages;
    n.elastic_seed = s.elastic_seed;
    n.noise_seed = s.noise_seed;
    return n;
}

// ---------------------------------------------------------------------------
// Geometric

/// Rotates by k * 90 degrees counter-clockwise, then mirrors. Pixel exact.
inline Patch augment_basic(const Patch& p, int k, bool flip_horizontal, bool flip_vertical) {
    k = ((k % 4) + 4) % 4;
    const std::size_t h = p.height();
    const std::size_t w = p.width();
    if ((k % 2 == 1) && h != w) {
        throw Error(ErrorKind::NonSquareRotation, "odd quarter turns require a square patch");
    }
    Patch out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t sy = y;
            std::size_t sx = x;
            switch (k) {
            case 1: sy = x; sx = w - 1 - y; break;
            case 2: sy = h - 1 - y; sx = w - 1 - x; break;
            case 3: sy = h - 1 - x; sx = y; break;
            default: break;
            }
            auto src = p.pixel(sy * w + sx);
            std::copy(src.begin(), src.end(), out.pixel(y * w + x).begin());
        }
    }
    if (flip_horizontal) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w / 2; ++x) {
                std::swap_ranges(out.pixel(y * w + x).begin(), out.pixel(y * w + x).end(),
                                 out.pixel(y * w + (w - 1 - x)).begin());
            }
        }
    }
    if (flip_vertical) {
        for (std::size_t y = 0; y < h / 2; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                std::swap_ranges(out.pixel(y * w + x).begin(), out.pixel(y * w + x).end(),
                                 out.pixel((h - 1 - y) * w + x).begin());
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Filtering helpers

/// Normalized samples of exp(-x^2 / 2 sigma^2) on [-ceil(3 sigma), ceil(3 sigma)].
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) {
        return {1.0};
    }
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) {
        v /= sum;
    }
    return k;
}

namespace detail {

/// Separable convolution of an interleaved plane set with replicate borders.
inline void convolve_separable(std::vector<float>& data, std::size_t h, std::size_t w, std::size_t stride,
                               const std::vector<double>& kernel) {
    const int radius = static_cast<int>(kernel.size() / 2);
    if (radius == 0) {
        return;
    }
    std::vector<float> tmp(data.size());
    auto clampi = [](long v, long hi) { return static_cast<std::size_t>(std::clamp<long>(v, 0, hi)); };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < stride; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const std::size_t sx = clampi(static_cast<long>(x) + i, static_cast<long>(w) - 1);
                    acc += kernel[i + radius] * data[(y * w + sx) * stride + c];
                }
                tmp[(y * w + x) * stride + c] = static_cast<float>(acc);
            }
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < stride; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const std::size_t sy = clampi(static_cast<long>(y) + i, static_cast<long>(h) - 1);
                    acc += kernel[i + radius] * tmp[(sy * w + x) * stride + c];
                }
                data[(y * w + x) * stride + c] = static_cast<float>(acc);
            }
        }
    }
}

/// Bilinear sample at a fractional position with replicate borders.
inline void sample_bilinear(const Patch& p, double y, double x, std::span<float, 3> out) {
    const double maxy = static_cast<double>(p.height() - 1);
    const double maxx = static_cast<double>(p.width() - 1);
    y = std::clamp(y, 0.0, maxy);
    x = std::clamp(x, 0.0, maxx);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, p.height() - 1);
    const std::size_t x1 = std::min(x0 + 1, p.width() - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    for (std::size_t c = 0; c < 3; ++c) {
        const double v00 = p.at(y0, x0, c);
        const double v01 = p.at(y0, x1, c);
        const double v10 = p.at(y1, x0, c);
        const double v11 = p.at(y1, x1, c);
        const double top = v00 + fx * (v01 - v00);
        const double bottom = v10 + fx * (v11 - v10);
        out[c] = static_cast<float>(top + fy * (bottom - top));
    }
}

} // namespace detail

/// Separable Gaussian blur, radius ceil(3 sigma), replicate borders.
/// sigma == 0 is the identity.
inline Patch gaussian_blur(const Patch& p, double sigma) {
    if (sigma < 0.0) {
        throw Error(ErrorKind::InvalidArgument, "blur sigma must be >= 0");
    }
    if (sigma == 0.0) {
        return p;
    }
    std::vector<float> data(p.data().begin(), p.data().end());
    detail::convolve_separable(data, p.height(), p.width(), 3, gaussian_kernel(sigma));
    Patch out(p.height(), p.width(), std::move(data));
    clip_inplace(out, 0.0f, 1.0f);
    return out;
}

/// Adds N(0, sigma^2) per value and clips.
inline Patch gaussian_noise(const Patch& p, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) {
        throw Error(ErrorKind::InvalidArgument, "noise sigma must be >= 0");
    }
    if (sigma == 0.0) {
        return p;
    }
    Stream st(seed);
    Patch out = p;
    for (float& v : out.data()) {
        v = static_cast<float>(std::clamp(v + st.normal(0.0, sigma), 0.0, 1.0));
    }
    return out;
}

/// Bilinear resize by `factor`, then center crop (factor > 1) or replicate
/// pad (factor < 1) back to the input size.
inline Patch rescale(const Patch& p, double factor) {
    if (!(factor > 0.0 && factor <= 4.0)) {
        throw Error(ErrorKind::InvalidArgument, "scale factor must lie in (0, 4]");
    }
    const std::size_t h = p.height();
    const std::size_t w = p.width();
    const auto hs = static_cast<long>(std::max(1.0, std::round(static_cast<double>(h) * factor)));
    const auto ws = static_cast<long>(std::max(1.0, std::round(static_cast<double>(w) * factor)));
    if (hs == static_cast<long>(h) && ws == static_cast<long>(w)) {
        return p;
    }
    const long oy = static_cast<long>(std::floor((hs - static_cast<long>(h)) / 2.0));
    const long ox = static_cast<long>(std::floor((ws - static_cast<long>(w)) / 2.0));
    const double ry = static_cast<double>(h) / static_cast<double>(hs);
    const double rx = static_cast<double>(w) / static_cast<double>(ws);
    Patch out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        const long ys = std::clamp<long>(static_cast<long>(y) + oy, 0, hs - 1);
        const double sy = (static_cast<double>(ys) + 0.5) * ry - 0.5;
        for (std::size_t x = 0; x < w; ++x) {
            const long xs = std::clamp<long>(static_cast<long>(x) + ox, 0, ws - 1);
            const double sx = (static_cast<double>(xs) + 0.5) * rx - 0.5;
            detail::sample_bilinear(p, sy, sx, out.pixel(y * w + x));
        }
    }
    return out;
}

/// Per-pixel displacement (dy, dx) in pixels: U(-1, 1) noise, Gaussian
/// smoothed with sigma (replicate borders), scaled by alpha.
struct DisplacementField {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> dy;
    std::vector<float> dx;
};

inline DisplacementField elastic_displacement(std::size_t h, std::size_t w, double alpha, double sigma,
                                              std::uint64_t seed) {
    if (alpha < 0.0 || !(sigma > 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "elastic deformation needs alpha >= 0 and sigma > 0");
    }
    DisplacementField f{h, w, std::vector<float>(h * w), std::vector<float>(h * w)};
    Stream st(seed);
    for (auto& v : f.dy) {
        v = static_cast<float>(st.uniform(-1.0, 1.0));
    }
    for (auto& v : f.dx) {
        v = static_cast<float>(st.uniform(-1.0, 1.0));
    }
    const auto kernel = gaussian_kernel(sigma);
    detail::convolve_separable(f.dy, h, w, 1, kernel);
    detail::convolve_separable(f.dx, h, w, 1, kernel);
    for (auto& v : f.dy) {
        v = static_cast<float>(v * alpha);
    }
    for (auto& v : f.dx) {
        v = static_cast<float>(v * alpha);
    }
    return f;
}

inline Patch warp(const Patch& p, const DisplacementField& f) {
    if (f.height != p.height() || f.width != p.width()) {
        throw Error(ErrorKind::ShapeMismatch, "displacement field does not match patch");
    }
    Patch out(p.height(), p.width());
    for (std::size_t y = 0; y < p.height(); ++y) {
        for (std::size_t x = 0; x < p.width(); ++x) {
            const std::size_t i = y * p.width() + x;
            detail::sample_bilinear(p, static_cast<double>(y) + f.dy[i], static_cast<double>(x) + f.dx[i],
                                    out.pixel(i));
        }
    }
    return out;
}

/// Simard-style elastic deformation; alpha == 0 is the identity.
inline Patch elastic_deform(const Patch& p, double alpha, double sigma, std::uint64_t seed) {
    if (alpha == 0.0) {
        return p;
    }
    return warp(p, elastic_displacement(p.height(), p.width(), alpha, sigma, seed));
}

// ---------------------------------------------------------------------------
// Intensity and color

/// out = clip(m + c (b p - m)), m the per-channel mean of b p.
inline Patch brightness_contrast(const Patch& p, double b, double c) {
    if (!(b > 0.0) || c < 0.0) {
        throw Error(ErrorKind::InvalidArgument, "brightness must be > 0 and contrast >= 0");
    }
    if (b == 1.0 && c == 1.0) {
        return p;
    }
    std::array<double, 3> mean = channel_means(p);
    for (double& m : mean) {
        m *= b;
    }
    Patch out(p.height(), p.width());
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto src = p.pixel(i);
        auto dst = out.pixel(i);
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = mean[ch] + c * (b * src[ch] - mean[ch]);
            dst[ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

inline Patch hsv_shift(const Patch& p, double hue_ratio, double sat_ratio, double val_ratio) {
    if (hue_ratio == 0.0 && sat_ratio == 0.0 && val_ratio == 0.0) {
        return p;
    }
    Patch out(p.height(), p.width());
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto src = p.pixel(i);
        auto hsv = rgb_to_hsv_pixel(src[0], src[1], src[2]);
        double h = hsv[0] + hue_ratio;
        h -= std::floor(h);
        const double s = std::clamp(hsv[1] * (1.0 + sat_ratio), 0.0, 1.0);
        const double v = std::clamp(hsv[2] * (1.0 + val_ratio), 0.0, 1.0);
        auto rgb = hsv_to_rgb_pixel(static_cast<float>(h), static_cast<float>(s), static_cast<float>(v));
        std::copy(rgb.begin(), rgb.end(), out.pixel(i).begin());
    }
    return out;
}

/// Concentrations c_i become c_i (1 + alpha_i) + beta_i before the patch is
/// reconstructed through the same stain matrix.
inline Patch hed_shift(const Patch& p, const std::array<double, 3>& alpha, const std::array<double, 3>& beta,
                       const StainMatrix& m = StainMatrix::ruifrok()) {
    const Eigen::Matrix3d inv = m.inverse();
    const Eigen::Matrix3d& mm = m.matrix();
    Patch out(p.height(), p.width());
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto src = p.pixel(i);
        const Eigen::RowVector3d od(intensity_to_od(src[0]), intensity_to_od(src[1]), intensity_to_od(src[2]));
        Eigen::RowVector3d c = od * inv;
        for (int j = 0; j < 3; ++j) {
            c[j] = c[j] * (1.0 + alpha[j]) + beta[j];
        }
        const Eigen::RowVector3d od2 = c * mm;
        auto dst = out.pixel(i);
        for (int k = 0; k < 3; ++k) {
            dst[k] = od_to_intensity(static_cast<float>(od2[k]));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composition

/// Runs the groups in order geometric, morphological (scale, elastic, blur,
/// noise), brightness/contrast, then HSV or HED color.
inline Patch apply_params(const Patch& p, const SampledParams& s, const StainMatrix& m = StainMatrix::ruifrok()) {
    Patch out = p;
    if (s.stages.geometric) {
        out = augment_basic(out, s.rotation_k, s.flip_horizontal, s.flip_vertical);
    }
    if (s.stages.morphology) {
        out = rescale(out, s.scale);
        out = elastic_deform(out, s.elastic_alpha, s.elastic_sigma, s.elastic_seed);
        out = gaussian_blur(out, s.blur_sigma);
        out = gaussian_noise(out, s.noise_sigma, s.noise_seed);
    }
    if (s.stages.bc) {
        out = brightness_contrast(out, s.brightness, s.contrast);
    }
    if (s.stages.hsv) {
        out = hsv_shift(out, s.hue, s.saturation, s.value);
    }
    if (s.stages.hed) {
        const bool neutral = std::all_of(s.hed_alpha.begin(), s.hed_alpha.end(), [](double v) { return v == 0.0; }) &&
                             std::all_of(s.hed_beta.begin(), s.hed_beta.end(), [](double v) { return v == 0.0; });
        if (!neutral) {
            out = hed_shift(out, s.hed_alpha, s.hed_beta, m);
        }
    }
    clip_inplace(out, 0.0f, 1.0f);
    return out;
}

struct Augmented {
    Patch patch;
    SampledParams params;
};

/// Deterministic in (patch, cfg, call_index).
inline Augmented augment(const Patch& p, const AugmentConfig& cfg, std::uint64_t call_index) {
    SampledParams s = sample_params(cfg, call_index);
    return {apply_params(p, s), s};
}

inline Patch apply_profile(const Patch& p, const AugmentConfig& cfg, std::uint64_t call_index) {
    return augment(p, cfg, call_index).patch;
}

} // namespace stainkit

#endif
