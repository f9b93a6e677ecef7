#ifndef STAINKIT_IMAGE_HPP
#define STAINKIT_IMAGE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"

namespace stainkit {

/// Interleaved H x W x 3 float raster. The tag only distinguishes what the
/// three channels mean (RGB intensity, optical density, HSV, stain
/// concentration) so that conversions cannot be applied to the wrong space.
template <typename Tag>
class Image3 {
public:
    static constexpr std::size_t channels = 3;

    Image3() = default;

    Image3(std::size_t height, std::size_t width, float fill = 0.0f)
        : height_(height), width_(width), data_(height * width * channels, fill) {
        if (height == 0 || width == 0) {
            throw Error(ErrorKind::InvalidArgument, "image dimensions must be >= 1");
        }
    }

    Image3(std::size_t height, std::size_t width, std::vector<float> data)
        : height_(height), width_(width), data_(std::move(data)) {
        if (height == 0 || width == 0) {
            throw Error(ErrorKind::InvalidArgument, "image dimensions must be >= 1");
        }
        if (data_.size() != height * width * channels) {
            throw Error(ErrorKind::ShapeMismatch, "buffer size does not match H x W x 3");
        }
    }

    [[nodiscard]] std::size_t height() const noexcept { return height_; }
    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t pixel_count() const noexcept { return height_ * width_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] float& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
        return data_[(y * width_ + x) * channels + c];
    }
    [[nodiscard]] float at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
        return data_[(y * width_ + x) * channels + c];
    }

    [[nodiscard]] std::span<float, 3> pixel(std::size_t i) noexcept {
        return std::span<float, 3>(data_.data() + i * channels, 3);
    }
    [[nodiscard]] std::span<const float, 3> pixel(std::size_t i) const noexcept {
        return std::span<const float, 3>(data_.data() + i * channels, 3);
    }

    [[nodiscard]] std::span<float> data() noexcept { return data_; }
    [[nodiscard]] std::span<const float> data() const noexcept { return data_; }

    [[nodiscard]] bool same_shape(const Image3& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const Image3&, const Image3&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<float> data_;
};

struct RgbTag {};
struct OdTag {};
struct HsvTag {};
struct ConcentrationTag {};

/// RGB intensities in [0, 1].
using Patch = Image3<RgbTag>;
/// Optical density, clipped to [0, kOdMax].
using OdPatch = Image3<OdTag>;
/// Hue in [0, 1) cyclic, saturation and value in [0, 1].
using HsvPatch = Image3<HsvTag>;
/// Per-stain concentrations (unbounded sign; H, E, residual).
using ConcentrationPatch = Image3<ConcentrationTag>;

template <typename Tag>
void clip_inplace(Image3<Tag>& img, float lo, float hi) {
    for (float& v : img.data()) {
        v = std::clamp(v, lo, hi);
    }
}

template <typename Tag>
[[nodiscard]] bool all_finite(const Image3<Tag>& img) {
    return std::all_of(img.data().begin(), img.data().end(), [](float v) { return std::isfinite(v); });
}

template <typename Tag>
[[nodiscard]] float max_abs_diff(const Image3<Tag>& a, const Image3<Tag>& b) {
    if (!a.same_shape(b)) {
        throw Error(ErrorKind::ShapeMismatch, "max_abs_diff on differently sized images");
    }
    float worst = 0.0f;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        worst = std::max(worst, std::abs(da[i] - db[i]));
    }
    return worst;
}

/// Per-channel mean, accumulated in double.
template <typename Tag>
[[nodiscard]] std::array<double, 3> channel_means(const Image3<Tag>& img) {
    std::array<double, 3> sum{};
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        auto px = img.pixel(i);
        for (std::size_t c = 0; c < 3; ++c) {
            sum[c] += px[c];
        }
    }
    for (double& s : sum) {
        s /= static_cast<double>(img.pixel_count());
    }
    return sum;
}

} // namespace stainkit

#endif
