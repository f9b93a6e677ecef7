#ifndef STAINKIT_NEURAL_TENSOR_HPP
#define STAINKIT_NEURAL_TENSOR_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../image.hpp"

namespace stainkit::nn {

/// NHWC buffer. The gradient is allocated on first use.
template <typename T>
class Tensor {
public:
    using Shape = std::array<std::size_t, 4>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(count(shape), fill) {}

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t n() const noexcept { return shape_[0]; }
    [[nodiscard]] std::size_t h() const noexcept { return shape_[1]; }
    [[nodiscard]] std::size_t w() const noexcept { return shape_[2]; }
    [[nodiscard]] std::size_t c() const noexcept { return shape_[3]; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] T* ptr() noexcept { return data_.data(); }
    [[nodiscard]] const T* ptr() const noexcept { return data_.data(); }

    [[nodiscard]] std::span<T> grad() {
        if (grad_.size() != data_.size()) {
            grad_.assign(data_.size(), T(0));
        }
        return grad_;
    }
    [[nodiscard]] bool has_grad() const noexcept { return grad_.size() == data_.size() && !grad_.empty(); }
    void zero_grad() { std::fill(grad().begin(), grad().end(), T(0)); }

    [[nodiscard]] T& at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) noexcept {
        return data_[((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + ch];
    }
    [[nodiscard]] const T& at(std::size_t b, std::size_t y, std::size_t x, std::size_t ch) const noexcept {
        return data_[((b * shape_[1] + y) * shape_[2] + x) * shape_[3] + ch];
    }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    static std::size_t count(const Shape& s) { return s[0] * s[1] * s[2] * s[3]; }

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<T> data_;
    std::vector<T> grad_;
};

template <typename T>
void require_shape(const Tensor<T>& a, const typename Tensor<T>::Shape& s, const char* what) {
    if (a.shape() != s) {
        throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": tensor shape mismatch");
    }
}

/// Patches in [0,1] become a batch in [-1,1].
template <typename T>
Tensor<T> to_tensor(std::span<const Patch> patches) {
    if (patches.empty()) {
        throw Error(ErrorKind::EmptyDataset, "empty batch");
    }
    const std::size_t h = patches[0].height();
    const std::size_t w = patches[0].width();
    Tensor<T> t({patches.size(), h, w, 3});
    auto out = t.data();
    std::size_t o = 0;
    for (const auto& p : patches) {
        if (p.height() != h || p.width() != w) {
            throw Error(ErrorKind::ShapeMismatch, "batch patches differ in size");
        }
        for (float v : p.data()) {
            out[o++] = static_cast<T>(2.0 * static_cast<double>(v) - 1.0);
        }
    }
    return t;
}

template <typename T>
Patch to_patch(const Tensor<T>& t, std::size_t b) {
    Patch p(t.h(), t.w());
    const std::size_t stride = t.h() * t.w() * 3;
    auto src = t.data().subspan(b * stride, stride);
    auto dst = p.data();
    for (std::size_t i = 0; i < stride; ++i) {
        dst[i] = static_cast<float>(std::clamp((static_cast<double>(src[i]) + 1.0) * 0.5, 0.0, 1.0));
    }
    return p;
}

/// Mean over all elements of the squared difference.
template <typename T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_shape(pred, target.shape(), "mse_loss");
    if (pred.size() == 0) {
        throw Error(ErrorKind::ShapeMismatch, "mse_loss on empty tensors");
    }
    double sum = 0.0;
    auto a = pred.data();
    auto b = target.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

template <typename T>
Tensor<T> mse_grad(const Tensor<T>& pred, const Tensor<T>& target) {
    require_shape(pred, target.shape(), "mse_grad");
    Tensor<T> g(pred.shape());
    const T scale = T(2) / static_cast<T>(pred.size());
    auto a = pred.data();
    auto b = target.data();
    auto o = g.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        o[i] = scale * (a[i] - b[i]);
    }
    return g;
}

} // namespace stainkit::nn

#endif
