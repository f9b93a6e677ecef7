#ifndef STAINKIT_COLORSPACE_HPP
#define STAINKIT_COLORSPACE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "error.hpp"
#include "image.hpp"

namespace stainkit {

/// OD = -log10((255 I + 1) / 256); black maps to the largest representable OD.
inline const double kOdMax = -std::log10(1.0 / 256.0);

inline constexpr std::array<double, 3> kRec601Weights{0.299, 0.587, 0.114};

inline constexpr double kMaxStainCondition = 1e6;

/// Three unit-norm optical density vectors, one per row (H, E, residual).
/// An OD pixel relates to its concentrations as od = c * M with row vectors.
class StainMatrix {
public:
    using Rows = std::array<std::array<double, 3>, 3>;

    /// Rows are normalized to unit length (rows already unit to within
    /// rounding are kept bit-exact); a zero row is rejected.
    explicit StainMatrix(const Rows& rows) {
        for (int r = 0; r < 3; ++r) {
            Eigen::Vector3d v(rows[r][0], rows[r][1], rows[r][2]);
            const double n = v.norm();
            if (!(n > 0.0) || !std::isfinite(n)) {
                throw Error(ErrorKind::InvalidArgument, "stain vector must be non-zero and finite");
            }
            m_.row(r) = (std::abs(n - 1.0) <= 4e-16 ? v : Eigen::Vector3d(v / n)).transpose();
        }
    }

    /// Ruifrok & Johnston H&E-DAB vectors.
    static StainMatrix ruifrok() {
        return StainMatrix(Rows{{{0.650, 0.704, 0.286}, {0.072, 0.990, 0.105}, {0.268, 0.570, 0.776}}});
    }

    /// Builds H, E and a residual third row equal to normalize(H x E).
    static StainMatrix from_two(const std::array<double, 3>& h, const std::array<double, 3>& e) {
        Eigen::Vector3d hv(h[0], h[1], h[2]);
        Eigen::Vector3d ev(e[0], e[1], e[2]);
        Eigen::Vector3d r = hv.normalized().cross(ev.normalized());
        if (r.norm() < 1e-12) {
            throw Error(ErrorKind::SingularMatrix, "stain vectors are parallel");
        }
        return StainMatrix(Rows{{h, e, {r.x(), r.y(), r.z()}}});
    }

    [[nodiscard]] const Eigen::Matrix3d& matrix() const noexcept { return m_; }

    [[nodiscard]] std::array<double, 3> row(int r) const {
        return {m_(r, 0), m_(r, 1), m_(r, 2)};
    }

    [[nodiscard]] Rows rows() const { return {row(0), row(1), row(2)}; }

    [[nodiscard]] double condition_number() const {
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(m_);
        const auto& s = svd.singularValues();
        return s(2) > 0.0 ? s(0) / s(2) : std::numeric_limits<double>::infinity();
    }

    /// Throws SingularMatrix when the condition number exceeds 1e6.
    [[nodiscard]] Eigen::Matrix3d inverse() const {
        if (!(condition_number() < kMaxStainCondition)) {
            throw Error(ErrorKind::SingularMatrix, "stain matrix condition number exceeds 1e6");
        }
        return m_.inverse();
    }

    friend bool operator==(const StainMatrix& a, const StainMatrix& b) { return a.m_ == b.m_; }

private:
    Eigen::Matrix3d m_;
};

// ---------------------------------------------------------------------------
// Per-pixel kernels. Every patch-level conversion is a map of one of these.

inline std::array<float, 3> rgb_to_hsv_pixel(float rf, float gf, float bf) {
    const double r = rf, g = gf, b = bf;
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    const double v = mx;
    const double s = mx > 0.0 ? delta / mx : 0.0;
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == r) {
            h = (g - b) / delta;
        } else if (mx == g) {
            h = (b - r) / delta + 2.0;
        } else {
            h = (r - g) / delta + 4.0;
        }
        h /= 6.0;
        if (h < 0.0) {
            h += 1.0;
        }
    }
    float hf = static_cast<float>(h);
    if (hf >= 1.0f) {
        hf = 0.0f;
    }
    return {hf, static_cast<float>(s), static_cast<float>(v)};
}

inline std::array<float, 3> hsv_to_rgb_pixel(float hf, float sf, float vf) {
    double h = hf - std::floor(hf);
    const double s = std::clamp(static_cast<double>(sf), 0.0, 1.0);
    const double v = std::clamp(static_cast<double>(vf), 0.0, 1.0);
    const double h6 = h * 6.0;
    const double sector = std::floor(h6);
    const double f = h6 - sector;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    double r = v, g = v, b = v;
    switch (static_cast<int>(sector) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

inline float intensity_to_od(float intensity) {
    const double i = std::clamp(static_cast<double>(intensity), 0.0, 1.0);
    const double od = -std::log10((255.0 * i + 1.0) / 256.0);
    return static_cast<float>(std::clamp(od, 0.0, kOdMax));
}

inline float od_to_intensity(float od) {
    const double d = std::clamp(static_cast<double>(od), 0.0, kOdMax);
    const double i = (256.0 * std::pow(10.0, -d) - 1.0) / 255.0;
    return static_cast<float>(std::clamp(i, 0.0, 1.0));
}

// ---------------------------------------------------------------------------

[[nodiscard]] inline HsvPatch rgb_to_hsv(const Patch& p) {
    HsvPatch out(p.height(), p.width());
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto src = p.pixel(i);
        auto hsv = rgb_to_hsv_pixel(src[0], src[1], src[2]);
        std::copy(hsv.begin(), hsv.end(), out.pixel(i).begin());
    }
    return out;
}

[[nodiscard]] inline Patch hsv_to_rgb(const HsvPatch& p) {
    Patch out(p.height(), p.width());
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto src = p.pixel(i);
        auto rgb = hsv_to_rgb_pixel(src[0], src[1], src[2]);
        std::copy(rgb.begin(), rgb.end(), out.pixel(i).begin());
    }
    return out;
}

[[nodiscard]] inline OdPatch rgb_to_od(const Patch& p) {
    OdPatch out(p.height(), p.width());
    auto src = p.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = intensity_to_od(src[i]);
    }
    return out;
}

[[nodiscard]] inline Patch od_to_rgb(const OdPatch& p) {
    Patch out(p.height(), p.width());
    auto src = p.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = od_to_intensity(src[i]);
    }
    return out;
}

/// c = od * M^-1 per pixel.
[[nodiscard]] inline ConcentrationPatch deconvolve(const OdPatch& p, const StainMatrix& m) {
    const Eigen::Matrix3d inv = m.inverse();
    ConcentrationPatch out(p.height(), p.width());
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto od = p.pixel(i);
        auto c = out.pixel(i);
        for (int j = 0; j < 3; ++j) {
            c[j] = static_cast<float>(od[0] * inv(0, j) + od[1] * inv(1, j) + od[2] * inv(2, j));
        }
    }
    return out;
}

/// od = c * M per pixel, clipped to [0, kOdMax].
[[nodiscard]] inline OdPatch reconvolve(const ConcentrationPatch& c, const StainMatrix& m) {
    const Eigen::Matrix3d& mm = m.matrix();
    OdPatch out(c.height(), c.width());
    const double odmax = kOdMax;
    for (std::size_t i = 0; i < c.pixel_count(); ++i) {
        auto ci = c.pixel(i);
        auto od = out.pixel(i);
        for (int k = 0; k < 3; ++k) {
            const double v = ci[0] * mm(0, k) + ci[1] * mm(1, k) + ci[2] * mm(2, k);
            od[k] = static_cast<float>(std::clamp(v, 0.0, odmax));
        }
    }
    return out;
}

/// Rec.601 luminance replicated to three channels.
[[nodiscard]] inline Patch rgb_to_gray(const Patch& p) {
    Patch out(p.height(), p.width());
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto src = p.pixel(i);
        const double y = kRec601Weights[0] * src[0] + kRec601Weights[1] * src[1] + kRec601Weights[2] * src[2];
        const float g = static_cast<float>(std::clamp(y, 0.0, 1.0));
        auto dst = out.pixel(i);
        dst[0] = dst[1] = dst[2] = g;
    }
    return out;
}

} // namespace stainkit

#endif
