#ifndef STAINKIT_NORMALIZE_HPP
#define STAINKIT_NORMALIZE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "colorspace.hpp"
#include "error.hpp"
#include "image.hpp"

namespace stainkit {

enum class NormMethod { Identity, Grayscale, Deconv, Lut };

constexpr std::string_view to_string(NormMethod m) {
    switch (m) {
    case NormMethod::Identity: return "identity";
    case NormMethod::Grayscale: return "grayscale";
    case NormMethod::Deconv: return "deconv";
    case NormMethod::Lut: return "lut";
    }
    return "unknown";
}

inline NormMethod norm_method_from_string(std::string_view s) {
    if (s == "identity") return NormMethod::Identity;
    if (s == "grayscale" || s == "gray") return NormMethod::Grayscale;
    if (s == "deconv" || s == "macenko") return NormMethod::Deconv;
    if (s == "lut") return NormMethod::Lut;
    throw Error(ErrorKind::InvalidConfig, "unknown normalization method '" + std::string(s) + "'");
}

inline constexpr std::size_t kMinTissuePixels = 1000;

struct FitOptions {
    double od_threshold = 0.15;     // tissue when mean OD >= this
    double angle_percentile = 1.0;  // robust extremes at alpha and 100 - alpha
    double conc_percentile = 99.0;
    std::size_t sample_cap = 1'000'000;
    /// Degenerate when the second eigenvalue of the mean OD outer product
    /// (the second singular value of that scatter matrix) is below this.
    double degenerate_tolerance = 1e-8;

    void validate() const {
        if (!(od_threshold > 0.0 && od_threshold < kOdMax)) {
            throw Error(ErrorKind::InvalidConfig, "od_threshold must lie in (0, OD_MAX)");
        }
        if (!(angle_percentile > 0.0 && angle_percentile < 50.0)) {
            throw Error(ErrorKind::InvalidConfig, "angle_percentile must lie in (0, 50)");
        }
        if (!(conc_percentile > 50.0 && conc_percentile <= 100.0)) {
            throw Error(ErrorKind::InvalidConfig, "conc_percentile must lie in (50, 100]");
        }
        if (sample_cap == 0) {
            throw Error(ErrorKind::InvalidConfig, "sample_cap must be positive");
        }
    }
};

struct ProfileMetadata {
    std::string template_id;
    std::string fit_date;

    friend bool operator==(const ProfileMetadata&, const ProfileMetadata&) = default;
};

using Lut = std::array<std::uint8_t, 256>;

struct NormProfile {
    NormMethod method = NormMethod::Identity;
    StainMatrix stain_matrix = StainMatrix::ruifrok();
    std::array<double, 2> conc_scale{1.0, 1.0};
    std::array<Lut, 3> luts = identity_luts();
    ProfileMetadata metadata;

    static std::array<Lut, 3> identity_luts() {
        std::array<Lut, 3> l{};
        for (auto& ch : l) {
            for (int b = 0; b < 256; ++b) {
                ch[b] = static_cast<std::uint8_t>(b);
            }
        }
        return l;
    }

    void validate() const {
        for (const auto& ch : luts) {
            if (!std::is_sorted(ch.begin(), ch.end())) {
                throw Error(ErrorKind::InvalidConfig, "LUT must be monotone non-decreasing");
            }
        }
        if (!(conc_scale[0] > 0.0 && conc_scale[1] > 0.0)) {
            throw Error(ErrorKind::InvalidConfig, "concentration scale must be positive");
        }
        for (int r = 0; r < 3; ++r) {
            if (std::abs(stain_matrix.matrix().row(r).norm() - 1.0) > 1e-6) {
                throw Error(ErrorKind::InvalidConfig, "stain vectors must be unit norm");
            }
        }
        if (method == NormMethod::Deconv || method == NormMethod::Lut) {
            (void)stain_matrix.inverse();
        }
    }

    friend bool operator==(const NormProfile&, const NormProfile&) = default;
};

namespace detail {

/// Linear-interpolated percentile (q in [0, 100]); sorts in place.
inline double percentile(std::vector<double>& v, double q) {
    if (v.empty()) {
        throw Error(ErrorKind::InvalidArgument, "percentile of empty sample");
    }
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct OdSample {
    std::vector<Eigen::Vector3d> tissue;
    std::vector<Eigen::Vector3d> all;
};

/// Deterministic stride sample of at most `cap` pixels across the set in
/// order, split into tissue (mean OD >= threshold) and everything.
inline OdSample sample_od(std::span<const Patch> patches, std::size_t cap, double threshold, bool keep_all) {
    std::size_t total = 0;
    for (const auto& p : patches) {
        total += p.pixel_count();
    }
    OdSample s;
    if (total == 0) {
        return s;
    }
    const std::size_t stride = std::max<std::size_t>(1, (total + cap - 1) / cap);
    std::size_t global = 0;
    std::size_t next = 0;
    for (const auto& p : patches) {
        const std::size_t n = p.pixel_count();
        while (next < global + n) {
            auto px = p.pixel(next - global);
            Eigen::Vector3d od(intensity_to_od(px[0]), intensity_to_od(px[1]), intensity_to_od(px[2]));
            if (od.mean() >= threshold) {
                s.tissue.push_back(od);
            }
            if (keep_all) {
                s.all.push_back(od);
            }
            next += stride;
        }
        global += n;
    }
    return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Deconvolution-based (Macenko)

/// Estimates H and E stain vectors from the plane of the two leading
/// singular directions of the tissue OD cloud, taking the robust extreme
/// angles (alpha and 100 - alpha percentiles) in that plane. H is the vector
/// with the larger blue OD component; the third row is normalize(H x E).
inline NormProfile fit_macenko(std::span<const Patch> patches, const FitOptions& opts = {}) {
    opts.validate();
    auto sample = detail::sample_od(patches, opts.sample_cap, opts.od_threshold, false);
    const auto& od = sample.tissue;
    if (od.size() < kMinTissuePixels) {
        throw Error(ErrorKind::InsufficientTissue, "need at least 1000 tissue pixels, found " + std::to_string(od.size()));
    }
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& v : od) {
        scatter.noalias() += v * v.transpose();
    }
    scatter /= static_cast<double>(od.size());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    const Eigen::Vector3d lambda = eig.eigenvalues();  // ascending
    if (lambda(1) < opts.degenerate_tolerance) {
        throw Error(ErrorKind::DegeneratePlane, "OD cloud is rank one (second singular value " +
                                                    std::to_string(lambda(1)) + ")");
    }
    Eigen::Vector3d e1 = eig.eigenvectors().col(2);
    Eigen::Vector3d e2 = eig.eigenvectors().col(1);
    if (e1.sum() < 0.0) e1 = -e1;
    if (e2.sum() < 0.0) e2 = -e2;

    std::vector<double> angle(od.size());
    for (std::size_t i = 0; i < od.size(); ++i) {
        angle[i] = std::atan2(od[i].dot(e2), od[i].dot(e1));
    }
    std::vector<double> work = angle;
    const double phi_min = detail::percentile(work, opts.angle_percentile);
    const double phi_max = detail::percentile(work, 100.0 - opts.angle_percentile);
    Eigen::Vector3d a = (std::cos(phi_min) * e1 + std::sin(phi_min) * e2).normalized();
    Eigen::Vector3d b = (std::cos(phi_max) * e1 + std::sin(phi_max) * e2).normalized();
    if (a.sum() < 0.0) a = -a;
    if (b.sum() < 0.0) b = -b;
    const Eigen::Vector3d& h = a(2) >= b(2) ? a : b;
    const Eigen::Vector3d& e = a(2) >= b(2) ? b : a;

    NormProfile profile;
    profile.method = NormMethod::Deconv;
    profile.stain_matrix = StainMatrix::from_two({h(0), h(1), h(2)}, {e(0), e(1), e(2)});
    const Eigen::Matrix3d inv = profile.stain_matrix.inverse();
    std::vector<double> ch(od.size());
    std::vector<double> ce(od.size());
    for (std::size_t i = 0; i < od.size(); ++i) {
        const Eigen::RowVector3d c = od[i].transpose() * inv;
        ch[i] = c(0);
        ce[i] = c(1);
    }
    profile.conc_scale = {detail::percentile(ch, opts.conc_percentile), detail::percentile(ce, opts.conc_percentile)};
    if (!(profile.conc_scale[0] > 0.0 && profile.conc_scale[1] > 0.0)) {
        throw Error(ErrorKind::DegeneratePlane, "non-positive stain concentration scale");
    }
    return profile;
}

/// Precomputed source-to-template mapping; safe to share across threads.
class MacenkoNormalizer {
public:
    MacenkoNormalizer(const NormProfile& target, const NormProfile& source) {
        if (target.method != NormMethod::Deconv || source.method != NormMethod::Deconv) {
            throw Error(ErrorKind::ProfileMismatch, "deconvolution normalization needs two Deconv profiles");
        }
        const Eigen::Matrix3d inv = source.stain_matrix.inverse();
        Eigen::Matrix3d scale = Eigen::Matrix3d::Identity();
        scale(0, 0) = target.conc_scale[0] / source.conc_scale[0];
        scale(1, 1) = target.conc_scale[1] / source.conc_scale[1];
        // od_out = od_in * inv(M_src) * diag(scale) * M_tgt
        transfer_ = inv * scale * target.stain_matrix.matrix();
    }

    [[nodiscard]] Patch operator()(const Patch& p) const {
        Patch out(p.height(), p.width());
        const double odmax = kOdMax;
        for (std::size_t i = 0; i < p.pixel_count(); ++i) {
            auto src = p.pixel(i);
            const double o0 = intensity_to_od(src[0]);
            const double o1 = intensity_to_od(src[1]);
            const double o2 = intensity_to_od(src[2]);
            auto dst = out.pixel(i);
            for (int k = 0; k < 3; ++k) {
                const double v = o0 * transfer_(0, k) + o1 * transfer_(1, k) + o2 * transfer_(2, k);
                dst[k] = od_to_intensity(static_cast<float>(std::clamp(v, 0.0, odmax)));
            }
        }
        return out;
    }

private:
    Eigen::Matrix3d transfer_;
};

/// Deconvolves with the source stains, rescales H and E by the template to
/// source concentration ratio, and reconvolves with the template stains.
inline Patch apply_macenko(const Patch& p, const NormProfile& target, const NormProfile& source) {
    return MacenkoNormalizer(target, source)(p);
}

// ---------------------------------------------------------------------------
// LUT-based

namespace detail {

/// Monotone piecewise-linear map through matched quantiles, extended
/// beyond the ends by a constant offset.
class QuantileTransfer {
public:
    static constexpr int kQuantiles = 1001;

    QuantileTransfer(std::vector<double> source, std::vector<double> target) {
        std::sort(source.begin(), source.end());
        std::sort(target.begin(), target.end());
        auto at = [](const std::vector<double>& v, double q) {
            const double pos = q * static_cast<double>(v.size() - 1);
            const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
            const std::size_t hi = std::min(lo + 1, v.size() - 1);
            return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
        };
        for (int i = 0; i < kQuantiles; ++i) {
            const double q = static_cast<double>(i) / (kQuantiles - 1);
            const double xs = at(source, q);
            const double xt = at(target, q);
            if (!xs_.empty() && xs == xs_.back()) {
                // flat source run: keep the mean of its template quantiles
                const double n = static_cast<double>(++run_);
                ys_.back() += (xt - ys_.back()) / n;
                continue;
            }
            run_ = 1;
            xs_.push_back(xs);
            ys_.push_back(xt);
        }
        // averaging a flat run can break monotonicity against the next knot
        for (std::size_t i = 1; i < ys_.size(); ++i) {
            ys_[i] = std::max(ys_[i], ys_[i - 1]);
        }
    }

    [[nodiscard]] double operator()(double x) const {
        if (xs_.size() == 1) {
            return x + (ys_[0] - xs_[0]);
        }
        if (x <= xs_.front()) {
            return x + (ys_.front() - xs_.front());
        }
        if (x >= xs_.back()) {
            return x + (ys_.back() - xs_.back());
        }
        const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
        const std::size_t i = static_cast<std::size_t>(it - xs_.begin()) - 1;
        const double t = (x - xs_[i]) / (xs_[i + 1] - xs_[i]);
        return ys_[i] + t * (ys_[i + 1] - ys_[i]);
    }

private:
    std::vector<double> xs_;
    std::vector<double> ys_;
    int run_ = 1;
};

/// Weighted pool-adjacent-violators: least-squares non-decreasing fit.
inline std::vector<double> isotonic(const std::vector<double>& y, const std::vector<double>& w) {
    struct Block {
        double sum;
        double weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    for (std::size_t i = 0; i < y.size(); ++i) {
        blocks.push_back({y[i] * w[i], w[i], 1});
        while (blocks.size() > 1) {
            const Block& b = blocks.back();
            const Block& a = blocks[blocks.size() - 2];
            if (a.sum / a.weight <= b.sum / b.weight) {
                break;
            }
            Block merged{a.sum + b.sum, a.weight + b.weight, a.count + b.count};
            blocks.pop_back();
            blocks.back() = merged;
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (const Block& b : blocks) {
        out.insert(out.end(), b.count, b.sum / b.weight);
    }
    return out;
}

} // namespace detail

/// Simplified LUT matcher. Tissue pixels of both sets are deconvolved with
/// the fixed H&E-DAB matrix and each concentration channel of the source is
/// quantile-matched to the template. Every sampled source pixel is then
/// pushed through that mapping, and each RGB byte LUT is the monotone
/// least-squares fit of mapped output against source byte.
inline NormProfile fit_lut(std::span<const Patch> source, std::span<const Patch> target, const FitOptions& opts = {}) {
    opts.validate();
    const StainMatrix m = StainMatrix::ruifrok();
    const Eigen::Matrix3d inv = m.inverse();
    const Eigen::Matrix3d& mm = m.matrix();

    auto src = detail::sample_od(source, opts.sample_cap, opts.od_threshold, true);
    auto tgt = detail::sample_od(target, opts.sample_cap, opts.od_threshold, false);
    if (src.tissue.size() < kMinTissuePixels || tgt.tissue.size() < kMinTissuePixels) {
        throw Error(ErrorKind::InsufficientTissue,
                    "need at least 1000 tissue pixels in source and template (found " +
                        std::to_string(src.tissue.size()) + " and " + std::to_string(tgt.tissue.size()) + ")");
    }
    auto channel = [&](const std::vector<Eigen::Vector3d>& od, int j) {
        std::vector<double> c(od.size());
        for (std::size_t i = 0; i < od.size(); ++i) {
            c[i] = od[i].dot(inv.col(j));
        }
        return c;
    };
    std::vector<detail::QuantileTransfer> transfer;
    for (int j = 0; j < 3; ++j) {
        transfer.emplace_back(channel(src.tissue, j), channel(tgt.tissue, j));
    }

    std::array<std::array<double, 256>, 3> sum{};
    std::array<std::array<double, 256>, 3> count{};
    const double odmax = kOdMax;
    for (const auto& od : src.all) {
        Eigen::RowVector3d c = od.transpose() * inv;
        for (int j = 0; j < 3; ++j) {
            c(j) = transfer[j](c(j));
        }
        const Eigen::RowVector3d mapped = c * mm;
        for (int k = 0; k < 3; ++k) {
            const double src_i = (256.0 * std::pow(10.0, -od(k)) - 1.0) / 255.0;
            const int b = static_cast<int>(std::lround(std::clamp(src_i, 0.0, 1.0) * 255.0));
            const double out_i = od_to_intensity(static_cast<float>(std::clamp(mapped(k), 0.0, odmax)));
            sum[k][b] += out_i * 255.0;
            count[k][b] += 1.0;
        }
    }

    NormProfile profile;
    profile.method = NormMethod::Lut;
    profile.stain_matrix = m;
    for (int k = 0; k < 3; ++k) {
        std::vector<int> bins;
        std::vector<double> y;
        std::vector<double> w;
        for (int b = 0; b < 256; ++b) {
            if (count[k][b] > 0.0) {
                bins.push_back(b);
                y.push_back(sum[k][b] / count[k][b]);
                w.push_back(count[k][b]);
            }
        }
        const std::vector<double> fit = detail::isotonic(y, w);
        std::array<double, 256> full{};
        for (int b = 0; b < 256; ++b) {
            const auto it = std::lower_bound(bins.begin(), bins.end(), b);
            if (it == bins.begin()) {
                full[b] = fit.front() + (b - bins.front());
            } else if (it == bins.end()) {
                full[b] = fit.back() + (b - bins.back());
            } else if (*it == b) {
                full[b] = fit[it - bins.begin()];
            } else {
                const std::size_t hi = static_cast<std::size_t>(it - bins.begin());
                const std::size_t lo = hi - 1;
                const double t = static_cast<double>(b - bins[lo]) / (bins[hi] - bins[lo]);
                full[b] = fit[lo] + t * (fit[hi] - fit[lo]);
            }
        }
        std::uint8_t prev = 0;
        for (int b = 0; b < 256; ++b) {
            const auto v = static_cast<std::uint8_t>(std::clamp<long>(std::lround(full[b]), 0, 255));
            profile.luts[k][b] = std::max(prev, v);
            prev = profile.luts[k][b];
        }
    }
    return profile;
}

class LutNormalizer {
public:
    explicit LutNormalizer(const NormProfile& profile) {
        if (profile.method != NormMethod::Lut) {
            throw Error(ErrorKind::ProfileMismatch, "LUT normalization needs a Lut profile");
        }
        for (int k = 0; k < 3; ++k) {
            for (int b = 0; b < 256; ++b) {
                table_[k][b] = static_cast<float>(profile.luts[k][b]) / 255.0f;
            }
        }
    }

    [[nodiscard]] Patch operator()(const Patch& p) const {
        Patch out(p.height(), p.width());
        auto src = p.data();
        auto dst = out.data();
        for (std::size_t i = 0; i < src.size(); i += 3) {
            for (std::size_t k = 0; k < 3; ++k) {
                const int b = static_cast<int>(std::clamp(src[i + k], 0.0f, 1.0f) * 255.0f + 0.5f);
                dst[i + k] = table_[k][b];
            }
        }
        return out;
    }

private:
    std::array<std::array<float, 256>, 3> table_{};
};

inline Patch apply_lut(const Patch& p, const NormProfile& profile) {
    return LutNormalizer(profile)(p);
}

inline Patch normalize_gray(const Patch& p) {
    return rgb_to_gray(p);
}

inline Patch normalize_identity(const Patch& p) {
    return p;
}

} // namespace stainkit

#endif
