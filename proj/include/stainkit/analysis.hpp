#ifndef STAINKIT_ANALYSIS_HPP
#define STAINKIT_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "colorspace.hpp"
#include "error.hpp"
#include "image.hpp"

namespace stainkit {

struct HsvStats {
    std::string dataset_id;
    double mean_hue = 0.0;
    double std_hue = 0.0;
    double mean_sat = 0.0;
    double std_sat = 0.0;
    std::uint64_t pixel_count = 0;
};

/// Streaming, mergeable hue/saturation accumulator. Hue is treated as an
/// angle (unit-vector mean); saturation as a plain scalar (Welford).
class HsvAccumulator {
public:
    void add_pixel(double hue, double sat) {
        const double a = 2.0 * std::numbers::pi * hue;
        sum_cos_ += std::cos(a);
        sum_sin_ += std::sin(a);
        ++n_;
        const double d = sat - mean_sat_;
        mean_sat_ += d / static_cast<double>(n_);
        m2_sat_ += d * (sat - mean_sat_);
    }

    void add(const Patch& p) {
        for (std::size_t i = 0; i < p.pixel_count(); ++i) {
            auto px = p.pixel(i);
            const auto hsv = rgb_to_hsv_pixel(px[0], px[1], px[2]);
            add_pixel(hsv[0], hsv[1]);
        }
    }

    void merge(const HsvAccumulator& o) {
        if (o.n_ == 0) {
            return;
        }
        const double n = static_cast<double>(n_ + o.n_);
        const double d = o.mean_sat_ - mean_sat_;
        m2_sat_ += o.m2_sat_ + d * d * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
        mean_sat_ += d * static_cast<double>(o.n_) / n;
        sum_cos_ += o.sum_cos_;
        sum_sin_ += o.sum_sin_;
        n_ += o.n_;
    }

    [[nodiscard]] std::uint64_t count() const noexcept { return n_; }

    [[nodiscard]] HsvStats finish(std::string id) const {
        if (n_ == 0) {
            throw Error(ErrorKind::EmptyDataset, "no pixels in dataset '" + id + "'");
        }
        const double n = static_cast<double>(n_);
        const double c = sum_cos_ / n;
        const double s = sum_sin_ / n;
        const double r = std::min(1.0, std::hypot(c, s));
        HsvStats st;
        st.dataset_id = std::move(id);
        double h = std::atan2(s, c) / (2.0 * std::numbers::pi);
        h -= std::floor(h);
        st.mean_hue = h >= 1.0 ? 0.0 : h;
        st.std_hue = r > 0.0 ? std::sqrt(-2.0 * std::log(r)) / (2.0 * std::numbers::pi) : 0.0;
        st.mean_sat = mean_sat_;
        st.std_sat = std::sqrt(std::max(0.0, m2_sat_ / n));
        st.pixel_count = n_;
        return st;
    }

private:
    std::uint64_t n_ = 0;
    double sum_cos_ = 0.0;
    double sum_sin_ = 0.0;
    double mean_sat_ = 0.0;
    double m2_sat_ = 0.0;
};

inline HsvStats hsv_stats(std::span<const Patch> patches, std::string id) {
    if (patches.empty()) {
        throw Error(ErrorKind::EmptyDataset, "dataset '" + id + "' has no patches");
    }
    HsvAccumulator acc;
    for (const auto& p : patches) {
        acc.add(p);
    }
    return acc.finish(std::move(id));
}

/// Distance between (mean_hue, mean_sat) points with wrap-around hue.
inline double hue_sat_distance(const HsvStats& a, const HsvStats& b) {
    double dh = std::abs(a.mean_hue - b.mean_hue);
    dh = std::min(dh, 1.0 - dh);
    return std::hypot(dh, a.mean_sat - b.mean_sat);
}

inline double spread(std::span<const HsvStats> stats) {
    if (stats.size() < 2) {
        throw Error(ErrorKind::TooFewDatasets, "spread needs at least two datasets");
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        for (std::size_t j = i + 1; j < stats.size(); ++j) {
            sum += hue_sat_distance(stats[i], stats[j]);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

/// scores[repetition][method][dataset]; higher is better.
struct ScoreTable {
    std::vector<std::string> methods;
    std::vector<std::string> datasets;
    std::vector<std::vector<std::vector<double>>> scores;

    void validate() const {
        if (methods.size() < 2) {
            throw Error(ErrorKind::InvalidArgument, "ranking needs at least two methods");
        }
        if (datasets.empty() || scores.empty()) {
            throw Error(ErrorKind::InvalidArgument, "score table is empty");
        }
        for (const auto& rep : scores) {
            if (rep.size() != methods.size()) {
                throw Error(ErrorKind::ShapeMismatch, "score table is not rectangular");
            }
            for (const auto& row : rep) {
                if (row.size() != datasets.size()) {
                    throw Error(ErrorKind::ShapeMismatch, "score table is not rectangular");
                }
                for (double v : row) {
                    if (!std::isfinite(v)) {
                        throw Error(ErrorKind::InvalidArgument, "score table has a missing or non-finite cell");
                    }
                }
            }
        }
    }
};

struct MethodRank {
    std::string method;
    double mean_rank = 0.0;
    double std_rank = 0.0;
};

/// Ranks (1 = largest) with ties sharing their mean rank.
inline std::vector<double> rank_descending(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    std::vector<double> rank(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            rank[order[k]] = shared;
        }
        i = j + 1;
    }
    return rank;
}

inline std::vector<MethodRank> aggregate_ranking(const ScoreTable& t) {
    t.validate();
    const std::size_t nm = t.methods.size();
    const std::size_t nd = t.datasets.size();
    std::vector<std::vector<double>> global(nm);
    for (const auto& rep : t.scores) {
        std::vector<double> sum(nm, 0.0);
        std::vector<double> column(nm);
        for (std::size_t d = 0; d < nd; ++d) {
            for (std::size_t m = 0; m < nm; ++m) {
                column[m] = rep[m][d];
            }
            const auto r = rank_descending(column);
            for (std::size_t m = 0; m < nm; ++m) {
                sum[m] += r[m];
            }
        }
        for (std::size_t m = 0; m < nm; ++m) {
            global[m].push_back(sum[m] / static_cast<double>(nd));
        }
    }
    std::vector<MethodRank> out;
    for (std::size_t m = 0; m < nm; ++m) {
        const auto& g = global[m];
        const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
        double var = 0.0;
        for (double x : g) {
            var += (x - mean) * (x - mean);
        }
        out.push_back({t.methods[m], mean, std::sqrt(var / static_cast<double>(g.size()))});
    }
    return out;
}

} // namespace stainkit

#endif
