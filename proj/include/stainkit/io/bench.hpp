#ifndef STAINKIT_IO_BENCH_HPP
#define STAINKIT_IO_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "../error.hpp"
#include "../image.hpp"
#include "csv.hpp"
#include "parallel.hpp"
#include "tiled.hpp"

namespace stainkit::io {

inline constexpr double kWsiPixels = 50000.0 * 50000.0;

struct BenchReport {
    std::string method;
    std::string phase;  // "fit" or "apply"
    std::size_t pixels = 0;
    double seconds = 0.0;
    double mpix_per_s = 0.0;
    std::size_t threads = 1;
    /// seconds scaled linearly to a 50000 x 50000 image.
    double extrapolated_wsi_seconds = 0.0;
};

struct BenchMethod {
    std::string name;
    /// Builds the apply function from the tiles; timed as the fit phase
    /// when `has_fit` is set.
    std::function<TileFn(std::span<const Patch>)> prepare;
    bool has_fit = false;
};

struct BenchOptions {
    std::size_t threads = 1;
    std::size_t runs = 3;
    std::size_t warmup_tiles = 3;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline BenchReport make_report(std::string method, std::string phase, std::size_t pixels, double seconds,
                               std::size_t threads) {
    BenchReport r{std::move(method), std::move(phase), pixels, seconds, 0.0, threads, 0.0};
    r.mpix_per_s = seconds > 0.0 ? static_cast<double>(pixels) / seconds / 1e6 : 0.0;
    r.extrapolated_wsi_seconds = seconds * kWsiPixels / static_cast<double>(pixels);
    return r;
}

} // namespace detail

/// Times each method over the same pre-decoded tiles, so no I/O is
/// measured. The first `warmup_tiles` tiles run untimed before every timed
/// pass; the apply phase covers the remaining tiles, the fit phase all of
/// them. Each phase reports the median of `runs` passes.
inline std::vector<BenchReport> run_bench(std::span<const Patch> tiles, std::span<const BenchMethod> methods,
                                          const BenchOptions& opt) {
    if (tiles.size() <= opt.warmup_tiles) {
        throw Error(ErrorKind::InvalidArgument, "benchmark needs more tiles than the warmup count");
    }
    if (opt.runs == 0 || opt.threads == 0) {
        throw Error(ErrorKind::InvalidConfig, "benchmark runs and threads must be positive");
    }
    using clock = std::chrono::steady_clock;
    const auto timed = tiles.subspan(opt.warmup_tiles);
    std::size_t timed_pixels = 0;
    std::size_t all_pixels = 0;
    for (const auto& t : tiles) all_pixels += t.pixel_count();
    for (const auto& t : timed) timed_pixels += t.pixel_count();

    std::vector<BenchReport> reports;
    std::vector<Patch> sink(timed.size());
    for (const auto& m : methods) {
        TileFn fn;
        std::vector<double> fit_times;
        for (std::size_t r = 0; r < (m.has_fit ? opt.runs : 1); ++r) {
            const auto t0 = clock::now();
            fn = m.prepare(tiles);
            fit_times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
        }
        if (m.has_fit) {
            reports.push_back(detail::make_report(m.name, "fit", all_pixels, detail::median(fit_times), 1));
        }
        std::vector<double> apply_times;
        for (std::size_t r = 0; r < opt.runs; ++r) {
            for (std::size_t w = 0; w < opt.warmup_tiles; ++w) (void)fn(tiles[w]);
            const auto t0 = clock::now();
            parallel_for(timed.size(), opt.threads, [&](std::size_t i) { sink[i] = fn(timed[i]); });
            apply_times.push_back(std::chrono::duration<double>(clock::now() - t0).count());
        }
        reports.push_back(detail::make_report(m.name, "apply", timed_pixels, detail::median(apply_times), opt.threads));
    }
    return reports;
}

inline std::string bench_csv(std::span<const BenchReport> reports) {
    std::vector<CsvRow> rows;
    for (const auto& r : reports) {
        rows.push_back({r.method, r.phase, fmt(r.pixels), fmt(r.seconds), fmt(r.mpix_per_s), fmt(r.threads),
                        fmt(r.extrapolated_wsi_seconds)});
    }
    return csv_text({"method", "phase", "pixels", "seconds", "mpix_per_s", "threads", "extrapolated_50000x50000_seconds"},
                    rows);
}

} // namespace stainkit::io

#endif
