#ifndef STAINKIT_IO_TILED_HPP
#define STAINKIT_IO_TILED_HPP

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "../error.hpp"
#include "../image.hpp"
#include "json.hpp"
#include "png.hpp"

namespace stainkit::io {

inline constexpr std::size_t kDefaultTileSize = 1024;
inline constexpr std::string_view kTileManifest = "manifest.json";

struct TileRect {
    std::size_t row, col;
    std::size_t y, x, h, w;
};

/// Row-major partition of a width x height image; edge tiles are smaller.
struct TileGrid {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t tile_size = kDefaultTileSize;

    [[nodiscard]] std::size_t rows() const { return (height + tile_size - 1) / tile_size; }
    [[nodiscard]] std::size_t cols() const { return (width + tile_size - 1) / tile_size; }
    [[nodiscard]] std::size_t count() const { return rows() * cols(); }

    [[nodiscard]] TileRect rect(std::size_t index) const {
        const std::size_t r = index / cols();
        const std::size_t c = index % cols();
        const std::size_t y = r * tile_size;
        const std::size_t x = c * tile_size;
        return {r, c, y, x, std::min(tile_size, height - y), std::min(tile_size, width - x)};
    }

    void validate() const {
        if (width == 0 || height == 0 || tile_size == 0) {
            throw Error(ErrorKind::InvalidConfig, "tiled image dimensions and tile size must be positive");
        }
    }

    friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

inline std::string tile_name(std::size_t row, std::size_t col) {
    return "tile_" + std::to_string(row) + "_" + std::to_string(col) + ".png";
}

inline json to_json(const TileGrid& g) {
    return {{"width", g.width}, {"height", g.height}, {"tile_size", g.tile_size}, {"rows", g.rows()},
            {"cols", g.cols()}};
}

inline void write_tile_manifest(const fs::path& dir, const TileGrid& g) {
    write_text(dir / kTileManifest, to_json(g).dump(2) + "\n");
}

inline TileGrid read_tile_manifest(const fs::path& dir) {
    const fs::path path = dir / kTileManifest;
    const json j = parse_json(read_text(path), path.string());
    detail::require_keys(j, {"width", "height", "tile_size", "rows", "cols"}, "tile manifest");
    TileGrid g{detail::get<std::size_t>(j, "width", "tile manifest"), detail::get<std::size_t>(j, "height", "tile manifest"),
               detail::get<std::size_t>(j, "tile_size", "tile manifest")};
    g.validate();
    if (detail::get<std::size_t>(j, "rows", "tile manifest") != g.rows() ||
        detail::get<std::size_t>(j, "cols", "tile manifest") != g.cols()) {
        throw Error(ErrorKind::InvalidConfig, path.string() + ": rows/cols disagree with the image size");
    }
    return g;
}

inline Patch crop(const Patch& p, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
    Patch out(h, w);
    for (std::size_t r = 0; r < h; ++r) {
        const auto src = p.data().subspan(((y + r) * p.width() + x) * 3, w * 3);
        std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * w * 3));
    }
    return out;
}

inline void paste(Patch& dst, const Patch& src, std::size_t y, std::size_t x) {
    for (std::size_t r = 0; r < src.height(); ++r) {
        const auto row = src.data().subspan(r * src.width() * 3, src.width() * 3);
        std::copy(row.begin(), row.end(), dst.data().begin() + static_cast<std::ptrdiff_t>(((y + r) * dst.width() + x) * 3));
    }
}

/// Splits an in-memory image into a tile directory.
inline void write_tiled(const fs::path& dir, const Patch& image, std::size_t tile_size) {
    const TileGrid g{image.width(), image.height(), tile_size};
    g.validate();
    fs::create_directories(dir);
    for (std::size_t i = 0; i < g.count(); ++i) {
        const TileRect t = g.rect(i);
        write_png(dir / tile_name(t.row, t.col), crop(image, t.y, t.x, t.h, t.w));
    }
    write_tile_manifest(dir, g);
}

inline Patch read_tiled(const fs::path& dir) {
    const TileGrid g = read_tile_manifest(dir);
    Patch image(g.height, g.width);
    for (std::size_t i = 0; i < g.count(); ++i) {
        const TileRect t = g.rect(i);
        const Patch tile = read_png(dir / tile_name(t.row, t.col));
        if (tile.height() != t.h || tile.width() != t.w) {
            throw Error(ErrorKind::Io, tile_name(t.row, t.col) + " does not match the manifest");
        }
        paste(image, tile, t.y, t.x);
    }
    return image;
}

/// Counts resident tile-sized buffers. Tile bytes are those of a full
/// float tile; smaller edge tiles and 8-bit row bands count pro rata.
class TileAccounting {
public:
    explicit TileAccounting(std::size_t tile_size = kDefaultTileSize)
        : tile_bytes_(tile_size * tile_size * 3 * sizeof(float)) {}

    void acquire(std::size_t bytes) {
        const std::size_t now = resident_.fetch_add(bytes) + bytes;
        std::size_t peak = peak_.load();
        while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
        }
    }
    void release(std::size_t bytes) { resident_.fetch_sub(bytes); }

    [[nodiscard]] std::size_t tile_bytes() const noexcept { return tile_bytes_; }
    [[nodiscard]] std::size_t resident_bytes() const noexcept { return resident_.load(); }
    [[nodiscard]] std::size_t peak_bytes() const noexcept { return peak_.load(); }
    [[nodiscard]] double peak_tiles() const noexcept {
        return static_cast<double>(peak_.load()) / static_cast<double>(tile_bytes_);
    }

private:
    std::size_t tile_bytes_;
    std::atomic<std::size_t> resident_{0};
    std::atomic<std::size_t> peak_{0};
};

/// Accounts a buffer for as long as it lives.
class TileLease {
public:
    TileLease(TileAccounting& a, std::size_t bytes) : acct_(&a), bytes_(bytes) { acct_->acquire(bytes_); }
    TileLease(const TileLease&) = delete;
    TileLease& operator=(const TileLease&) = delete;
    TileLease(TileLease&& o) noexcept : acct_(std::exchange(o.acct_, nullptr)), bytes_(o.bytes_) {}
    ~TileLease() {
        if (acct_) acct_->release(bytes_);
    }

private:
    TileAccounting* acct_;
    std::size_t bytes_;
};

inline std::size_t patch_bytes(const Patch& p) { return p.data().size() * sizeof(float); }

using TileFn = std::function<Patch(const Patch&)>;

namespace detail {

struct QueuedTile {
    TileRect rect;
    Patch patch;
    TileLease lease;
};

/// Bounded multi-consumer queue; close() wakes every waiter.
class TileQueue {
public:
    explicit TileQueue(std::size_t capacity) : capacity_(capacity) {}

    bool push(QueuedTile t) {
        std::unique_lock lock(m_);
        not_full_.wait(lock, [&] { return q_.size() < capacity_ || closed_; });
        if (closed_) return false;
        q_.push_back(std::move(t));
        not_empty_.notify_one();
        return true;
    }

    std::optional<QueuedTile> pop() {
        std::unique_lock lock(m_);
        not_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return std::nullopt;
        QueuedTile t = std::move(q_.front());
        q_.pop_front();
        not_full_.notify_one();
        return t;
    }

    void close() {
        std::lock_guard lock(m_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    /// Drops queued tiles and refuses new ones.
    void abort() {
        std::lock_guard lock(m_);
        closed_ = true;
        q_.clear();
        not_empty_.notify_all();
        not_full_.notify_all();
    }

private:
    std::size_t capacity_;
    std::deque<QueuedTile> q_;
    bool closed_ = false;
    std::mutex m_;
    std::condition_variable not_full_;
    std::condition_variable not_empty_;
};

} // namespace detail

/// True for a tile directory (holding a manifest), false for a single PNG.
inline bool is_tile_directory(const fs::path& input) { return fs::is_directory(input); }

inline TileGrid probe_tiled(const fs::path& input, std::size_t tile_size) {
    if (is_tile_directory(input)) {
        return read_tile_manifest(input);
    }
    PngRowReader reader(input);
    TileGrid g{reader.width(), reader.height(), tile_size};
    g.validate();
    return g;
}

/// Streams every tile of `input` through `fn` on `workers` threads and
/// writes the results as a tile directory under `out_dir`. A tile directory
/// input keeps its own tile size. A single PNG is decoded one tile-high
/// band at a time by the calling thread and its tiles are queued to the
/// workers. Tiles are written under their grid position, so the output
/// does not depend on scheduling.
inline TileGrid process_tiled(const fs::path& input, const fs::path& out_dir, std::size_t tile_size,
                              const TileFn& fn, std::size_t workers, TileAccounting* accounting = nullptr) {
    const TileGrid g = probe_tiled(input, tile_size);
    TileAccounting local(g.tile_size);
    TileAccounting& acct = accounting ? *accounting : local;
    workers = std::max<std::size_t>(1, workers);
    fs::create_directories(out_dir);

    std::exception_ptr error;
    std::mutex error_mutex;
    auto fail = [&](std::exception_ptr e) {
        std::lock_guard lock(error_mutex);
        if (!error) error = e;
    };
    auto finish = [&](const TileRect& t, const Patch& in) {
        Patch out = fn(in);
        TileLease lease(acct, patch_bytes(out));
        if (out.height() != t.h || out.width() != t.w) {
            throw Error(ErrorKind::ShapeMismatch, "tile function changed the tile size");
        }
        write_png(out_dir / tile_name(t.row, t.col), out);
    };

    if (is_tile_directory(input)) {
        std::atomic<std::size_t> next{0};
        std::atomic<bool> stop{false};
        auto body = [&] {
            for (std::size_t i; !stop && (i = next.fetch_add(1)) < g.count();) {
                try {
                    const TileRect t = g.rect(i);
                    Patch in = read_png(input / tile_name(t.row, t.col));
                    TileLease lease(acct, patch_bytes(in));
                    if (in.height() != t.h || in.width() != t.w) {
                        throw Error(ErrorKind::Io, tile_name(t.row, t.col) + " does not match the manifest");
                    }
                    finish(t, in);
                } catch (...) {
                    fail(std::current_exception());
                    stop = true;
                }
            }
        };
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
        pool.clear();
    } else {
        detail::TileQueue queue(workers);
        auto body = [&] {
            while (auto item = queue.pop()) {
                try {
                    finish(item->rect, item->patch);
                } catch (...) {
                    fail(std::current_exception());
                    queue.abort();
                }
            }
        };
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
        try {
            PngRowReader reader(input);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const TileRect first = g.rect(r * g.cols());
                std::vector<std::uint8_t> band(first.h * g.width * 3);
                TileLease band_lease(acct, band.size());
                for (std::size_t y = 0; y < first.h; ++y) {
                    reader.read_row(band.data() + y * g.width * 3);
                }
                bool open = true;
                for (std::size_t c = 0; c < g.cols() && open; ++c) {
                    const TileRect t = g.rect(r * g.cols() + c);
                    Patch tile(t.h, t.w);
                    for (std::size_t y = 0; y < t.h; ++y) {
                        const std::uint8_t* src = band.data() + (y * g.width + t.x) * 3;
                        auto dst = tile.data().subspan(y * t.w * 3, t.w * 3);
                        std::transform(src, src + t.w * 3, dst.begin(), from_byte);
                    }
                    TileLease lease(acct, patch_bytes(tile));
                    open = queue.push({t, std::move(tile), std::move(lease)});
                }
                if (!open) break;
            }
        } catch (...) {
            fail(std::current_exception());
            queue.abort();
        }
        queue.close();
        pool.clear();
    }
    if (error) std::rethrow_exception(error);
    write_tile_manifest(out_dir, g);
    return g;
}

/// Decodes every tile into memory, in grid order.
inline std::vector<Patch> load_tiles(const fs::path& input, std::size_t tile_size, TileGrid* grid = nullptr) {
    const TileGrid g = probe_tiled(input, tile_size);
    if (grid) *grid = g;
    std::vector<Patch> tiles;
    if (is_tile_directory(input)) {
        for (std::size_t i = 0; i < g.count(); ++i) {
            const TileRect t = g.rect(i);
            tiles.push_back(read_png(input / tile_name(t.row, t.col)));
        }
        return tiles;
    }
    const Patch image = read_png(input);
    for (std::size_t i = 0; i < g.count(); ++i) {
        const TileRect t = g.rect(i);
        tiles.push_back(crop(image, t.y, t.x, t.h, t.w));
    }
    return tiles;
}

/// Up to `k` tiles evenly spaced in grid order, for fitting before a
/// tiled apply. A single PNG is streamed, keeping only the chosen tiles.
inline std::vector<Patch> sample_tiles(const fs::path& input, std::size_t tile_size, std::size_t k) {
    const TileGrid g = probe_tiled(input, tile_size);
    k = std::clamp<std::size_t>(k, 1, g.count());
    std::vector<std::size_t> pick;
    for (std::size_t i = 0; i < k; ++i) {
        pick.push_back(k == 1 ? 0 : (i * (g.count() - 1) + (k - 1) / 2) / (k - 1));
    }
    pick.erase(std::unique(pick.begin(), pick.end()), pick.end());
    std::vector<Patch> tiles;
    if (is_tile_directory(input)) {
        for (std::size_t i : pick) {
            const TileRect t = g.rect(i);
            tiles.push_back(read_png(input / tile_name(t.row, t.col)));
        }
        return tiles;
    }
    PngRowReader reader(input);
    std::vector<std::uint8_t> row(g.width * 3);
    std::size_t next = 0;
    for (std::size_t r = 0; r < g.rows() && next < pick.size(); ++r) {
        std::vector<std::size_t> here;
        for (std::size_t j = next; j < pick.size() && pick[j] / g.cols() == r; ++j) here.push_back(pick[j]);
        std::vector<Patch> band;
        for (std::size_t i : here) band.emplace_back(g.rect(i).h, g.rect(i).w);
        const std::size_t bh = g.rect(r * g.cols()).h;
        for (std::size_t y = 0; y < bh; ++y) {
            reader.read_row(row.data());
            for (std::size_t j = 0; j < here.size(); ++j) {
                const TileRect t = g.rect(here[j]);
                auto dst = band[j].data().subspan(y * t.w * 3, t.w * 3);
                std::transform(row.begin() + static_cast<std::ptrdiff_t>(t.x * 3),
                               row.begin() + static_cast<std::ptrdiff_t>((t.x + t.w) * 3), dst.begin(), from_byte);
            }
        }
        for (auto& b : band) tiles.push_back(std::move(b));
        next += here.size();
    }
    return tiles;
}

} // namespace stainkit::io

#endif
