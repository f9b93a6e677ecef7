#ifndef STAINKIT_IO_CSV_HPP
#define STAINKIT_IO_CSV_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "../analysis.hpp"
#include "../augment.hpp"
#include "../error.hpp"
#include "../neural/train.hpp"
#include "json.hpp"

namespace stainkit::io {

using CsvRow = std::vector<std::string>;

/// Shortest text that parses back to the same double.
inline std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::string fmt(std::size_t v) { return std::to_string(v); }

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) {
        return std::string(s);
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string csv_line(const CsvRow& row) {
    std::string out;
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        out += csv_field(row[i]);
    }
    return out + "\n";
}

inline std::string csv_text(const CsvRow& header, const std::vector<CsvRow>& rows) {
    std::string out = csv_line(header);
    for (const auto& r : rows) out += csv_line(r);
    return out;
}

/// RFC 4180 subset: quoted fields with doubled quotes, LF or CRLF endings.
inline std::vector<CsvRow> parse_csv(std::string_view text) {
    std::vector<CsvRow> rows;
    CsvRow row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        any = true;
        if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            row.push_back(std::move(field));
            field.clear();
            if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
            row.clear();
            any = false;
        } else {
            field += c;
        }
    }
    if (quoted) {
        throw Error(ErrorKind::InvalidConfig, "unterminated quoted CSV field");
    }
    if (any) {
        row.push_back(std::move(field));
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<CsvRow> read_csv(const fs::path& path) { return parse_csv(read_text(path)); }

inline double parse_double(const std::string& s, std::string_view what) {
    double v = 0.0;
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        throw Error(ErrorKind::InvalidConfig, std::string(what) + ": '" + s + "' is not a number");
    }
    return v;
}

// ---------------------------------------------------------------------------
// HSV statistics and the hue/saturation scatter

inline const CsvRow kStatsHeader{"dataset_id", "mean_hue", "std_hue", "mean_sat", "std_sat", "pixel_count"};

inline std::string stats_csv(std::span<const HsvStats> stats) {
    std::vector<CsvRow> rows;
    for (const auto& s : stats) {
        rows.push_back({s.dataset_id, fmt(s.mean_hue), fmt(s.std_hue), fmt(s.mean_sat), fmt(s.std_sat),
                        fmt(s.pixel_count)});
    }
    return csv_text(kStatsHeader, rows);
}

inline std::vector<HsvStats> parse_stats_csv(std::string_view text) {
    const auto rows = parse_csv(text);
    if (rows.empty() || rows[0] != kStatsHeader) {
        throw Error(ErrorKind::InvalidConfig, "stats CSV header must be dataset_id,mean_hue,std_hue,mean_sat,std_sat,"
                                              "pixel_count");
    }
    std::vector<HsvStats> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != kStatsHeader.size()) {
            throw Error(ErrorKind::InvalidConfig, "stats CSV row " + std::to_string(i) + " has the wrong width");
        }
        HsvStats s;
        s.dataset_id = r[0];
        s.mean_hue = parse_double(r[1], "mean_hue");
        s.std_hue = parse_double(r[2], "std_hue");
        s.mean_sat = parse_double(r[3], "mean_sat");
        s.std_sat = parse_double(r[4], "std_sat");
        s.pixel_count = static_cast<std::size_t>(parse_double(r[5], "pixel_count"));
        out.push_back(s);
    }
    return out;
}

/// x = mean hue, y = mean saturation, with the deviations for error bars.
inline std::string scatter_csv(std::span<const HsvStats> stats) {
    std::vector<CsvRow> rows;
    for (const auto& s : stats) {
        rows.push_back({s.dataset_id, fmt(s.mean_hue), fmt(s.mean_sat), fmt(s.std_hue), fmt(s.std_sat)});
    }
    return csv_text({"dataset_id", "hue", "saturation", "hue_err", "saturation_err"}, rows);
}

// ---------------------------------------------------------------------------
// Score tables and rankings

/// Long form: repetition,method,dataset,score (the repetition column may be
/// omitted). Wide form: method,<dataset>,<dataset>,... with one repetition.
/// Methods and datasets keep their order of first appearance.
inline ScoreTable parse_scores_csv(std::string_view text) {
    const auto rows = parse_csv(text);
    if (rows.empty()) {
        throw Error(ErrorKind::InvalidConfig, "score CSV is empty");
    }
    const CsvRow& h = rows[0];
    ScoreTable t;
    auto index_of = [](std::vector<std::string>& names, const std::string& n) {
        auto it = std::find(names.begin(), names.end(), n);
        if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
        names.push_back(n);
        return names.size() - 1;
    };
    const bool long_form = h == CsvRow{"repetition", "method", "dataset", "score"} ||
                           h == CsvRow{"method", "dataset", "score"};
    if (!long_form) {
        if (h.size() < 2 || h[0] != "method") {
            throw Error(ErrorKind::InvalidConfig, "score CSV header must be repetition,method,dataset,score or "
                                                  "method,<dataset>,...");
        }
        t.datasets.assign(h.begin() + 1, h.end());
        t.scores.resize(1);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() != h.size()) {
                throw Error(ErrorKind::InvalidConfig, "score CSV row " + std::to_string(i) + " has the wrong width");
            }
            const std::size_t before = t.methods.size();
            if (index_of(t.methods, rows[i][0]) != before) {
                throw Error(ErrorKind::InvalidConfig, "method '" + rows[i][0] + "' appears twice");
            }
            std::vector<double> row;
            for (std::size_t c = 1; c < h.size(); ++c) row.push_back(parse_double(rows[i][c], "score"));
            t.scores[0].push_back(row);
        }
        t.validate();
        return t;
    }
    const std::size_t off = h.size() == 4 ? 1 : 0;
    std::map<long long, std::map<std::pair<std::size_t, std::size_t>, double>> cells;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != h.size()) {
            throw Error(ErrorKind::InvalidConfig, "score CSV row " + std::to_string(i) + " has the wrong width");
        }
        const long long rep = off ? static_cast<long long>(parse_double(r[0], "repetition")) : 0;
        const auto key = std::pair{index_of(t.methods, r[off]), index_of(t.datasets, r[off + 1])};
        if (!cells[rep].emplace(key, parse_double(r[off + 2], "score")).second) {
            throw Error(ErrorKind::InvalidConfig, "duplicate score for " + r[off] + "/" + r[off + 1]);
        }
    }
    for (const auto& [rep, m] : cells) {
        std::vector<std::vector<double>> grid(
            t.methods.size(), std::vector<double>(t.datasets.size(), std::numeric_limits<double>::quiet_NaN()));
        for (const auto& [key, v] : m) grid[key.first][key.second] = v;
        t.scores.push_back(std::move(grid));
    }
    t.validate();
    return t;
}

inline std::string scores_csv(const ScoreTable& t) {
    std::vector<CsvRow> rows;
    for (std::size_t r = 0; r < t.scores.size(); ++r)
        for (std::size_t m = 0; m < t.methods.size(); ++m)
            for (std::size_t d = 0; d < t.datasets.size(); ++d)
                rows.push_back({fmt(r), t.methods[m], t.datasets[d], fmt(t.scores[r][m][d])});
    return csv_text({"repetition", "method", "dataset", "score"}, rows);
}

inline std::string ranking_csv(std::span<const MethodRank> ranks) {
    std::vector<CsvRow> rows;
    for (const auto& r : ranks) rows.push_back({r.method, fmt(r.mean_rank), fmt(r.std_rank)});
    return csv_text({"method", "mean_rank", "std_rank"}, rows);
}

// ---------------------------------------------------------------------------
// Augmentation manifest and training log

inline const CsvRow kManifestHeader{
    "file",       "call_index", "category",   "rotation_k",  "flip_horizontal", "flip_vertical", "scale",
    "elastic_alpha", "elastic_sigma", "blur_sigma", "noise_sigma", "brightness",  "contrast",      "hue",
    "saturation", "value",      "hed_alpha_h", "hed_alpha_e", "hed_alpha_d",   "hed_beta_h",    "hed_beta_e",
    "hed_beta_d"};

inline CsvRow manifest_row(const std::string& file, std::uint64_t call_index, Category category,
                           const SampledParams& s) {
    return {file,
            std::to_string(call_index),
            std::string(to_string(category)),
            std::to_string(s.rotation_k),
            s.flip_horizontal ? "1" : "0",
            s.flip_vertical ? "1" : "0",
            fmt(s.scale),
            fmt(s.elastic_alpha),
            fmt(s.elastic_sigma),
            fmt(s.blur_sigma),
            fmt(s.noise_sigma),
            fmt(s.brightness),
            fmt(s.contrast),
            fmt(s.hue),
            fmt(s.saturation),
            fmt(s.value),
            fmt(s.hed_alpha[0]),
            fmt(s.hed_alpha[1]),
            fmt(s.hed_alpha[2]),
            fmt(s.hed_beta[0]),
            fmt(s.hed_beta[1]),
            fmt(s.hed_beta[2])};
}

inline std::string training_log_csv(std::span<const nn::EpochLog> log) {
    std::vector<CsvRow> rows;
    for (const auto& e : log) rows.push_back({fmt(e.epoch), fmt(e.lr), fmt(e.train_loss), fmt(e.val_loss)});
    return csv_text({"epoch", "lr", "train_loss", "val_loss"}, rows);
}

} // namespace stainkit::io

#endif
