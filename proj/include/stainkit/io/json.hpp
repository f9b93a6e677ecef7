#ifndef STAINKIT_IO_JSON_HPP
#define STAINKIT_IO_JSON_HPP

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "../augment.hpp"
#include "../error.hpp"
#include "../neural/network.hpp"
#include "../neural/train.hpp"
#include "../normalize.hpp"
#include "../synthetic.hpp"

namespace stainkit::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kProfileSchemaVersion = 1;

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) {
        throw Error(ErrorKind::InvalidConfig, "base64 length is not a multiple of 4");
    }
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) {
        throw Error(ErrorKind::InvalidConfig, "invalid base64");
    }
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw Error(ErrorKind::Io, "cannot write " + path.string());
    }
}

inline json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, what + ": " + e.what());
    }
}

namespace detail {

/// Rejects keys outside `allowed` so typos do not pass silently.
inline void require_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& what) {
    if (!j.is_object()) {
        throw Error(ErrorKind::InvalidConfig, what + " must be a JSON object");
    }
    for (const auto& [k, v] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw Error(ErrorKind::InvalidConfig, what + ": unknown key '" + k + "'");
        }
    }
}

template <typename T>
T get(const json& j, std::string_view key, const std::string& what) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw Error(ErrorKind::InvalidConfig, what + ": missing key '" + std::string(key) + "'");
    }
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, what + ": bad value for '" + std::string(key) + "': " + e.what());
    }
}

template <typename T>
void get_optional(const json& j, std::string_view key, T& out, const std::string& what) {
    if (j.contains(key)) {
        out = get<T>(j, key, what);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Normalization profile

inline json to_json(const NormProfile& p) {
    json luts = json::array();
    for (const auto& l : p.luts) {
        luts.push_back(base64_encode(l));
    }
    json rows = json::array();
    for (const auto& r : p.stain_matrix.rows()) {
        rows.push_back(r);
    }
    return {
        {"schema_version", kProfileSchemaVersion},
        {"method", to_string(p.method)},
        {"stain_matrix", rows},
        {"conc_scale", p.conc_scale},
        {"luts", luts},
        {"metadata", {{"template_id", p.metadata.template_id}, {"fit_date", p.metadata.fit_date}}},
    };
}

inline NormProfile profile_from_json(const json& j) {
    const std::string what = "profile";
    detail::require_keys(j, {"schema_version", "method", "stain_matrix", "conc_scale", "luts", "metadata"}, what);
    const int version = detail::get<int>(j, "schema_version", what);
    if (version != kProfileSchemaVersion) {
        throw Error(ErrorKind::InvalidConfig, "unsupported profile schema_version " + std::to_string(version));
    }
    NormProfile p;
    p.method = norm_method_from_string(detail::get<std::string>(j, "method", what));
    p.stain_matrix = StainMatrix(detail::get<StainMatrix::Rows>(j, "stain_matrix", what));
    p.conc_scale = detail::get<std::array<double, 2>>(j, "conc_scale", what);
    const auto luts = detail::get<std::vector<std::string>>(j, "luts", what);
    if (luts.size() != 3) {
        throw Error(ErrorKind::InvalidConfig, "profile needs exactly three LUTs");
    }
    for (std::size_t c = 0; c < 3; ++c) {
        const auto bytes = base64_decode(luts[c]);
        if (bytes.size() != 256) {
            throw Error(ErrorKind::InvalidConfig, "LUT " + std::to_string(c) + " does not hold 256 entries");
        }
        std::copy(bytes.begin(), bytes.end(), p.luts[c].begin());
    }
    const json meta = detail::get<json>(j, "metadata", what);
    detail::require_keys(meta, {"template_id", "fit_date"}, "profile metadata");
    detail::get_optional(meta, "template_id", p.metadata.template_id, what);
    detail::get_optional(meta, "fit_date", p.metadata.fit_date, what);
    p.validate();
    return p;
}

inline void save_profile(const fs::path& path, const NormProfile& p) { write_text(path, to_json(p).dump(2) + "\n"); }

inline NormProfile load_profile(const fs::path& path) {
    return profile_from_json(parse_json(read_text(path), path.string()));
}

// ---------------------------------------------------------------------------
// Augmentation config: ranges given here override the category defaults.

inline json to_json(const AugmentConfig& c) {
    json ranges = json::object();
    for (const auto& [k, r] : c.ranges) {
        ranges[k] = {r.lo, r.hi};
    }
    return {{"category", to_string(c.category)}, {"seed", c.seed}, {"ranges", ranges}};
}

inline AugmentConfig augment_config_from_json(const json& j) {
    const std::string what = "augmentation config";
    detail::require_keys(j, {"category", "seed", "ranges"}, what);
    AugmentConfig cfg = AugmentConfig::defaults(category_from_string(detail::get<std::string>(j, "category", what)));
    detail::get_optional(j, "seed", cfg.seed, what);
    if (j.contains("ranges")) {
        const json& ranges = j.at("ranges");
        if (!ranges.is_object()) {
            throw Error(ErrorKind::InvalidConfig, what + ": ranges must be an object");
        }
        for (const auto& [k, v] : ranges.items()) {
            if (!cfg.ranges.contains(k)) {
                throw Error(ErrorKind::InvalidConfig, "range '" + k + "' does not apply to category " +
                                                          std::string(to_string(cfg.category)));
            }
            const auto pair = detail::get<std::array<double, 2>>(ranges, k, what);
            cfg.ranges[k] = Range{pair[0], pair[1]};
        }
    }
    cfg.validate();
    return cfg;
}

inline AugmentConfig load_augment_config(const fs::path& path) {
    return augment_config_from_json(parse_json(read_text(path), path.string()));
}

// ---------------------------------------------------------------------------
// Fitting options, synthetic generator, network and training

inline json to_json(const FitOptions& o) {
    return {{"od_threshold", o.od_threshold},
            {"angle_percentile", o.angle_percentile},
            {"conc_percentile", o.conc_percentile},
            {"sample_cap", o.sample_cap},
            {"degenerate_tolerance", o.degenerate_tolerance}};
}

inline json to_json(const SyntheticSpec& s) {
    return {{"count", s.count},
            {"height", s.height},
            {"width", s.width},
            {"hematoxylin", s.hematoxylin},
            {"eosin", s.eosin},
            {"nuclei_density", s.nuclei_density},
            {"radius", {s.radius_min, s.radius_max}},
            {"h_conc", {s.h_conc_min, s.h_conc_max}},
            {"e_conc", {s.e_conc_min, s.e_conc_max}},
            {"e_jitter", s.e_jitter},
            {"lumen_probability", s.lumen_probability},
            {"od_noise", s.od_noise},
            {"seed", s.seed}};
}

/// Absent keys keep their defaults.
inline SyntheticSpec synthetic_spec_from_json(const json& j) {
    const std::string what = "synthetic spec";
    detail::require_keys(j,
                         {"count", "height", "width", "hematoxylin", "eosin", "nuclei_density", "radius", "h_conc",
                          "e_conc", "e_jitter", "lumen_probability", "od_noise", "seed"},
                         what);
    SyntheticSpec s;
    detail::get_optional(j, "count", s.count, what);
    detail::get_optional(j, "height", s.height, what);
    detail::get_optional(j, "width", s.width, what);
    detail::get_optional(j, "hematoxylin", s.hematoxylin, what);
    detail::get_optional(j, "eosin", s.eosin, what);
    detail::get_optional(j, "nuclei_density", s.nuclei_density, what);
    auto range = [&](std::string_view key, double& lo, double& hi) {
        if (j.contains(key)) {
            const auto r = detail::get<std::array<double, 2>>(j, key, what);
            lo = r[0];
            hi = r[1];
        }
    };
    range("radius", s.radius_min, s.radius_max);
    range("h_conc", s.h_conc_min, s.h_conc_max);
    range("e_conc", s.e_conc_min, s.e_conc_max);
    detail::get_optional(j, "e_jitter", s.e_jitter, what);
    detail::get_optional(j, "lumen_probability", s.lumen_probability, what);
    detail::get_optional(j, "od_noise", s.od_noise, what);
    detail::get_optional(j, "seed", s.seed, what);
    s.validate();
    return s;
}

inline json to_json(const nn::NetworkSpec& s) {
    json layers = json::array();
    for (const auto& L : s.layers) {
        json l = {{"kind", to_string(L.kind)}};
        if (L.kind == nn::LayerKind::StridedConv || L.kind == nn::LayerKind::NnUpsampleConv) {
            l["filters"] = L.filters;
            l["stride"] = L.stride;
            l["skip"] = L.skip;
        }
        layers.push_back(l);
    }
    return {{"input_height", s.input_height},
            {"input_width", s.input_width},
            {"input_channels", s.input_channels},
            {"bn_momentum", s.bn_momentum},
            {"bn_eps", s.bn_eps},
            {"leaky_slope", s.leaky_slope},
            {"layers", layers}};
}

inline nn::NetworkSpec network_spec_from_json(const json& j) {
    const std::string what = "network spec";
    detail::require_keys(j,
                         {"input_height", "input_width", "input_channels", "bn_momentum", "bn_eps", "leaky_slope",
                          "layers"},
                         what);
    nn::NetworkSpec s;
    s.input_height = detail::get<std::size_t>(j, "input_height", what);
    s.input_width = detail::get<std::size_t>(j, "input_width", what);
    s.input_channels = detail::get<std::size_t>(j, "input_channels", what);
    s.bn_momentum = detail::get<double>(j, "bn_momentum", what);
    s.bn_eps = detail::get<double>(j, "bn_eps", what);
    s.leaky_slope = detail::get<double>(j, "leaky_slope", what);
    for (const json& l : detail::get<json>(j, "layers", what)) {
        detail::require_keys(l, {"kind", "filters", "stride", "skip"}, "layer");
        nn::LayerSpec L;
        L.kind = nn::layer_kind_from_string(detail::get<std::string>(l, "kind", "layer"));
        detail::get_optional(l, "filters", L.filters, "layer");
        detail::get_optional(l, "stride", L.stride, "layer");
        detail::get_optional(l, "skip", L.skip, "layer");
        s.layers.push_back(L);
    }
    s.validate();
    return s;
}

inline json to_json(const nn::TrainConfig& c) {
    return {{"batch_size", c.batch_size}, {"max_epochs", c.max_epochs}, {"patience", c.patience},
            {"l2", c.l2},                 {"val_fraction", c.val_fraction}, {"seed", c.seed},
            {"augment", c.augment},       {"augmentation", to_json(c.augmentation)}};
}

inline nn::TrainConfig train_config_from_json(const json& j) {
    const std::string what = "training config";
    detail::require_keys(j,
                         {"batch_size", "max_epochs", "patience", "l2", "val_fraction", "seed", "augment",
                          "augmentation"},
                         what);
    nn::TrainConfig c;
    detail::get_optional(j, "batch_size", c.batch_size, what);
    detail::get_optional(j, "max_epochs", c.max_epochs, what);
    detail::get_optional(j, "patience", c.patience, what);
    detail::get_optional(j, "l2", c.l2, what);
    detail::get_optional(j, "val_fraction", c.val_fraction, what);
    detail::get_optional(j, "seed", c.seed, what);
    detail::get_optional(j, "augment", c.augment, what);
    if (j.contains("augmentation")) {
        c.augmentation = augment_config_from_json(j.at("augmentation"));
    }
    c.validate();
    return c;
}

} // namespace stainkit::io

#endif
