#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <stainkit/analysis.hpp>
#include <stainkit/augment.hpp>
#include <stainkit/io/bench.hpp>
#include <stainkit/io/csv.hpp>
#include <stainkit/io/json.hpp>
#include <stainkit/io/parallel.hpp>
#include <stainkit/io/patch_set.hpp>
#include <stainkit/io/png.hpp>
#include <stainkit/io/tiled.hpp>
#include <stainkit/io/weights.hpp>
#include <stainkit/neural/train.hpp>
#include <stainkit/normalize.hpp>
#include <stainkit/synthetic.hpp>

namespace sk = stainkit;
namespace io = stainkit::io;
namespace nn = stainkit::nn;
namespace fs = std::filesystem;
using io::json;
using sk::Error;
using sk::ErrorKind;
using sk::Patch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitCompute = 4;

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidConfig:
    case ErrorKind::ProfileMismatch: return kExitConfig;
    case ErrorKind::Io:
    case ErrorKind::EmptyDataset:
    case ErrorKind::InsufficientTissue: return kExitIo;
    default: return kExitCompute;
    }
}

struct Global {
    std::optional<std::size_t> threads;
    bool print_config = false;

    [[nodiscard]] std::size_t workers() const { return threads ? *threads : io::default_workers(); }
};

bool given(const CLI::Option* o) { return o->count() > 0; }

/// Prints the resolved configuration when asked; true means stop there.
bool maybe_print(const Global& g, const std::string& command, json cfg) {
    if (!g.print_config) return false;
    cfg["command"] = command;
    cfg["threads"] = g.workers();
    std::cout << cfg.dump(2) << "\n";
    return true;
}

std::string dataset_name(const fs::path& dir) {
    const fs::path p = dir.lexically_normal();
    const std::string name = p.has_filename() ? p.filename().string() : p.parent_path().filename().string();
    return name.empty() ? p.string() : name;
}

/// Explicit flag, then SOURCE_DATE_EPOCH, then today's UTC date.
std::string resolve_fit_date(const std::string& flag) {
    if (!flag.empty()) return flag;
    std::time_t t = std::time(nullptr);
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) {
        char* end = nullptr;
        const long long v = std::strtoll(env, &end, 10);
        if (*end != '\0' || v < 0) {
            throw Error(ErrorKind::InvalidConfig, "SOURCE_DATE_EPOCH must be a non-negative integer");
        }
        t = static_cast<std::time_t>(v);
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[16];
    std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
    return buf;
}

void require_distinct(const fs::path& in, const fs::path& out) {
    std::error_code ec;
    if (fs::exists(out) && fs::equivalent(in, out, ec)) {
        throw Error(ErrorKind::InvalidArgument, "output directory must differ from the input");
    }
}

/// Applies `fn` to every PNG of `in`, writing results under the same names.
void map_directory(const fs::path& in, const fs::path& out, std::size_t workers,
                   const std::function<Patch(const Patch&, std::size_t)>& fn) {
    const auto files = io::list_pngs(in);
    require_distinct(in, out);
    fs::create_directories(out);
    io::parallel_for(files.size(), workers, [&](std::size_t i) {
        io::write_png(out / files[i].filename(), fn(io::read_png(files[i]), i));
    });
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    fs::path out;
    fs::path config;
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::uint64_t seed = 0;
    std::string layout = "patches";
    std::size_t tile_size = io::kDefaultTileSize;
    CLI::Option* count_opt = nullptr;
    CLI::Option* height_opt = nullptr;
    CLI::Option* width_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
};

sk::SyntheticSpec resolve_synth(const SynthArgs& a) {
    sk::SyntheticSpec spec = a.config.empty() ? sk::SyntheticSpec{}
                                              : io::synthetic_spec_from_json(io::parse_json(io::read_text(a.config),
                                                                                            a.config.string()));
    if (given(a.count_opt)) spec.count = a.count;
    if (given(a.height_opt)) spec.height = a.height;
    if (given(a.width_opt)) spec.width = a.width;
    if (given(a.seed_opt)) spec.seed = a.seed;
    spec.validate();
    return spec;
}

/// A height x width image whose tile i is generator index i at tile size.
void write_synthetic_image(const sk::SyntheticSpec& spec, const SynthArgs& a, std::size_t workers) {
    const io::TileGrid g{spec.width, spec.height, a.tile_size};
    g.validate();
    auto tile = [&](std::size_t i) {
        const io::TileRect t = g.rect(i);
        sk::SyntheticSpec s = spec;
        s.height = t.h;
        s.width = t.w;
        return sk::synthesize_patch(s, i);
    };
    if (a.layout == "tiles") {
        fs::create_directories(a.out);
        io::parallel_for(g.count(), workers, [&](std::size_t i) {
            const io::TileRect t = g.rect(i);
            io::write_png(a.out / io::tile_name(t.row, t.col), tile(i));
        });
        io::write_tile_manifest(a.out, g);
        return;
    }
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    io::PngRowWriter writer(a.out, g.width, g.height);
    std::vector<std::uint8_t> row(g.width * 3);
    for (std::size_t r = 0; r < g.rows(); ++r) {
        std::vector<Patch> band(g.cols());
        io::parallel_for(g.cols(), workers, [&](std::size_t c) { band[c] = tile(r * g.cols() + c); });
        for (std::size_t y = 0; y < band[0].height(); ++y) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                const Patch& t = band[c];
                const auto src = t.data().subspan(y * t.width() * 3, t.width() * 3);
                std::transform(src.begin(), src.end(), row.begin() + static_cast<std::ptrdiff_t>(c * g.tile_size * 3),
                               io::to_byte);
            }
            writer.write_row(row.data());
        }
    }
}

int run_synth(const Global& g, const SynthArgs& a) {
    const sk::SyntheticSpec spec = resolve_synth(a);
    if (maybe_print(g, "synth", {{"out", a.out}, {"layout", a.layout}, {"tile_size", a.tile_size},
                                 {"synthetic", io::to_json(spec)}})) {
        return kExitOk;
    }
    if (a.layout == "patches") {
        fs::create_directories(a.out);
        io::parallel_for(spec.count, g.workers(), [&](std::size_t i) {
            char local[32];
            std::snprintf(local, sizeof local, "patch_%06zu.png", i);
            io::write_png(a.out / local, sk::synthesize_patch(spec, i));
        });
    } else {
        write_synthetic_image(spec, a, g.workers());
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct AugmentArgs {
    fs::path config;
    fs::path in;
    fs::path out;
    std::uint64_t seed = 0;
    bool neutral = false;
    CLI::Option* seed_opt = nullptr;
};

int run_augment(const Global& g, const AugmentArgs& a) {
    sk::AugmentConfig cfg = io::load_augment_config(a.config);
    if (given(a.seed_opt)) cfg.seed = a.seed;
    if (maybe_print(g, "augment", {{"in", a.in}, {"out", a.out}, {"neutral", a.neutral},
                                   {"augmentation", io::to_json(cfg)}})) {
        return kExitOk;
    }
    const auto files = io::list_pngs(a.in);
    std::vector<io::CsvRow> manifest(files.size());
    map_directory(a.in, a.out, g.workers(), [&](const Patch& p, std::size_t i) {
        sk::SampledParams s = sk::sample_params(cfg, i);
        if (a.neutral) s = sk::neutralized(s);
        manifest[i] = io::manifest_row(files[i].filename().string(), i, cfg.category, s);
        return sk::apply_params(p, s);
    });
    io::write_text(a.out / "manifest.csv", io::csv_text(io::kManifestHeader, manifest));
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct FitArgs {
    std::string method = "macenko";
    fs::path template_dir;
    fs::path source_dir;
    fs::path out;
    std::string fit_date;
    std::string template_id;
    sk::FitOptions fit;
};

int run_fit_profile(const Global& g, const FitArgs& a) {
    const sk::NormMethod method = sk::norm_method_from_string(a.method);
    if (!a.source_dir.empty() && method != sk::NormMethod::Lut) {
        throw Error(ErrorKind::InvalidArgument, "--source applies to the lut method only");
    }
    a.fit.validate();
    const fs::path source = a.source_dir.empty() ? a.template_dir : a.source_dir;
    sk::ProfileMetadata meta{a.template_id.empty() ? dataset_name(a.template_dir) : a.template_id,
                             resolve_fit_date(a.fit_date)};
    json cfg = {{"method", sk::to_string(method)}, {"template", a.template_dir}, {"out", a.out},
                {"template_id", meta.template_id}, {"fit_date", meta.fit_date}, {"fit", io::to_json(a.fit)}};
    if (method == sk::NormMethod::Lut) cfg["source"] = source;
    if (maybe_print(g, "fit-profile", cfg)) return kExitOk;

    const auto templ = io::load_patch_set(a.template_dir);
    sk::NormProfile profile;
    switch (method) {
    case sk::NormMethod::Deconv: profile = sk::fit_macenko(templ, a.fit); break;
    case sk::NormMethod::Lut: {
        const auto src = source == a.template_dir ? templ : io::load_patch_set(source);
        profile = sk::fit_lut(src, templ, a.fit);
        break;
    }
    default: profile.method = method; break;
    }
    profile.metadata = meta;
    io::save_profile(a.out, profile);
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct NormalizeArgs {
    std::string method;
    fs::path profile;
    fs::path source_profile;
    fs::path save_source_profile;
    fs::path weights;
    fs::path in;
    fs::path tiled;
    fs::path out;
    std::size_t tile_size = io::kDefaultTileSize;
    std::size_t fit_tiles = 16;
    sk::FitOptions fit;
};

enum class Method { Identity, Grayscale, Macenko, Lut, Network };

Method method_from_string(const std::string& s) {
    if (s == "network" || s == "neural") return Method::Network;
    switch (sk::norm_method_from_string(s)) {
    case sk::NormMethod::Identity: return Method::Identity;
    case sk::NormMethod::Grayscale: return Method::Grayscale;
    case sk::NormMethod::Deconv: return Method::Macenko;
    case sk::NormMethod::Lut: return Method::Lut;
    }
    return Method::Identity;
}

sk::NormProfile require_profile(const fs::path& path, sk::NormMethod expected, std::string_view flag) {
    if (path.empty()) {
        throw Error(ErrorKind::InvalidArgument, std::string(flag) + " is required for this method");
    }
    sk::NormProfile p = io::load_profile(path);
    if (p.method != expected) {
        throw Error(ErrorKind::ProfileMismatch, path.string() + " is a " + std::string(sk::to_string(p.method)) +
                                                    " profile, expected " + std::string(sk::to_string(expected)));
    }
    return p;
}

int run_normalize(const Global& g, const NormalizeArgs& a) {
    const Method method = method_from_string(a.method);
    const bool tiled = !a.tiled.empty();
    if (tiled == !a.in.empty()) {
        throw Error(ErrorKind::InvalidArgument, "exactly one of --in and --tiled is required");
    }
    json cfg = {{"method", a.method}, {"out", a.out}};
    cfg[tiled ? "tiled" : "in"] = tiled ? a.tiled : a.in;
    if (tiled) cfg["tile_size"] = a.tile_size;
    if (!a.profile.empty()) cfg["profile"] = a.profile;
    if (!a.weights.empty()) cfg["weights"] = a.weights;
    if (method == Method::Macenko) {
        if (a.source_profile.empty()) {
            cfg["source_fit"] = io::to_json(a.fit);
            if (tiled) cfg["fit_tiles"] = a.fit_tiles;
        } else {
            cfg["source_profile"] = a.source_profile;
        }
    }
    if (maybe_print(g, "normalize", cfg)) return kExitOk;

    io::TileFn fn;
    switch (method) {
    case Method::Identity: fn = sk::normalize_identity; break;
    case Method::Grayscale: fn = sk::normalize_gray; break;
    case Method::Lut: fn = sk::LutNormalizer(require_profile(a.profile, sk::NormMethod::Lut, "--profile")); break;
    case Method::Network: {
        if (a.weights.empty()) throw Error(ErrorKind::InvalidArgument, "--weights is required for this method");
        auto net = std::make_shared<nn::Network<float>>(io::load_weights(a.weights));
        fn = [net](const Patch& p) { return nn::normalize_network(*net, p); };
        break;
    }
    case Method::Macenko: {
        const sk::NormProfile target = require_profile(a.profile, sk::NormMethod::Deconv, "--profile");
        sk::NormProfile source;
        if (!a.source_profile.empty()) {
            source = require_profile(a.source_profile, sk::NormMethod::Deconv, "--source-profile");
        } else {
            const auto fit_set = tiled ? io::sample_tiles(a.tiled, a.tile_size, a.fit_tiles) : io::load_patch_set(a.in);
            source = sk::fit_macenko(fit_set, a.fit);
            source.metadata.template_id = dataset_name(tiled ? a.tiled : a.in);
        }
        if (!a.save_source_profile.empty()) io::save_profile(a.save_source_profile, source);
        fn = sk::MacenkoNormalizer(target, source);
        break;
    }
    }
    if (tiled) {
        io::process_tiled(a.tiled, a.out, a.tile_size, fn, g.workers());
    } else {
        map_directory(a.in, a.out, g.workers(), [&](const Patch& p, std::size_t) { return fn(p); });
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    fs::path in;
    std::size_t synthetic = 0;
    fs::path synth_config;
    std::size_t patch_size = 32;
    std::uint64_t synth_seed = 0;
    fs::path out;
    fs::path log;
    fs::path config;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    std::size_t patience = 0;
    std::uint64_t seed = 0;
    bool no_augment = false;
    bool no_batch_norm = false;
    bool verbose = false;
    std::vector<int> filters{16, 32, 64};
    CLI::Option* epochs_opt = nullptr;
    CLI::Option* batch_opt = nullptr;
    CLI::Option* patience_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
};

int run_train(const Global& g, const TrainArgs& a) {
    if (a.in.empty() == (a.synthetic == 0)) {
        throw Error(ErrorKind::InvalidArgument, "exactly one of --in and --synthetic is required");
    }
    nn::TrainConfig cfg = a.config.empty()
                              ? nn::TrainConfig{}
                              : io::train_config_from_json(io::parse_json(io::read_text(a.config), a.config.string()));
    if (given(a.epochs_opt)) cfg.max_epochs = a.epochs;
    if (given(a.batch_opt)) cfg.batch_size = a.batch_size;
    if (given(a.patience_opt)) cfg.patience = a.patience;
    if (given(a.seed_opt)) cfg.seed = a.seed;
    if (a.no_augment) cfg.augment = false;
    cfg.validate();

    sk::SyntheticSpec synth;
    if (a.synthetic > 0) {
        if (!a.synth_config.empty()) {
            synth = io::synthetic_spec_from_json(io::parse_json(io::read_text(a.synth_config), a.synth_config.string()));
        }
        synth.count = a.synthetic;
        synth.height = synth.width = a.patch_size;
        synth.seed = a.synth_seed;
        synth.validate();
    }
    std::vector<Patch> data = a.synthetic > 0 ? std::vector<Patch>{} : io::load_patch_set(a.in);
    const std::size_t h = a.synthetic > 0 ? synth.height : (data.empty() ? 0 : data[0].height());
    const std::size_t w = a.synthetic > 0 ? synth.width : (data.empty() ? 0 : data[0].width());
    if (a.filters.empty()) throw Error(ErrorKind::InvalidConfig, "--filters needs at least one entry");
    std::vector<int> up(a.filters.rbegin() + 1, a.filters.rend());
    up.push_back(3);
    const nn::NetworkSpec spec = nn::NetworkSpec::unet(h, w, a.filters, up, !a.no_batch_norm);

    json cfg_json = {{"out", a.out}, {"training", io::to_json(cfg)}, {"network", io::to_json(spec)}};
    if (a.synthetic > 0) {
        cfg_json["synthetic"] = io::to_json(synth);
    } else {
        cfg_json["in"] = a.in;
    }
    if (!a.log.empty()) cfg_json["log"] = a.log;
    if (maybe_print(g, "train-norm", cfg_json)) return kExitOk;

    if (a.synthetic > 0) {
        data.resize(synth.count);
        io::parallel_for(synth.count, g.workers(), [&](std::size_t i) { data[i] = sk::synthesize_patch(synth, i); });
    }
    if (data.empty()) throw Error(ErrorKind::EmptyDataset, "no training patches in " + a.in.string());
    const auto result = nn::train(nn::Network<float>(spec, cfg.seed), data, cfg, [&](const nn::EpochLog& e) {
        if (a.verbose) {
            std::cerr << "epoch " << e.epoch << " lr " << e.lr << " train " << e.train_loss << " val " << e.val_loss
                      << "\n";
        }
    });
    io::save_weights(a.out, result.net);
    if (!a.log.empty()) io::write_text(a.log, io::training_log_csv(result.log));
    std::cout << "best_epoch " << result.best_epoch << " val_loss " << io::fmt(result.best_val_loss) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::vector<fs::path> in;
    std::vector<std::string> ids;
    fs::path out;
    fs::path scatter;
};

sk::HsvStats dataset_stats(const fs::path& dir, const std::string& id, std::size_t workers) {
    const auto files = io::list_pngs(dir);
    if (files.empty()) throw Error(ErrorKind::EmptyDataset, "dataset '" + id + "' has no patches");
    std::vector<sk::HsvAccumulator> acc(files.size());
    std::vector<std::pair<std::size_t, std::size_t>> dims(files.size());
    io::parallel_for(files.size(), workers, [&](std::size_t i) {
        const Patch p = io::read_png(files[i]);
        dims[i] = {p.height(), p.width()};
        acc[i].add(p);
    });
    sk::HsvAccumulator total;
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (dims[i] != dims[0]) {
            throw Error(ErrorKind::Io, files[i].string() + " differs in size from the rest of " + dir.string());
        }
        total.merge(acc[i]);
    }
    return total.finish(id);
}

int run_analyze(const Global& g, const AnalyzeArgs& a) {
    std::vector<std::string> ids = a.ids;
    if (ids.empty()) {
        for (const auto& d : a.in) ids.push_back(dataset_name(d));
    }
    if (ids.size() != a.in.size()) {
        throw Error(ErrorKind::InvalidArgument, "--id must be given once per --in");
    }
    json cfg = {{"in", a.in}, {"ids", ids}, {"out", a.out}};
    if (!a.scatter.empty()) cfg["scatter"] = a.scatter;
    if (maybe_print(g, "analyze", cfg)) return kExitOk;

    std::vector<sk::HsvStats> stats;
    for (std::size_t i = 0; i < a.in.size(); ++i) stats.push_back(dataset_stats(a.in[i], ids[i], g.workers()));
    io::write_text(a.out, io::stats_csv(stats));
    if (!a.scatter.empty()) io::write_text(a.scatter, io::scatter_csv(stats));
    if (stats.size() >= 2) std::cout << "spread " << io::fmt(sk::spread(stats)) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct RankArgs {
    fs::path scores;
    fs::path out;
};

int run_rank(const Global& g, const RankArgs& a) {
    if (maybe_print(g, "rank", {{"scores", a.scores}, {"out", a.out}})) return kExitOk;
    const sk::ScoreTable table = io::parse_scores_csv(io::read_text(a.scores));
    const auto ranks = sk::aggregate_ranking(table);
    io::write_text(a.out, io::ranking_csv(ranks));
    for (const auto& r : ranks) {
        std::cout << r.method << " " << io::fmt(r.mean_rank) << " " << io::fmt(r.std_rank) << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
    fs::path tiled;
    std::size_t size = 4096;
    std::size_t tile_size = io::kDefaultTileSize;
    std::uint64_t seed = 0;
    std::vector<std::string> methods{"identity", "grayscale", "lut", "macenko"};
    fs::path weights;
    fs::path template_dir;
    fs::path out;
    io::BenchOptions opt;
    CLI::Option* methods_opt = nullptr;
};

std::vector<Patch> synthetic_tiles(std::size_t size, std::size_t tile_size, std::uint64_t seed, std::size_t workers) {
    const io::TileGrid g{size, size, tile_size};
    g.validate();
    sk::SyntheticSpec spec;
    spec.seed = seed;
    std::vector<Patch> tiles(g.count());
    io::parallel_for(g.count(), workers, [&](std::size_t i) {
        sk::SyntheticSpec s = spec;
        s.height = g.rect(i).h;
        s.width = g.rect(i).w;
        tiles[i] = sk::synthesize_patch(s, i);
    });
    return tiles;
}

int run_bench(const Global& g, BenchArgs a) {
    if (!given(a.methods_opt) && !a.weights.empty()) a.methods.push_back("network");
    a.opt.threads = g.workers();
    for (const auto& m : a.methods) (void)method_from_string(m);
    json cfg = {{"methods", a.methods}, {"tile_size", a.tile_size}, {"runs", a.opt.runs},
                {"warmup_tiles", a.opt.warmup_tiles}};
    if (a.tiled.empty()) {
        cfg["synthetic"] = {{"size", a.size}, {"seed", a.seed}};
    } else {
        cfg["tiled"] = a.tiled;
    }
    if (!a.template_dir.empty()) cfg["template"] = a.template_dir;
    if (!a.weights.empty()) cfg["weights"] = a.weights;
    if (!a.out.empty()) cfg["out"] = a.out;
    if (maybe_print(g, "bench", cfg)) return kExitOk;

    const std::vector<Patch> tiles = a.tiled.empty() ? synthetic_tiles(a.size, a.tile_size, a.seed, g.workers())
                                                     : io::load_tiles(a.tiled, a.tile_size);
    const std::vector<Patch> templ = a.template_dir.empty() ? std::vector<Patch>{} : io::load_patch_set(a.template_dir);
    const std::span<const Patch> template_set = templ.empty() ? std::span<const Patch>(tiles) : templ;

    std::vector<io::BenchMethod> methods;
    for (const auto& name : a.methods) {
        switch (method_from_string(name)) {
        case Method::Identity:
            methods.push_back({name, [](std::span<const Patch>) { return io::TileFn(sk::normalize_identity); }, false});
            break;
        case Method::Grayscale:
            methods.push_back({name, [](std::span<const Patch>) { return io::TileFn(sk::normalize_gray); }, false});
            break;
        case Method::Lut:
            methods.push_back({name,
                               [template_set](std::span<const Patch> t) {
                                   return io::TileFn(sk::LutNormalizer(sk::fit_lut(t, template_set)));
                               },
                               true});
            break;
        case Method::Macenko: {
            const sk::NormProfile target = sk::fit_macenko(template_set);
            methods.push_back({name,
                               [target](std::span<const Patch> t) {
                                   return io::TileFn(sk::MacenkoNormalizer(target, sk::fit_macenko(t)));
                               },
                               true});
            break;
        }
        case Method::Network: {
            if (a.weights.empty()) throw Error(ErrorKind::InvalidArgument, "--weights is required for network");
            auto net = std::make_shared<nn::Network<float>>(io::load_weights(a.weights));
            methods.push_back({name,
                               [net](std::span<const Patch>) {
                                   return io::TileFn([net](const Patch& p) { return nn::normalize_network(*net, p); });
                               },
                               false});
            break;
        }
        }
    }
    const auto reports = io::run_bench(tiles, methods, a.opt);
    if (!a.out.empty()) io::write_text(a.out, io::bench_csv(reports));
    std::printf("%-10s %-6s %12s %10s %10s %8s %16s\n", "method", "phase", "pixels", "seconds", "Mpix/s", "threads",
                "50000^2 s (lin)");
    for (const auto& r : reports) {
        std::printf("%-10s %-6s %12zu %10.4f %10.2f %8zu %16.1f\n", r.method.c_str(), r.phase.c_str(), r.pixels,
                    r.seconds, r.mpix_per_s, r.threads, r.extrapolated_wsi_seconds);
    }
    return kExitOk;
}

void add_fit_options(CLI::App* cmd, sk::FitOptions& fit) {
    cmd->add_option("--od-threshold", fit.od_threshold, "Tissue threshold on mean optical density")->capture_default_str();
    cmd->add_option("--angle-percentile", fit.angle_percentile, "Robust stain angle percentile")->capture_default_str();
    cmd->add_option("--conc-percentile", fit.conc_percentile, "Concentration scale percentile")->capture_default_str();
    cmd->add_option("--sample-cap", fit.sample_cap, "Maximum pixels sampled per fit")->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stain augmentation and normalization for H&E patches"};
    app.require_subcommand(1);
    app.fallthrough();
    Global global;
    app.add_option("--threads", global.threads, "Worker threads (default STAINKIT_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--print-config", global.print_config, "Print the resolved configuration as JSON and exit");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate synthetic H&E patches or a large tiled image");
    c_synth->add_option("--out", synth.out, "Output directory, or PNG file for --layout png")->required();
    c_synth->add_option("--config", synth.config, "Generator spec JSON");
    synth.count_opt = c_synth->add_option("--count", synth.count, "Number of patches");
    synth.height_opt = c_synth->add_option("--height", synth.height, "Patch or image height");
    synth.width_opt = c_synth->add_option("--width", synth.width, "Patch or image width");
    synth.seed_opt = c_synth->add_option("--seed", synth.seed, "Generator seed");
    c_synth->add_option("--layout", synth.layout, "patches, tiles (tile directory) or png (single image)")
        ->check(CLI::IsMember({"patches", "tiles", "png"}))
        ->capture_default_str();
    c_synth->add_option("--tile-size", synth.tile_size, "Tile size for tiles and png layouts")->capture_default_str();

    AugmentArgs aug;
    auto* c_aug = app.add_subcommand("augment", "Augment every PNG of a directory");
    c_aug->add_option("--config", aug.config, "Augmentation config JSON")->required();
    c_aug->add_option("--in", aug.in, "Input directory")->required();
    c_aug->add_option("--out", aug.out, "Output directory")->required();
    aug.seed_opt = c_aug->add_option("--seed", aug.seed, "Overrides the config seed");
    c_aug->add_flag("--neutral", aug.neutral, "Replace every sampled parameter by its identity value");

    FitArgs fit;
    auto* c_fit = app.add_subcommand("fit-profile", "Fit a normalization profile to a template set");
    c_fit->add_option("--method", fit.method, "macenko, lut, identity or grayscale")->capture_default_str();
    c_fit->add_option("--template", fit.template_dir, "Template patch directory")->required();
    c_fit->add_option("--source", fit.source_dir, "Source patch directory for lut (default: the template)");
    c_fit->add_option("--out", fit.out, "Profile JSON to write")->required();
    c_fit->add_option("--fit-date", fit.fit_date, "Date recorded in the profile (default SOURCE_DATE_EPOCH or today)");
    c_fit->add_option("--template-id", fit.template_id, "Template name recorded in the profile");
    add_fit_options(c_fit, fit.fit);

    NormalizeArgs norm;
    auto* c_norm = app.add_subcommand("normalize", "Normalize a patch directory or a tiled image");
    c_norm->add_option("--method", norm.method, "identity, grayscale, macenko, lut or network")->required();
    c_norm->add_option("--profile", norm.profile, "Template profile (macenko, lut)");
    c_norm->add_option("--source-profile", norm.source_profile, "Pre-fitted source profile (macenko)");
    c_norm->add_option("--save-source-profile", norm.save_source_profile, "Write the source profile used (macenko)");
    c_norm->add_option("--weights", norm.weights, "SNN1 weights (network)");
    c_norm->add_option("--in", norm.in, "Input patch directory");
    c_norm->add_option("--tiled", norm.tiled, "Tile directory or single PNG to stream");
    c_norm->add_option("--out", norm.out, "Output directory")->required();
    c_norm->add_option("--tile-size", norm.tile_size, "Tile size when --tiled is a single PNG")->capture_default_str();
    c_norm->add_option("--fit-tiles", norm.fit_tiles, "Tiles sampled to fit the source profile")->capture_default_str();
    add_fit_options(c_norm, norm.fit);

    TrainArgs train;
    auto* c_train = app.add_subcommand("train-norm", "Train the neural stain normalizer");
    c_train->add_option("--in", train.in, "Training patch directory");
    c_train->add_option("--synthetic", train.synthetic, "Train on this many synthetic patches instead");
    c_train->add_option("--synth-config", train.synth_config, "Generator spec JSON for --synthetic");
    c_train->add_option("--patch-size", train.patch_size, "Synthetic patch size")->capture_default_str();
    c_train->add_option("--synth-seed", train.synth_seed, "Synthetic generator seed")->capture_default_str();
    c_train->add_option("--out", train.out, "SNN1 weights to write")->required();
    c_train->add_option("--log", train.log, "Per-epoch CSV log");
    c_train->add_option("--config", train.config, "Training config JSON");
    train.epochs_opt = c_train->add_option("--epochs", train.epochs, "Maximum epochs");
    train.batch_opt = c_train->add_option("--batch-size", train.batch_size, "Mini-batch size");
    train.patience_opt = c_train->add_option("--patience", train.patience, "Epochs without improvement per rung");
    train.seed_opt = c_train->add_option("--seed", train.seed, "Initialisation, shuffling and augmentation seed");
    c_train->add_flag("--no-augment", train.no_augment, "Train on identity pairs");
    c_train->add_flag("--no-batch-norm", train.no_batch_norm, "Drop the batch norm layers");
    c_train->add_option("--filters", train.filters, "Encoder filters per stage")->delimiter(',')->capture_default_str();
    c_train->add_flag("--verbose", train.verbose, "Print one line per epoch to stderr");

    AnalyzeArgs an;
    auto* c_an = app.add_subcommand("analyze", "HSV colour statistics per dataset");
    c_an->add_option("--in", an.in, "Dataset directory (repeatable)")->required();
    c_an->add_option("--id", an.ids, "Dataset name per --in (default: directory name)");
    c_an->add_option("--out", an.out, "Statistics CSV")->required();
    c_an->add_option("--scatter", an.scatter, "Hue/saturation scatter CSV");

    RankArgs rank;
    auto* c_rank = app.add_subcommand("rank", "Aggregate method ranks over datasets");
    c_rank->add_option("--scores", rank.scores, "Scores CSV")->required();
    c_rank->add_option("--out", rank.out, "Ranking CSV")->required();

    BenchArgs bench;
    auto* c_bench = app.add_subcommand("bench", "Apply throughput of the normalization methods");
    c_bench->add_option("--tiled", bench.tiled, "Tile directory or single PNG (default: synthetic)");
    c_bench->add_option("--size", bench.size, "Synthetic image side")->capture_default_str();
    c_bench->add_option("--seed", bench.seed, "Synthetic image seed")->capture_default_str();
    c_bench->add_option("--tile-size", bench.tile_size, "Tile size")->capture_default_str();
    bench.methods_opt =
        c_bench->add_option("--methods", bench.methods, "Methods to time")->delimiter(',')->capture_default_str();
    c_bench->add_option("--weights", bench.weights, "SNN1 weights; adds the network method");
    c_bench->add_option("--template", bench.template_dir, "Template patches (default: the image itself)");
    c_bench->add_option("--runs", bench.opt.runs, "Timed passes; the median is reported")->capture_default_str();
    c_bench->add_option("--warmup", bench.opt.warmup_tiles, "Untimed leading tiles")->capture_default_str();
    c_bench->add_option("--out", bench.out, "Benchmark CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        (void)app.exit(e);
        return kExitConfig;
    }

    try {
        if (*c_synth) return run_synth(global, synth);
        if (*c_aug) return run_augment(global, aug);
        if (*c_fit) return run_fit_profile(global, fit);
        if (*c_norm) return run_normalize(global, norm);
        if (*c_train) return run_train(global, train);
        if (*c_an) return run_analyze(global, an);
        if (*c_rank) return run_rank(global, rank);
        if (*c_bench) return run_bench(global, bench);
    } catch (const Error& e) {
        std::cerr << "stainkit: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const json::exception& e) {
        std::cerr << "stainkit: InvalidConfig: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "stainkit: Io: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::bad_alloc&) {
        std::cerr << "stainkit: out of memory\n";
        return kExitCompute;
    } catch (const std::exception& e) {
        std::cerr << "stainkit: " << e.what() << "\n";
        return kExitCompute;
    }
    return kExitConfig;
}
