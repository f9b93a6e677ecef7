// Writes one synthetic patch augmented by every category to a directory.
// Usage: augment_gallery OUT_DIR [seed]

#include <cstdio>
#include <cstdlib>
#include <string>

#include <stainkit/augment.hpp>
#include <stainkit/io/csv.hpp>
#include <stainkit/io/png.hpp>
#include <stainkit/synthetic.hpp>

namespace sk = stainkit;
namespace io = stainkit::io;

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s OUT_DIR [seed]\n", argv[0]);
        return 2;
    }
    const io::fs::path out = argv[1];
    const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 0;
    io::fs::create_directories(out);

    sk::SyntheticSpec spec;
    spec.height = spec.width = 128;
    spec.seed = seed;
    const sk::Patch patch = sk::synthesize_patch(spec, 0);
    io::write_png(out / "original.png", patch);

    std::vector<io::CsvRow> rows;
    for (const auto& [cat, name] : sk::kCategoryNames) {
        const auto cfg = sk::AugmentConfig::defaults(cat, seed);
        for (std::uint64_t i = 0; i < 4; ++i) {
            const auto [img, params] = sk::augment(patch, cfg, i);
            const std::string file = std::string(name) + "_" + std::to_string(i) + ".png";
            io::write_png(out / file, img);
            rows.push_back(io::manifest_row(file, i, cat, params));
        }
    }
    io::write_text(out / "manifest.csv", io::csv_text(io::kManifestHeader, rows));
    std::printf("wrote %zu augmented patches to %s\n", rows.size(), out.c_str());
}
