#ifndef STAINKIT_IO_PATCH_SET_HPP
#define STAINKIT_IO_PATCH_SET_HPP

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "../error.hpp"
#include "../image.hpp"
#include "png.hpp"

namespace stainkit::io {

inline bool has_png_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}

/// Regular .png files directly inside `dir`, sorted by filename.
inline std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        throw Error(ErrorKind::Io, dir.string() + " is not a readable directory");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && has_png_extension(entry.path())) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return files;
}

/// Decodes every patch and checks that they share one size.
inline std::vector<Patch> load_patch_set(const fs::path& dir) {
    std::vector<Patch> patches;
    for (const auto& f : list_pngs(dir)) {
        patches.push_back(read_png(f));
        if (!patches.back().same_shape(patches.front())) {
            throw Error(ErrorKind::Io, f.string() + " is " + std::to_string(patches.back().height()) + "x" +
                                           std::to_string(patches.back().width()) + ", the set is " +
                                           std::to_string(patches.front().height()) + "x" +
                                           std::to_string(patches.front().width()));
        }
    }
    return patches;
}

inline void save_patch_set(const fs::path& dir, std::span<const Patch> patches, std::string_view prefix = "patch_") {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.png", i);
        write_png(dir / (std::string(prefix) + name), patches[i]);
    }
}

} // namespace stainkit::io

#endif
