#ifndef STAINKIT_IO_DIGEST_HPP
#define STAINKIT_IO_DIGEST_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "../error.hpp"
#include "json.hpp"

namespace stainkit::io {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
            throw Error(ErrorKind::Io, "SHA-256 initialisation failed");
        }
    }

    Sha256& update(std::string_view bytes) {
        EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
        return *this;
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int n = 0;
        EVP_DigestFinal_ex(ctx_.get(), md.data(), &n);
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < n; ++i) {
            out += digits[md[i] >> 4];
            out += digits[md[i] & 15];
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_file(const fs::path& path) { return Sha256().update(read_text(path)).hex(); }

/// Hash over the sorted relative paths and contents of every regular file
/// below `root` for which `keep` holds.
inline std::string tree_digest(const fs::path& root,
                               const std::function<bool(const fs::path&)>& keep = [](const fs::path&) { return true; }) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            const fs::path rel = fs::relative(e.path(), root);
            if (keep(rel)) files.push_back(rel);
        }
    }
    std::sort(files.begin(), files.end());
    Sha256 h;
    for (const auto& f : files) {
        h.update(f.generic_string()).update(std::string_view("\0", 1)).update(sha256_file(root / f));
    }
    return h.hex();
}

} // namespace stainkit::io

#endif
