#ifndef STAINKIT_IO_PNG_HPP
#define STAINKIT_IO_PNG_HPP

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "../error.hpp"
#include "../image.hpp"

namespace stainkit::io {

namespace fs = std::filesystem;

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

inline Patch patch_from_bytes(std::size_t h, std::size_t w, const std::uint8_t* rgb) {
    Patch p(h, w);
    auto d = p.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = from_byte(rgb[i]);
    }
    return p;
}

inline std::vector<std::uint8_t> patch_to_bytes(const Patch& p) {
    std::vector<std::uint8_t> out(p.data().size());
    std::transform(p.data().begin(), p.data().end(), out.begin(), to_byte);
    return out;
}

/// Any PNG colour type is decoded to 8-bit RGB; alpha is discarded.
inline Patch read_png(const fs::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw Error(ErrorKind::Io, "cannot decode " + path.string() + ": " + img.message);
    }
    // Decoding with alpha keeps libpng from compositing onto a background.
    img.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw Error(ErrorKind::Io, "cannot decode " + path.string() + ": " + msg);
    }
    Patch p(img.height, img.width);
    for (std::size_t i = 0; i < p.pixel_count(); ++i) {
        auto px = p.pixel(i);
        for (std::size_t c = 0; c < 3; ++c) px[c] = from_byte(buf[4 * i + c]);
    }
    return p;
}

inline void write_png_bytes(const fs::path& path, std::size_t h, std::size_t w, const std::uint8_t* rgb) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, rgb, 0, nullptr)) {
        throw Error(ErrorKind::Io, "cannot write " + path.string() + ": " + img.message);
    }
}

inline void write_png(const fs::path& path, const Patch& p) {
    const auto bytes = patch_to_bytes(p);
    write_png_bytes(path, p.height(), p.width(), bytes.data());
}

/// Row-at-a-time decoder so images larger than memory can be streamed.
class PngRowReader {
public:
    explicit PngRowReader(const fs::path& path) : path_(path) {
        file_ = std::fopen(path.c_str(), "rb");
        if (!file_) {
            throw Error(ErrorKind::Io, "cannot open " + path.string());
        }
        png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, nullptr);
        info_ = png_ ? png_create_info_struct(png_) : nullptr;
        if (!info_) {
            close();
            throw Error(ErrorKind::Io, "libpng initialisation failed");
        }
        if (setjmp(png_jmpbuf(png_))) {
            close();
            throw Error(ErrorKind::Io, "cannot decode " + path.string());
        }
        png_init_io(png_, file_);
        png_read_info(png_, info_);
        if (png_get_interlace_type(png_, info_) != PNG_INTERLACE_NONE) {
            close();
            throw Error(ErrorKind::Io, path.string() + ": interlaced PNGs cannot be streamed");
        }
        png_set_expand(png_);
        png_set_strip_16(png_);
        png_set_strip_alpha(png_);
        png_set_gray_to_rgb(png_);
        png_read_update_info(png_, info_);
        width_ = png_get_image_width(png_, info_);
        height_ = png_get_image_height(png_, info_);
    }

    PngRowReader(const PngRowReader&) = delete;
    PngRowReader& operator=(const PngRowReader&) = delete;
    ~PngRowReader() { close(); }

    [[nodiscard]] std::size_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t height() const noexcept { return height_; }

    /// Decodes the next row into `rgb` (3 * width bytes).
    void read_row(std::uint8_t* rgb) {
        if (row_ >= height_) {
            throw Error(ErrorKind::Io, path_.string() + ": read past the last row");
        }
        if (setjmp(png_jmpbuf(png_))) {
            throw Error(ErrorKind::Io, "corrupt data in " + path_.string() + " at row " + std::to_string(row_));
        }
        png_read_row(png_, rgb, nullptr);
        ++row_;
    }

private:
    static void on_error(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }

    void close() {
        if (png_) {
            png_destroy_read_struct(&png_, info_ ? &info_ : nullptr, nullptr);
        }
        if (file_) {
            std::fclose(file_);
        }
        png_ = nullptr;
        info_ = nullptr;
        file_ = nullptr;
    }

    fs::path path_;
    std::FILE* file_ = nullptr;
    png_structp png_ = nullptr;
    png_infop info_ = nullptr;
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::size_t row_ = 0;
};

/// Row-at-a-time encoder, the counterpart of PngRowReader.
class PngRowWriter {
public:
    PngRowWriter(const fs::path& path, std::size_t width, std::size_t height) : path_(path), height_(height) {
        file_ = std::fopen(path.c_str(), "wb");
        if (!file_) {
            throw Error(ErrorKind::Io, "cannot create " + path.string());
        }
        png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, nullptr);
        info_ = png_ ? png_create_info_struct(png_) : nullptr;
        if (!info_) {
            close();
            throw Error(ErrorKind::Io, "libpng initialisation failed");
        }
        if (setjmp(png_jmpbuf(png_))) {
            close();
            throw Error(ErrorKind::Io, "cannot write " + path.string());
        }
        png_init_io(png_, file_);
        png_set_IHDR(png_, info_, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png_, info_);
    }

    PngRowWriter(const PngRowWriter&) = delete;
    PngRowWriter& operator=(const PngRowWriter&) = delete;
    ~PngRowWriter() { close(); }

    void write_row(const std::uint8_t* rgb) {
        if (setjmp(png_jmpbuf(png_))) {
            throw Error(ErrorKind::Io, "cannot write " + path_.string());
        }
        png_write_row(png_, rgb);
        if (++row_ == height_) {
            png_write_end(png_, nullptr);
        }
    }

private:
    static void on_error(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }

    void close() {
        if (png_) {
            png_destroy_write_struct(&png_, info_ ? &info_ : nullptr);
        }
        if (file_) {
            std::fclose(file_);
        }
        png_ = nullptr;
        info_ = nullptr;
        file_ = nullptr;
    }

    fs::path path_;
    std::FILE* file_ = nullptr;
    png_structp png_ = nullptr;
    png_infop info_ = nullptr;
    std::size_t height_ = 0;
    std::size_t row_ = 0;
};

} // namespace stainkit::io

#endif
