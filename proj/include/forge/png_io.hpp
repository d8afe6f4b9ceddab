#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "forge/error.hpp"
#include "forge/image.hpp"

namespace forge::png {

// Encode an Image as 8-bit RGB PNG bytes.
inline std::vector<std::uint8_t> encode(const Image& img) {
    png_structp p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!p) throw Error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(p);
    if (!info) {
        png_destroy_write_struct(&p, nullptr);
        throw Error("png_create_info_struct failed");
    }
    std::vector<std::uint8_t> out;
    if (setjmp(png_jmpbuf(p))) {
        png_destroy_write_struct(&p, &info);
        throw Error("png encode failed");
    }
    png_set_write_fn(
        p, &out,
        [](png_structp pp, png_bytep data, png_size_t len) {
            auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(pp));
            buf->insert(buf->end(), data, data + len);
        },
        nullptr);
    png_set_IHDR(p, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(p, info);
    std::vector<std::uint8_t> bytes = img.to_bytes();
    for (int y = 0; y < img.height; ++y)
        png_write_row(p, bytes.data() + static_cast<std::size_t>(y) * img.width * 3);
    png_write_end(p, nullptr);
    png_destroy_write_struct(&p, &info);
    return out;
}

// Decode 8-bit RGB(A)/gray PNG bytes into an Image.
inline Image decode(const std::uint8_t* data, std::size_t size) {
    if (size < 8 || png_sig_cmp(data, 0, 8)) throw ParseError("not a PNG stream");
    png_structp p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!p) throw Error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(p);
    if (!info) {
        png_destroy_read_struct(&p, nullptr, nullptr);
        throw Error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(p))) {
        png_destroy_read_struct(&p, &info, nullptr);
        throw ParseError("png decode failed");
    }
    struct Cursor {
        const std::uint8_t* data;
        std::size_t size;
        std::size_t pos;
    } cur{data, size, 0};
    png_set_read_fn(p, &cur, [](png_structp pp, png_bytep dst, png_size_t len) {
        auto* c = static_cast<Cursor*>(png_get_io_ptr(pp));
        if (c->pos + len > c->size) png_error(pp, "unexpected end of PNG data");
        std::memcpy(dst, c->data + c->pos, len);
        c->pos += len;
    });
    png_read_info(p, info);
    png_set_expand(p);
    png_set_strip_16(p);
    png_set_strip_alpha(p);
    png_set_gray_to_rgb(p);
    png_read_update_info(p, info);
    int w = static_cast<int>(png_get_image_width(p, info));
    int h = static_cast<int>(png_get_image_height(p, info));
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        png_read_row(p, bytes.data() + static_cast<std::size_t>(y) * w * 3, nullptr);
    png_destroy_read_struct(&p, &info, nullptr);
    return Image::from_bytes(w, h, bytes);
}

inline Image decode(const std::vector<std::uint8_t>& bytes) { return decode(bytes.data(), bytes.size()); }

inline void write_file(const Image& img, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = encode(img);
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw Error("cannot open for write: " + path.string());
    std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
}

inline Image read_file(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw Error("cannot open for read: " + path.string());
    std::fseek(f, 0, SEEK_END);
    long n = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    std::size_t got = std::fread(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (got != bytes.size()) throw Error("short read: " + path.string());
    return decode(bytes);
}

}  // namespace forge::png
