#include "dgp/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "dgp/errors.hpp"

namespace dgp {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

uint8_t to_byte(float v) {
    float s = std::lround(v * 255.0f);
    return uint8_t(s < 0 ? 0 : (s > 255 ? 255 : s));
}

void write_png_bytes(const std::string& path, const std::vector<uint8_t>& rows, int w, int h,
                     int channels) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("png: cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: write error: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> ptrs(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        ptrs[size_t(y)] = const_cast<png_bytep>(rows.data() + size_t(y) * w * channels);
    png_write_image(png, ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<uint8_t> read_png_bytes(const std::string& path, int& w, int& h, int& channels) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("png: cannot open: " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("png: not a PNG file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: read error: " + path);
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    w = int(png_get_image_width(png, info));
    h = int(png_get_image_height(png, info));
    channels = int(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: unsupported channel count in " + path);
    }
    std::vector<uint8_t> rows(size_t(w) * h * channels);
    std::vector<png_bytep> ptrs(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) ptrs[size_t(y)] = rows.data() + size_t(y) * w * channels;
    png_read_image(png, ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return rows;
}

}  // namespace

void write_png(const std::string& path, const Tensor<float>& img) {
    if (img.shape.rank != 3 || (img.shape[0] != 3 && img.shape[0] != 1))
        throw DomainError("write_png: expected (3,H,W) or (1,H,W), got " + img.shape.str());
    const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    std::vector<uint8_t> rows(size_t(w) * h * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                rows[(size_t(y) * w + x) * c + ch] = to_byte(img.data[(int64_t(ch) * h + y) * w + x]);
    write_png_bytes(path, rows, w, h, c);
}

Tensor<float> read_png(const std::string& path) {
    int w, h, c;
    std::vector<uint8_t> rows = read_png_bytes(path, w, h, c);
    Tensor<float> img(Shape{c, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                img.data[(int64_t(ch) * h + y) * w + x] =
                    float(rows[(size_t(y) * w + x) * c + ch]) / 255.0f;
    return img;
}

void write_mask_png(const std::string& path, const Tensor<float>& mask) {
    if (mask.shape.rank != 2) throw DomainError("write_mask_png: expected (H,W)");
    const int h = mask.shape[0], w = mask.shape[1];
    std::vector<uint8_t> rows(size_t(w) * h);
    for (int64_t i = 0; i < mask.numel(); ++i) {
        const float v = mask.data[i];
        if (v != 0.0f && v != 1.0f) throw DomainError("write_mask_png: mask must be binary");
        rows[size_t(i)] = v == 1.0f ? 255 : 0;
    }
    write_png_bytes(path, rows, w, h, 1);
}

Tensor<float> read_mask_png(const std::string& path) {
    int w, h, c;
    std::vector<uint8_t> rows = read_png_bytes(path, w, h, c);
    if (c != 1) throw IoError("mask: expected single-channel PNG: " + path);
    Tensor<float> mask(Shape{h, w});
    for (int64_t i = 0; i < mask.numel(); ++i) {
        const uint8_t v = rows[size_t(i)];
        if (v != 0 && v != 255)
            throw IoError("mask: pixels must be 0 (missing) or 255 (observed): " + path);
        mask.data[i] = v == 255 ? 1.0f : 0.0f;
    }
    return mask;
}

}  // namespace dgp
