// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "streetgs/error.hpp"

namespace streetgs {

/// Planar (channel-major) raster of doubles. Pixel (x, y) of channel c lives at
/// data[(c * height + y) * width + x], which is also the wire layout.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels = 3, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }

    std::size_t index(int c, int y, int x) const noexcept {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Image& o) const noexcept {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    bool operator==(const Image&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.channels()) + "x" +
                            std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                            std::to_string(b.channels()) + "x" + std::to_string(b.height()) + "x" +
                            std::to_string(b.width()));
    }
}

inline Image clamp01(Image img) {
    for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

/// Per-pixel depth in meters with an explicit validity mask. The first
/// `top_mask_rows` rows are always invalid.
struct DepthMap {
    int width = 0;
    int height = 0;
    int top_mask_rows = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    DepthMap(int w, int h, int mask_rows = 0)
        : width(w), height(h), top_mask_rows(std::clamp(mask_rows, 0, h)),
          values(static_cast<std::size_t>(w) * h, 0.0), valid(static_cast<std::size_t>(w) * h, 0) {}

    std::size_t index(int y, int x) const noexcept { return static_cast<std::size_t>(y) * width + x; }
    bool is_valid(int y, int x) const noexcept { return valid[index(y, x)] != 0; }
    double at(int y, int x) const noexcept { return values[index(y, x)]; }

    void set(int y, int x, double d) noexcept {
        values[index(y, x)] = d;
        valid[index(y, x)] = 1;
    }

    std::size_t valid_count() const noexcept {
        return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
    }

    /// Dense single-channel view; invalid pixels read as 0.
    Image to_image() const {
        Image out(width, height, 1);
        for (std::size_t i = 0; i < values.size(); ++i) out.data()[i] = valid[i] ? values[i] : 0.0;
        return out;
    }

    bool operator==(const DepthMap&) const = default;
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Reads an 8- or 16-bit PNG (gray, gray+alpha, RGB or RGBA) into an RGB image in [0, 1].
inline Image read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw MissingFile("cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("corrupt png " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    const auto color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buffer(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = buffer.data() + rowbytes * y;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = rows[y][3 * x + c] / 255.0;
    return img;
}

/// Writes an RGB (or single-channel, replicated) image as 8-bit PNG; values are clamped to [0, 1].
inline void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels() != 3 && img.channels() != 1) throw ShapeMismatch("write_png expects 1 or 3 channels");
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    const int w = img.width();
    const int h = img.height();
    std::vector<png_byte> buffer(static_cast<std::size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(img.channels() == 3 ? c : 0, y, x);
                buffer[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * 3;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace streetgs
