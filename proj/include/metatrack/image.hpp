#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metatrack/tensor.hpp"

namespace metatrack {

// Images are [3, H, W] tensors with values in [0,1], RGB order.

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Tensor planes_from_rgb8(const std::vector<unsigned char>& buf, int64_t h, int64_t w) {
    Tensor out({3, h, w});
    double* r = out.data();
    double* g = r + h * w;
    double* b = g + h * w;
    for (int64_t i = 0; i < h * w; ++i) {
        r[i] = buf[static_cast<size_t>(3 * i)] / 255.0;
        g[i] = buf[static_cast<size_t>(3 * i + 1)] / 255.0;
        b[i] = buf[static_cast<size_t>(3 * i + 2)] / 255.0;
    }
    return out;
}

inline std::vector<unsigned char> rgb8_from_planes(const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw std::invalid_argument("save_image: [3,H,W] tensor required");
    const int64_t h = img.dim(1), w = img.dim(2);
    std::vector<unsigned char> buf(static_cast<size_t>(3 * h * w));
    const double* r = img.data();
    const double* g = r + h * w;
    const double* b = g + h * w;
    auto q = [](double v) {
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        return static_cast<unsigned char>(v * 255.0 + 0.5);
    };
    for (int64_t i = 0; i < h * w; ++i) {
        buf[static_cast<size_t>(3 * i)] = q(r[i]);
        buf[static_cast<size_t>(3 * i + 1)] = q(g[i]);
        buf[static_cast<size_t>(3 * i + 2)] = q(b[i]);
    }
    return buf;
}

} // namespace detail

inline Tensor load_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw std::runtime_error("load_png: cannot open " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw std::runtime_error("load_png: decode failed for " + path + ": " + msg);
    }
    return detail::planes_from_rgb8(buf, image.height, image.width);
}

inline void save_png(const std::string& path, const Tensor& img) {
    auto buf = detail::rgb8_from_planes(img);
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.dim(2));
    image.height = static_cast<png_uint_32>(img.dim(1));
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("save_png: write failed for " + path + ": " + image.message);
}

inline Tensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_ppm: cannot open " + path);
    std::string magic;
    int64_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("load_ppm: unsupported header in " + path);
    in.get(); // single whitespace after the header
    std::vector<unsigned char> buf(static_cast<size_t>(3 * w * h));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error("load_ppm: truncated pixel data in " + path);
    return detail::planes_from_rgb8(buf, h, w);
}

inline void save_ppm(const std::string& path, const Tensor& img) {
    auto buf = detail::rgb8_from_planes(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_ppm: cannot open " + path);
    out << "P6\n" << img.dim(2) << " " << img.dim(1) << "\n255\n";
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("save_ppm: write failed for " + path);
}

inline Tensor load_image(const std::string& path) {
    if (detail::ends_with(path, ".ppm")) return load_ppm(path);
    return load_png(path);
}

inline void save_image(const std::string& path, const Tensor& img) {
    if (detail::ends_with(path, ".ppm")) save_ppm(path, img);
    else save_png(path, img);
}

} // namespace metatrack
