#include "trifuse/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "trifuse/common.hpp"

namespace trifuse {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char quantize(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<unsigned char>(std::lround(c * 255.0f));
}

// --- PPM / PGM (P6 / P5, maxval 255) ---

int pnm_next_int(std::FILE* f, const std::string& path) {
    int c = std::fgetc(f);
    // skip whitespace and '#' comments
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = std::fgetc(f);
        } else if (std::isspace(c)) {
            c = std::fgetc(f);
        } else {
            break;
        }
    }
    require(c != EOF && std::isdigit(c), path + ": malformed PNM header");
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = std::fgetc(f);
    }
    return value;
}

ImageTensor load_pnm(std::FILE* f, const std::string& path, int channels) {
    const int w = pnm_next_int(f, path);
    const int h = pnm_next_int(f, path);
    const int maxval = pnm_next_int(f, path);
    require(w > 0 && h > 0, path + ": bad PNM dimensions");
    require(maxval == 255, path + ": only maxval 255 PNM supported");
    ImageTensor img(h, w, channels);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * channels);
    for (int y = 0; y < h; ++y) {
        require(std::fread(row.data(), 1, row.size(), f) == row.size(),
                path + ": truncated PNM payload");
        for (std::size_t i = 0; i < row.size(); ++i)
            img.data[static_cast<std::size_t>(y) * row.size() + i] = row[i] / 255.0f;
    }
    return img;
}

void save_pnm(const std::string& path, const ImageTensor& img, int channels) {
    require(img.channels == channels,
            path + ": channel count does not match the PNM variant");
    FilePtr f(std::fopen(path.c_str(), "wb"));
    require(f != nullptr, path + ": cannot open for writing");
    std::fprintf(f.get(), "%s\n%d %d\n255\n", channels == 3 ? "P6" : "P5", img.width,
                 img.height);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * channels);
    for (int y = 0; y < img.height; ++y) {
        for (std::size_t i = 0; i < row.size(); ++i)
            row[i] = quantize(img.data[static_cast<std::size_t>(y) * row.size() + i]);
        require(std::fwrite(row.data(), 1, row.size(), f.get()) == row.size(),
                path + ": short write");
    }
}

// --- PNG via libpng ---

ImageTensor load_png(std::FILE* f, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw UsageError("libpng init failed");
    }
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw UsageError(path + ": corrupt PNG");
    }
    png_init_io(png, f);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    require(channels == 1 || channels == 3, path + ": unsupported PNG channel layout");

    const std::size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageTensor img(static_cast<int>(h), static_cast<int>(w), channels);
    for (png_uint_32 y = 0; y < h; ++y) {
        const unsigned char* src = buf.data() + y * stride;
        float* dst = img.data.data() + static_cast<std::size_t>(y) * w * channels;
        for (std::size_t i = 0; i < static_cast<std::size_t>(w) * channels; ++i)
            dst[i] = src[i] / 255.0f;
    }
    return img;
}

void save_png(const std::string& path, const ImageTensor& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    require(f != nullptr, path + ": cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw UsageError("libpng init failed");
    }
    std::vector<unsigned char> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw UsageError(path + ": PNG write failed");
    }
    png_init_io(png, f.get());
    const int color = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    buf.resize(stride * img.height);
    rows.resize(img.height);
    for (int y = 0; y < img.height; ++y) {
        rows[y] = buf.data() + y * stride;
        for (std::size_t i = 0; i < stride; ++i)
            rows[y][i] = quantize(img.data[y * stride + i]);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageTensor load_image(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    require(f != nullptr, path + ": cannot open");
    unsigned char magic[8] = {0};
    const std::size_t n = std::fread(magic, 1, sizeof(magic), f.get());
    require(n >= 2, path + ": file too short");
    std::rewind(f.get());

    static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (n >= 8 && std::memcmp(magic, png_sig, 8) == 0) return load_png(f.get(), path);
    if (magic[0] == 'P' && (magic[1] == '6' || magic[1] == '5')) {
        std::fseek(f.get(), 2, SEEK_SET);
        return load_pnm(f.get(), path, magic[1] == '6' ? 3 : 1);
    }
    throw UsageError(path + ": unsupported image format (PNG, P6 PPM, P5 PGM)");
}

void save_image(const std::string& path, const ImageTensor& img) {
    require(img.height > 0 && img.width > 0, path + ": refusing to save an empty image");
    require(img.channels == 1 || img.channels == 3, path + ": channels must be 1 or 3");
    const auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == "png") {
        save_png(path, img);
    } else if (ext == "ppm") {
        save_pnm(path, img, 3);
    } else if (ext == "pgm") {
        save_pnm(path, img, 1);
    } else {
        throw UsageError(path + ": unsupported output extension (png, ppm, pgm)");
    }
}

bool is_image_file(const std::string& filename) {
    const auto dot = filename.find_last_of('.');
    if (dot == std::string::npos) return false;
    std::string ext = filename.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == "png" || ext == "ppm" || ext == "pgm";
}

}  // namespace trifuse
