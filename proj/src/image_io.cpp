// Copyright 2026 The PatchForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "patchforge/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace patchforge {

namespace {

uint8_t quantize(double v) {
    const double scaled = std::floor(v * 255.0 + 0.5);
    if (scaled <= 0.0) return 0;
    if (scaled >= 255.0) return 255;
    return static_cast<uint8_t>(scaled);
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FileHandle = std::unique_ptr<std::FILE, FileCloser>;

FileHandle open_file(const std::filesystem::path& path, const char* mode) {
    FileHandle f(std::fopen(path.c_str(), mode));
    if (!f) {
        fail(mode[0] == 'r' ? ErrorKind::MissingFile : ErrorKind::IoFailure,
             "cannot open " + path.string());
    }
    return f;
}

ImageTensor load_png_file(std::FILE* fp, const std::string& name) {
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::IoFailure, "libpng init failed for " + name);
    }
    std::vector<uint8_t> bytes;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::IoFailure, "failed to decode PNG " + name);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if ((color_type & PNG_COLOR_MASK_ALPHA) != 0 ||
        png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::IoFailure,
             "unsupported channel count in " + name + ": " + std::to_string(channels));
    }
    const size_t row_bytes = png_get_rowbytes(png, info);
    bytes.resize(row_bytes * height);
    rows.resize(height);
    for (png_uint_32 r = 0; r < height; ++r) {
        rows[r] = bytes.data() + r * row_bytes;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    ImageTensor out(static_cast<int>(height), static_cast<int>(width), channels);
    for (int r = 0; r < out.rows; ++r) {
        const uint8_t* row = bytes.data() + static_cast<size_t>(r) * row_bytes;
        for (int c = 0; c < out.cols; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                out.at(ch, r, c) = row[c * channels + ch] / 255.0;
            }
        }
    }
    return out;
}

ImageTensor load_pgm_file(std::FILE* fp, const std::string& name) {
    auto next_token = [&]() -> long {
        int ch = std::fgetc(fp);
        while (ch != EOF) {
            if (ch == '#') {
                while (ch != EOF && ch != '\n') ch = std::fgetc(fp);
            } else if (std::isspace(ch)) {
                ch = std::fgetc(fp);
            } else {
                break;
            }
        }
        if (ch == EOF) fail(ErrorKind::IoFailure, "truncated PGM header in " + name);
        long value = 0;
        while (ch != EOF && std::isdigit(ch)) {
            value = value * 10 + (ch - '0');
            ch = std::fgetc(fp);
        }
        return value;
    };

    char magic[2];
    if (std::fread(magic, 1, 2, fp) != 2 || magic[0] != 'P' || magic[1] != '5') {
        fail(ErrorKind::IoFailure, "not a binary PGM: " + name);
    }
    const long width = next_token();
    const long height = next_token();
    const long maxval = next_token();
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        fail(ErrorKind::IoFailure, "unsupported PGM header in " + name);
    }
    std::vector<uint8_t> bytes(static_cast<size_t>(width) * height);
    if (std::fread(bytes.data(), 1, bytes.size(), fp) != bytes.size()) {
        fail(ErrorKind::IoFailure, "truncated PGM payload in " + name);
    }
    ImageTensor out(static_cast<int>(height), static_cast<int>(width), 1);
    for (size_t i = 0; i < bytes.size(); ++i) {
        out.data[i] = bytes[i] / static_cast<double>(maxval);
    }
    return out;
}

} // namespace

ImageTensor load_image(const std::filesystem::path& path) {
    FileHandle f = open_file(path, "rb");
    uint8_t sig[8] = {0};
    const size_t got = std::fread(sig, 1, sizeof(sig), f.get());
    std::rewind(f.get());
    if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) {
        return load_png_file(f.get(), path.string());
    }
    if (got >= 2 && sig[0] == 'P' && sig[1] == '5') {
        return load_pgm_file(f.get(), path.string());
    }
    fail(ErrorKind::IoFailure, "unrecognized image format: " + path.string());
}

void save_png(const ImageTensor& image, const std::filesystem::path& path,
              const PngMetadata& meta) {
    if (image.channels != 1 && image.channels != 3) {
        fail(ErrorKind::ShapeMismatch,
             "PNG save supports 1 or 3 channels, got " + image.shape_string());
    }
    FileHandle f = open_file(path, "wb");
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::IoFailure, "libpng init failed for " + path.string());
    }
    std::vector<uint8_t> bytes;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::IoFailure, "failed to encode PNG " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, image.cols, image.rows, 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    if (meta.dpi > 0.0) {
        const auto per_meter = static_cast<png_uint_32>(std::lround(meta.dpi / 0.0254));
        png_set_pHYs(png, info, per_meter, per_meter, PNG_RESOLUTION_METER);
    }
    if (!meta.description.empty()) {
        png_text text;
        std::memset(&text, 0, sizeof(text));
        text.compression = PNG_TEXT_COMPRESSION_NONE;
        char key[] = "Description";
        text.key = key;
        text.text = const_cast<char*>(meta.description.c_str());
        text.text_length = meta.description.size();
        png_set_text(png, info, &text, 1);
    }
    png_write_info(png, info);

    const size_t row_bytes = static_cast<size_t>(image.cols) * image.channels;
    bytes.resize(row_bytes * image.rows);
    rows.resize(image.rows);
    for (int r = 0; r < image.rows; ++r) {
        uint8_t* row = bytes.data() + static_cast<size_t>(r) * row_bytes;
        rows[r] = row;
        for (int c = 0; c < image.cols; ++c) {
            for (int ch = 0; ch < image.channels; ++ch) {
                row[c * image.channels + ch] = quantize(image.at(ch, r, c));
            }
        }
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_pgm(const ImageTensor& image, const std::filesystem::path& path) {
    if (image.channels != 1) {
        fail(ErrorKind::ShapeMismatch, "PGM save needs 1 channel, got " + image.shape_string());
    }
    FileHandle f = open_file(path, "wb");
    std::fprintf(f.get(), "P5\n%d %d\n255\n", image.cols, image.rows);
    std::vector<uint8_t> bytes(image.plane_size());
    for (size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = quantize(image.data[i]);
    }
    if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
        fail(ErrorKind::IoFailure, "failed to write " + path.string());
    }
}

} // namespace patchforge
