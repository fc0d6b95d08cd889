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

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "patchforge/errors.hpp"

namespace patchforge {

/// Planar (channel-major) image: data laid out as [channel][row][col].
/// Pixel values live in [0,1] for loaded/composited images; gradient images
/// reuse the same container without the range contract.
struct ImageTensor {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    std::vector<double> data;

    ImageTensor() = default;
    ImageTensor(int rows_, int cols_, int channels_, double fill = 0.0)
        : rows(rows_), cols(cols_), channels(channels_),
          data(static_cast<size_t>(rows_) * cols_ * channels_, fill) {}

    size_t plane_size() const { return static_cast<size_t>(rows) * cols; }
    size_t size() const { return data.size(); }

    double* plane(int c) { return data.data() + static_cast<size_t>(c) * plane_size(); }
    const double* plane(int c) const {
        return data.data() + static_cast<size_t>(c) * plane_size();
    }

    double& at(int c, int r, int col) {
        return data[(static_cast<size_t>(c) * rows + r) * cols + col];
    }
    double at(int c, int r, int col) const {
        return data[(static_cast<size_t>(c) * rows + r) * cols + col];
    }

    bool same_shape(const ImageTensor& other) const {
        return rows == other.rows && cols == other.cols && channels == other.channels;
    }

    std::string shape_string() const {
        return std::to_string(rows) + "x" + std::to_string(cols) + "x" +
               std::to_string(channels);
    }
};

inline void require_shape(const ImageTensor& t, int rows, int cols, int channels,
                          const char* what) {
    if (t.rows != rows || t.cols != cols || t.channels != channels) {
        fail(ErrorKind::ShapeMismatch,
             std::string(what) + " expected " + std::to_string(rows) + "x" +
                 std::to_string(cols) + "x" + std::to_string(channels) + ", got " +
                 t.shape_string());
    }
}

/// Grayscale optimization variable of the attack. Thin wrapper so a patch can
/// never silently pick up extra channels.
struct Patch {
    ImageTensor image; // channels == 1

    Patch() = default;
    Patch(int rows, int cols, double fill = 0.0) : image(rows, cols, 1, fill) {}

    int rows() const { return image.rows; }
    int cols() const { return image.cols; }
    double* data() { return image.data.data(); }
    const double* data() const { return image.data.data(); }
    size_t size() const { return image.size(); }
};

} // namespace patchforge
