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

#include <filesystem>
#include <string>

#include "patchforge/tensor.hpp"

namespace patchforge {

// 8-bit image files. Values map linearly between {0..255} and [0,1]:
// load divides by 255, save rounds half up (floor(v*255 + 0.5), clamped).

struct PngMetadata {
    double dpi = 0.0;        // written as a pHYs chunk when > 0
    std::string description; // written as a tEXt chunk when non-empty
};

/// Load a PNG (gray -> 1 channel, color -> 3 channels, alpha stripped,
/// 16-bit narrowed) or a binary PGM (P5). Format detected from content.
ImageTensor load_image(const std::filesystem::path& path);

/// Save as 8-bit PNG; 1-channel tensors become grayscale files, 3-channel RGB.
void save_png(const ImageTensor& image, const std::filesystem::path& path,
              const PngMetadata& meta = {});

/// Save a 1-channel tensor as binary PGM (P5, maxval 255).
void save_pgm(const ImageTensor& image, const std::filesystem::path& path);

} // namespace patchforge
