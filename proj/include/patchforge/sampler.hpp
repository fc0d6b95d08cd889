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

#include <vector>

#include "patchforge/geometry.hpp"
#include "patchforge/tensor.hpp"

namespace patchforge {

/// Photo with the patch composited in photo space. `image` equals the source
/// photo exactly wherever `coverage_mask` is false.
struct CompositeResult {
    ImageTensor image;
    std::vector<uint8_t> coverage_mask; // rows*cols, 1 where patch replaced photo
};

/// For a fixed grid this is a sparse linear map applied per channel:
/// out[r][c] = sum_k weight_k * src[idx_k]; output pixels without an entry
/// (or with zero-weight entries) are 0.
ImageTensor sample_bilinear(const ImageTensor& src, const SamplingGrid& grid);

/// Exact transpose of sample_bilinear: scatter-adds weight_k * grad_out into
/// the source positions, in fixed entry order.
ImageTensor sample_adjoint(const ImageTensor& grad_out, const SamplingGrid& grid);

/// Replace every grid-covered photo pixel with the bilinearly sampled patch
/// value, replicated into all photo channels (the patch is opaque and
/// grayscale). Runs in photo space, before any alignment warp.
CompositeResult apply_patch(const ImageTensor& photo, const Patch& patch,
                            const SamplingGrid& grid);

/// Warp a photo to the aligned network input through a precomputed alignment
/// grid. Gradients flow back through sample_adjoint on the same grid.
ImageTensor align_face(const ImageTensor& photo, const SamplingGrid& align_grid);

/// Pull a composite-output gradient back to the patch: sums the per-channel
/// gradient at each covered pixel (the patch value feeds every channel) and
/// scatters through the patch grid's transpose. Gradient twin of apply_patch.
Patch apply_patch_adjoint(const ImageTensor& grad_photo, const SamplingGrid& grid,
                          int patch_rows, int patch_cols);

} // namespace patchforge
