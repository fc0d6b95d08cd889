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

#include "patchforge/sampler.hpp"

#include <string>

#include "patchforge/kernels.hpp"

namespace patchforge {

namespace {

void require_src_shape(const ImageTensor& src, const SamplingGrid& grid,
                       const char* what) {
    if (src.rows != grid.src_rows || src.cols != grid.src_cols) {
        fail(ErrorKind::ShapeMismatch,
             std::string(what) + ": grid expects source " +
                 std::to_string(grid.src_rows) + "x" + std::to_string(grid.src_cols) +
                 ", got " + src.shape_string());
    }
}

void require_out_shape(const ImageTensor& out, const SamplingGrid& grid,
                       const char* what) {
    if (out.rows != grid.out_rows || out.cols != grid.out_cols) {
        fail(ErrorKind::ShapeMismatch,
             std::string(what) + ": grid expects output " +
                 std::to_string(grid.out_rows) + "x" + std::to_string(grid.out_cols) +
                 ", got " + out.shape_string());
    }
}

} // namespace

ImageTensor sample_bilinear(const ImageTensor& src, const SamplingGrid& grid) {
    require_src_shape(src, grid, "sample_bilinear");
    const auto& k = kernels::active();
    ImageTensor out(grid.out_rows, grid.out_cols, src.channels, 0.0);
    const size_t n = grid.size();
    if (n == 0) {
        return out;
    }
    std::vector<double> vals(n);
    for (int c = 0; c < src.channels; ++c) {
        k.gather_bilinear(src.plane(c), grid.i0.data(), grid.i1.data(), grid.i2.data(),
                          grid.i3.data(), grid.w0.data(), grid.w1.data(), grid.w2.data(),
                          grid.w3.data(), n, vals.data());
        double* plane = out.plane(c);
        for (size_t e = 0; e < n; ++e) {
            plane[grid.out_index[e]] = vals[e];
        }
    }
    return out;
}

ImageTensor sample_adjoint(const ImageTensor& grad_out, const SamplingGrid& grid) {
    require_out_shape(grad_out, grid, "sample_adjoint");
    const auto& k = kernels::active();
    ImageTensor grad_src(grid.src_rows, grid.src_cols, grad_out.channels, 0.0);
    const size_t n = grid.size();
    if (n == 0) {
        return grad_src;
    }
    std::vector<double> vals(n);
    for (int c = 0; c < grad_out.channels; ++c) {
        const double* plane = grad_out.plane(c);
        for (size_t e = 0; e < n; ++e) {
            vals[e] = plane[grid.out_index[e]];
        }
        k.scatter_bilinear(vals.data(), grid.i0.data(), grid.i1.data(), grid.i2.data(),
                           grid.i3.data(), grid.w0.data(), grid.w1.data(),
                           grid.w2.data(), grid.w3.data(), n, grad_src.plane(c));
    }
    return grad_src;
}

CompositeResult apply_patch(const ImageTensor& photo, const Patch& patch,
                            const SamplingGrid& grid) {
    require_out_shape(photo, grid, "apply_patch");
    require_src_shape(patch.image, grid, "apply_patch");
    const auto& k = kernels::active();

    CompositeResult result;
    result.image = photo;
    result.coverage_mask.assign(photo.plane_size(), 0);
    const size_t n = grid.size();
    if (n == 0) {
        return result;
    }
    std::vector<double> vals(n);
    k.gather_bilinear(patch.data(), grid.i0.data(), grid.i1.data(), grid.i2.data(),
                      grid.i3.data(), grid.w0.data(), grid.w1.data(), grid.w2.data(),
                      grid.w3.data(), n, vals.data());
    for (size_t e = 0; e < n; ++e) {
        const int32_t idx = grid.out_index[e];
        result.coverage_mask[idx] = 1;
        for (int c = 0; c < photo.channels; ++c) {
            result.image.plane(c)[idx] = vals[e];
        }
    }
    return result;
}

ImageTensor align_face(const ImageTensor& photo, const SamplingGrid& align_grid) {
    return sample_bilinear(photo, align_grid);
}

Patch apply_patch_adjoint(const ImageTensor& grad_photo, const SamplingGrid& grid,
                          int patch_rows, int patch_cols) {
    require_out_shape(grad_photo, grid, "apply_patch_adjoint");
    if (patch_rows != grid.src_rows || patch_cols != grid.src_cols) {
        fail(ErrorKind::ShapeMismatch, "apply_patch_adjoint: patch shape differs from grid");
    }
    const auto& k = kernels::active();
    Patch grad(patch_rows, patch_cols, 0.0);
    const size_t n = grid.size();
    if (n == 0) {
        return grad;
    }
    // The composited value feeds every photo channel, so the channel
    // gradients sum at each covered pixel.
    std::vector<double> vals(n);
    for (size_t e = 0; e < n; ++e) {
        const int32_t idx = grid.out_index[e];
        double g = 0.0;
        for (int c = 0; c < grad_photo.channels; ++c) {
            g += grad_photo.plane(c)[idx];
        }
        vals[e] = g;
    }
    k.scatter_bilinear(vals.data(), grid.i0.data(), grid.i1.data(), grid.i2.data(),
                       grid.i3.data(), grid.w0.data(), grid.w1.data(), grid.w2.data(),
                       grid.w3.data(), n, grad.data());
    return grad;
}

} // namespace patchforge
