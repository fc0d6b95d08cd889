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

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace patchforge {

// All geometry runs in double precision. Pixel coordinates put the center of
// pixel (row r, col c) at (x = c, y = r); origin top-left, x rightward,
// y downward, sub-pixel positions allowed.

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// 3x3 projective transform, row-major, normalized so m[8] == 1.
struct Homography {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return {}; }
    double det() const;
};

Point2 apply_homography(const Homography& h, Point2 p);
Homography invert_homography(const Homography& h);

/// Exact 4-point fit: direct linear transform on the 8x8 system assembled
/// from the correspondences (solved on Hartley-normalized coordinates).
Homography estimate_homography(const std::array<Point2, 4>& src,
                               const std::array<Point2, 4>& dst);

/// Rotation + uniform scale + translation; linear part = scale * R(rotation).
struct SimilarityTransform {
    double scale = 1.0;
    double rotation = 0.0; // radians
    double tx = 0.0;
    double ty = 0.0;

    Point2 apply(Point2 p) const;
    SimilarityTransform inverse() const;
    /// Row-major 2x3 matrix [a -b tx; b a ty] with a = s*cos, b = s*sin.
    std::array<double, 6> matrix() const;
};

/// Least-squares fit minimizing sum ||s*R*src_k + t - dst_k||^2 over s>0, R, t
/// (closed form on centered coordinates).
SimilarityTransform estimate_similarity(std::span<const Point2> src,
                                        std::span<const Point2> dst);

/// One chessboard cell: its rectangle in patch space and the user-marked
/// quadrilateral in photo space, both in consistent winding order.
struct CellCorrespondence {
    int cell_id = 0;
    std::array<Point2, 4> patch_corners;
    std::array<Point2, 4> photo_corners;
};

/// Precomputed per-output-pixel source coordinates and bilinear weights: a
/// fixed sparse linear map from a source image to an output image. Stored as
/// structure-of-arrays; entry order is row-major over output pixels and part
/// of the determinism contract. Entries whose sampling point needs pixels
/// outside the source carry four zero weights (indices clamped in-range so
/// gathers stay valid).
struct SamplingGrid {
    int out_rows = 0;
    int out_cols = 0;
    int src_rows = 0;
    int src_cols = 0;

    std::vector<int32_t> out_index; // flattened out row * out_cols + col
    std::vector<double> src_x, src_y;
    std::vector<double> w0, w1, w2, w3; // (y0,x0) (y0,x1) (y1,x0) (y1,x1)
    std::vector<int32_t> i0, i1, i2, i3;

    size_t size() const { return out_index.size(); }
    bool entry_has_weight(size_t e) const {
        return w0[e] != 0.0 || w1[e] != 0.0 || w2[e] != 0.0 || w3[e] != 0.0;
    }
    /// True when (src_x, src_y) can be sampled without leaving the source.
    bool entry_in_bounds(size_t e) const {
        return src_x[e] >= 0.0 && src_x[e] <= src_cols - 1 && src_y[e] >= 0.0 &&
               src_y[e] <= src_rows - 1;
    }
    void append_entry(int32_t out_idx, double sx, double sy);
};

/// Inverse-map every photo pixel inside some projected cell back to patch
/// coordinates via that cell's transform (Hartley DLT on photo->patch) and
/// store its bilinear weights. Pixels claimed by several cells go to the
/// lowest cell_id; pixel centers on a projected boundary count as inside.
/// The grid only stores covered pixels.
SamplingGrid precompute_patch_grid(std::span<const CellCorrespondence> cells,
                                   int patch_rows, int patch_cols, int photo_rows,
                                   int photo_cols);

/// Dense grid mapping each out pixel to its photo coordinate under the
/// inverse of `sim` (which maps photo -> aligned output coordinates).
SamplingGrid precompute_alignment_grid(const SimilarityTransform& sim, int out_rows,
                                       int out_cols, int photo_rows, int photo_cols);

} // namespace patchforge
