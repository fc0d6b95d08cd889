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

#include "patchforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "patchforge/errors.hpp"

namespace patchforge {

namespace {

constexpr double kPivotTol = 1e-12;
constexpr double kDenomTol = 1e-12;
// Tolerance for snapping inverse-mapped patch coordinates that land a hair
// outside the patch due to round-off.
constexpr double kPatchSnapTol = 1e-9;

double cross2(Point2 a, Point2 b, Point2 c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

void check_quad_nondegenerate(const std::array<Point2, 4>& q, const char* which) {
    double span2 = 0.0;
    for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
            const double dx = q[i].x - q[j].x;
            const double dy = q[i].y - q[j].y;
            span2 = std::max(span2, dx * dx + dy * dy);
        }
    }
    // Any of the four triples (near-)collinear makes the quad degenerate;
    // duplicate points degenerate their triples to zero area.
    static const int triples[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
    for (const auto& t : triples) {
        const double area2 = std::fabs(cross2(q[t[0]], q[t[1]], q[t[2]]));
        if (area2 <= 1e-9 * span2) {
            fail(ErrorKind::DegenerateQuad,
                 std::string(which) + " quad has (near-)collinear or duplicate corners");
        }
    }
}

struct NormTransform {
    // p' = (p - centroid) * s
    double cx = 0.0, cy = 0.0, s = 1.0;
    Point2 apply(Point2 p) const { return {(p.x - cx) * s, (p.y - cy) * s}; }
};

NormTransform normalizer(const std::array<Point2, 4>& pts) {
    NormTransform t;
    for (const Point2& p : pts) {
        t.cx += p.x;
        t.cy += p.y;
    }
    t.cx /= 4.0;
    t.cy /= 4.0;
    double mean_dist = 0.0;
    for (const Point2& p : pts) {
        mean_dist += std::hypot(p.x - t.cx, p.y - t.cy);
    }
    mean_dist /= 4.0;
    t.s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
    return t;
}

/// Gaussian elimination with partial pivoting on an n x n system.
void solve_dense(double* a, double* rhs, int n) {
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        double best = std::fabs(a[col * n + col]);
        for (int r = col + 1; r < n; ++r) {
            const double v = std::fabs(a[r * n + col]);
            if (v > best) {
                best = v;
                pivot = r;
            }
        }
        if (best < kPivotTol) {
            fail(ErrorKind::SingularSystem, "homography system is singular");
        }
        if (pivot != col) {
            for (int c = col; c < n; ++c) {
                std::swap(a[col * n + c], a[pivot * n + c]);
            }
            std::swap(rhs[col], rhs[pivot]);
        }
        const double inv = 1.0 / a[col * n + col];
        for (int r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] * inv;
            if (f == 0.0) {
                continue;
            }
            for (int c = col; c < n; ++c) {
                a[r * n + c] -= f * a[col * n + c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    for (int r = n - 1; r >= 0; --r) {
        double v = rhs[r];
        for (int c = r + 1; c < n; ++c) {
            v -= a[r * n + c] * rhs[c];
        }
        rhs[r] = v / a[r * n + r];
    }
}

bool point_in_quad(const std::array<Point2, 4>& q, Point2 p) {
    bool any_pos = false, any_neg = false;
    for (int i = 0; i < 4; ++i) {
        const double c = cross2(q[i], q[(i + 1) % 4], p);
        if (c > 0.0) {
            any_pos = true;
        } else if (c < 0.0) {
            any_neg = true;
        }
    }
    // Boundary (zero cross) counts as inside for either winding.
    return !(any_pos && any_neg);
}

} // namespace

double Homography::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Point2 apply_homography(const Homography& h, Point2 p) {
    const double w = h.m[6] * p.x + h.m[7] * p.y + h.m[8];
    if (std::fabs(w) < kDenomTol) {
        fail(ErrorKind::VanishingDenominator,
             "projective denominator vanishes at (" + std::to_string(p.x) + ", " +
                 std::to_string(p.y) + ")");
    }
    return {(h.m[0] * p.x + h.m[1] * p.y + h.m[2]) / w,
            (h.m[3] * p.x + h.m[4] * p.y + h.m[5]) / w};
}

Homography invert_homography(const Homography& h) {
    const double d = h.det();
    if (std::fabs(d) < kPivotTol) {
        fail(ErrorKind::SingularSystem, "homography is not invertible");
    }
    const auto& m = h.m;
    std::array<double, 9> adj = {
        m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
    if (std::fabs(adj[8]) < kPivotTol * std::fabs(d)) {
        fail(ErrorKind::SingularSystem, "inverse homography cannot be normalized");
    }
    Homography inv;
    for (int i = 0; i < 9; ++i) {
        inv.m[i] = adj[i] / adj[8];
    }
    return inv;
}

Homography estimate_homography(const std::array<Point2, 4>& src,
                               const std::array<Point2, 4>& dst) {
    check_quad_nondegenerate(src, "source");
    check_quad_nondegenerate(dst, "destination");

    const NormTransform tn_src = normalizer(src);
    const NormTransform tn_dst = normalizer(dst);

    // 8x8 DLT system for h = [h11 h12 h13 h21 h22 h23 h31 h32], h33 = 1,
    // assembled on normalized coordinates.
    double a[64] = {0};
    double rhs[8] = {0};
    for (int k = 0; k < 4; ++k) {
        const Point2 s = tn_src.apply(src[k]);
        const Point2 d = tn_dst.apply(dst[k]);
        double* r0 = a + (2 * k) * 8;
        double* r1 = a + (2 * k + 1) * 8;
        r0[0] = s.x;
        r0[1] = s.y;
        r0[2] = 1.0;
        r0[6] = -d.x * s.x;
        r0[7] = -d.x * s.y;
        rhs[2 * k] = d.x;
        r1[3] = s.x;
        r1[4] = s.y;
        r1[5] = 1.0;
        r1[6] = -d.y * s.x;
        r1[7] = -d.y * s.y;
        rhs[2 * k + 1] = d.y;
    }
    solve_dense(a, rhs, 8);

    // Denormalize: H = T_dst^-1 * H_norm * T_src.
    const Homography hn{{rhs[0], rhs[1], rhs[2], rhs[3], rhs[4], rhs[5], rhs[6], rhs[7], 1.0}};
    const Homography ts{{tn_src.s, 0, -tn_src.s * tn_src.cx, 0, tn_src.s,
                         -tn_src.s * tn_src.cy, 0, 0, 1}};
    const Homography td_inv{{1.0 / tn_dst.s, 0, tn_dst.cx, 0, 1.0 / tn_dst.s, tn_dst.cy,
                             0, 0, 1}};
    std::array<double, 9> tmp;
    std::array<double, 9> full;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            tmp[r * 3 + c] = hn.m[r * 3] * ts.m[c] + hn.m[r * 3 + 1] * ts.m[3 + c] +
                             hn.m[r * 3 + 2] * ts.m[6 + c];
        }
    }
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            full[r * 3 + c] = td_inv.m[r * 3] * tmp[c] + td_inv.m[r * 3 + 1] * tmp[3 + c] +
                              td_inv.m[r * 3 + 2] * tmp[6 + c];
        }
    }
    if (std::fabs(full[8]) < kPivotTol) {
        fail(ErrorKind::SingularSystem, "homography cannot be normalized to m[2][2] = 1");
    }
    Homography h;
    for (int i = 0; i < 9; ++i) {
        h.m[i] = full[i] / full[8];
    }
    if (std::fabs(h.det()) < kPivotTol) {
        fail(ErrorKind::SingularSystem, "estimated homography is singular");
    }
    return h;
}

Point2 SimilarityTransform::apply(Point2 p) const {
    const double a = scale * std::cos(rotation);
    const double b = scale * std::sin(rotation);
    return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty};
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = -rotation;
    const double a = inv.scale * std::cos(inv.rotation);
    const double b = inv.scale * std::sin(inv.rotation);
    inv.tx = -(a * tx - b * ty);
    inv.ty = -(b * tx + a * ty);
    return inv;
}

std::array<double, 6> SimilarityTransform::matrix() const {
    const double a = scale * std::cos(rotation);
    const double b = scale * std::sin(rotation);
    return {a, -b, tx, b, a, ty};
}

SimilarityTransform estimate_similarity(std::span<const Point2> src,
                                        std::span<const Point2> dst) {
    if (src.size() != dst.size() || src.size() < 2) {
        fail(ErrorKind::InvalidArgument,
             "similarity fit needs two equally sized point sets with >= 2 points");
    }
    const double n = static_cast<double>(src.size());
    double scx = 0.0, scy = 0.0, dcx = 0.0, dcy = 0.0;
    for (size_t k = 0; k < src.size(); ++k) {
        scx += src[k].x;
        scy += src[k].y;
        dcx += dst[k].x;
        dcy += dst[k].y;
    }
    scx /= n;
    scy /= n;
    dcx /= n;
    dcy /= n;

    // Least squares over M = [a -b; b a]: a, b from the centered
    // cross-covariance, normalized by the source spread.
    double sxx = 0.0, num_a = 0.0, num_b = 0.0;
    for (size_t k = 0; k < src.size(); ++k) {
        const double sx = src[k].x - scx;
        const double sy = src[k].y - scy;
        const double dx = dst[k].x - dcx;
        const double dy = dst[k].y - dcy;
        sxx += sx * sx + sy * sy;
        num_a += sx * dx + sy * dy;
        num_b += sx * dy - sy * dx;
    }
    if (sxx < 1e-18) {
        fail(ErrorKind::DegenerateConfiguration, "all source points coincide");
    }
    const double a = num_a / sxx;
    const double b = num_b / sxx;
    SimilarityTransform t;
    t.scale = std::hypot(a, b);
    if (t.scale <= 0.0) {
        fail(ErrorKind::DegenerateConfiguration,
             "destination points coincide; similarity scale would be zero");
    }
    t.rotation = std::atan2(b, a);
    t.tx = dcx - (a * scx - b * scy);
    t.ty = dcy - (b * scx + a * scy);
    return t;
}

void SamplingGrid::append_entry(int32_t out_idx, double sx, double sy) {
    out_index.push_back(out_idx);
    src_x.push_back(sx);
    src_y.push_back(sy);
    const bool inside =
        sx >= 0.0 && sx <= src_cols - 1 && sy >= 0.0 && sy <= src_rows - 1;
    if (!inside) {
        w0.push_back(0.0);
        w1.push_back(0.0);
        w2.push_back(0.0);
        w3.push_back(0.0);
        i0.push_back(0);
        i1.push_back(0);
        i2.push_back(0);
        i3.push_back(0);
        return;
    }
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const double fx = sx - x0;
    const double fy = sy - y0;
    const int x1 = std::min(x0 + 1, src_cols - 1);
    const int y1 = std::min(y0 + 1, src_rows - 1);
    w0.push_back((1.0 - fx) * (1.0 - fy));
    w1.push_back(fx * (1.0 - fy));
    w2.push_back((1.0 - fx) * fy);
    w3.push_back(fx * fy);
    i0.push_back(static_cast<int32_t>(y0) * src_cols + x0);
    i1.push_back(static_cast<int32_t>(y0) * src_cols + x1);
    i2.push_back(static_cast<int32_t>(y1) * src_cols + x0);
    i3.push_back(static_cast<int32_t>(y1) * src_cols + x1);
}

SamplingGrid precompute_patch_grid(std::span<const CellCorrespondence> cells,
                                   int patch_rows, int patch_cols, int photo_rows,
                                   int photo_cols) {
    SamplingGrid grid;
    grid.out_rows = photo_rows;
    grid.out_cols = photo_cols;
    grid.src_rows = patch_rows;
    grid.src_cols = patch_cols;
    if (cells.empty()) {
        return grid;
    }

    std::vector<const CellCorrespondence*> ordered;
    ordered.reserve(cells.size());
    for (const CellCorrespondence& c : cells) {
        ordered.push_back(&c);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const CellCorrespondence* a, const CellCorrespondence* b) {
                  return a->cell_id < b->cell_id;
              });

    // Photo -> patch transform per cell (the inverse mapping used to sample).
    std::vector<Homography> to_patch;
    to_patch.reserve(ordered.size());
    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    for (const CellCorrespondence* cell : ordered) {
        try {
            to_patch.push_back(
                estimate_homography(cell->photo_corners, cell->patch_corners));
        } catch (const Error& e) {
            fail(e.kind(), "cell " + std::to_string(cell->cell_id) + ": " + e.what());
        }
        for (const Point2& p : cell->photo_corners) {
            min_x = std::min(min_x, p.x);
            min_y = std::min(min_y, p.y);
            max_x = std::max(max_x, p.x);
            max_y = std::max(max_y, p.y);
        }
    }

    const int y_begin = std::max(0, static_cast<int>(std::ceil(min_y)));
    const int y_end = std::min(photo_rows - 1, static_cast<int>(std::floor(max_y)));
    const int x_begin = std::max(0, static_cast<int>(std::ceil(min_x)));
    const int x_end = std::min(photo_cols - 1, static_cast<int>(std::floor(max_x)));

    for (int y = y_begin; y <= y_end; ++y) {
        for (int x = x_begin; x <= x_end; ++x) {
            const Point2 p{static_cast<double>(x), static_cast<double>(y)};
            for (size_t k = 0; k < ordered.size(); ++k) {
                if (!point_in_quad(ordered[k]->photo_corners, p)) {
                    continue;
                }
                Point2 s;
                try {
                    s = apply_homography(to_patch[k], p);
                } catch (const Error& e) {
                    fail(e.kind(), "cell " + std::to_string(ordered[k]->cell_id) + ": " +
                                       e.what());
                }
                // Inverse-mapped points live inside the patch by construction;
                // snap round-off spill at the patch border.
                if (s.x > -kPatchSnapTol && s.x < 0.0) s.x = 0.0;
                if (s.y > -kPatchSnapTol && s.y < 0.0) s.y = 0.0;
                if (s.x > patch_cols - 1 && s.x < patch_cols - 1 + kPatchSnapTol)
                    s.x = patch_cols - 1;
                if (s.y > patch_rows - 1 && s.y < patch_rows - 1 + kPatchSnapTol)
                    s.y = patch_rows - 1;
                if (s.x < 0.0 || s.x > patch_cols - 1 || s.y < 0.0 ||
                    s.y > patch_rows - 1) {
                    break; // outside the patch proper; leave the pixel uncovered
                }
                grid.append_entry(static_cast<int32_t>(y) * photo_cols + x, s.x, s.y);
                break; // lowest cell_id claims the pixel
            }
        }
    }
    return grid;
}

SamplingGrid precompute_alignment_grid(const SimilarityTransform& sim, int out_rows,
                                       int out_cols, int photo_rows, int photo_cols) {
    SamplingGrid grid;
    grid.out_rows = out_rows;
    grid.out_cols = out_cols;
    grid.src_rows = photo_rows;
    grid.src_cols = photo_cols;
    const SimilarityTransform inv = sim.inverse();
    for (int r = 0; r < out_rows; ++r) {
        for (int c = 0; c < out_cols; ++c) {
            const Point2 s = inv.apply({static_cast<double>(c), static_cast<double>(r)});
            grid.append_entry(static_cast<int32_t>(r) * out_cols + c, s.x, s.y);
        }
    }
    return grid;
}

} // namespace patchforge
