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

#include <doctest.h>

#include <cmath>
#include <cstring>

#include "patchforge/sampler.hpp"
#include "test_helpers.hpp"

using namespace patchforge;
using patchforge::testing::random_grid;
using patchforge::testing::random_image;
using patchforge::testing::rel_err;
using patchforge::testing::TestRng;

namespace {

SamplingGrid identity_grid(int rows, int cols) {
    SamplingGrid grid;
    grid.out_rows = grid.src_rows = rows;
    grid.out_cols = grid.src_cols = cols;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            grid.append_entry(static_cast<int32_t>(r) * cols + c, c, r);
        }
    }
    return grid;
}

/// Dense materialization of the grid's linear map, the oracle for the
/// adjoint check on tiny images.
std::vector<double> dense_matrix(const SamplingGrid& grid) {
    const size_t out_n = static_cast<size_t>(grid.out_rows) * grid.out_cols;
    const size_t src_n = static_cast<size_t>(grid.src_rows) * grid.src_cols;
    std::vector<double> mat(out_n * src_n, 0.0);
    for (size_t e = 0; e < grid.size(); ++e) {
        const size_t row = grid.out_index[e];
        mat[row * src_n + grid.i0[e]] += grid.w0[e];
        mat[row * src_n + grid.i1[e]] += grid.w1[e];
        mat[row * src_n + grid.i2[e]] += grid.w2[e];
        mat[row * src_n + grid.i3[e]] += grid.w3[e];
    }
    return mat;
}

} // namespace

TEST_CASE("sample_bilinear: identity grid reproduces the input exactly") {
    TestRng rng(21);
    const ImageTensor src = random_image(rng, 9, 13, 3);
    const ImageTensor out = sample_bilinear(src, identity_grid(9, 13));
    CHECK(out.data == src.data);
}

TEST_CASE("sample_bilinear: midpoint between 0 and 1 reads 0.5") {
    ImageTensor src(1, 2, 1);
    src.data = {0.0, 1.0};
    SamplingGrid grid;
    grid.out_rows = grid.out_cols = 1;
    grid.src_rows = 1;
    grid.src_cols = 2;
    grid.append_entry(0, 0.5, 0.0);
    const ImageTensor out = sample_bilinear(src, grid);
    CHECK(out.data[0] == 0.5);
}

TEST_CASE("sample_bilinear: all-out-of-bounds grid gives zeros") {
    TestRng rng(22);
    const ImageTensor src = random_image(rng, 6, 6, 1);
    SamplingGrid grid;
    grid.out_rows = grid.out_cols = 4;
    grid.src_rows = grid.src_cols = 6;
    for (int i = 0; i < 16; ++i) {
        grid.append_entry(i, -10.0, -10.0);
    }
    const ImageTensor out = sample_bilinear(src, grid);
    for (double v : out.data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("sample_bilinear: shape mismatch throws") {
    TestRng rng(23);
    const ImageTensor src = random_image(rng, 5, 5, 1);
    const SamplingGrid grid = identity_grid(6, 6);
    CHECK_THROWS_AS(sample_bilinear(src, grid), Error);
}

TEST_CASE("adjoint: single weight-1 entry routes the gradient") {
    SamplingGrid grid;
    grid.out_rows = grid.out_cols = 2;
    grid.src_rows = grid.src_cols = 3;
    grid.append_entry(3, 2.0, 1.0); // out (1,1) <- src (1,2)
    ImageTensor grad_out(2, 2, 1);
    grad_out.data = {0, 0, 0, 7.5};
    const ImageTensor grad_src = sample_adjoint(grad_out, grid);
    for (int i = 0; i < 9; ++i) {
        CHECK(grad_src.data[i] == (i == 5 ? 7.5 : 0.0));
    }
}

TEST_CASE("adjoint: zero gradient stays zero") {
    TestRng rng(24);
    const SamplingGrid grid = random_grid(rng, 5, 7, 6, 6);
    const ImageTensor zero(5, 7, 2, 0.0);
    const ImageTensor grad = sample_adjoint(zero, grid);
    for (double v : grad.data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("adjoint: dot-product identity against the dense oracle") {
    TestRng rng(25);
    for (int trial = 0; trial < 30; ++trial) {
        const int out_r = 2 + rng.below(6), out_c = 2 + rng.below(6);
        const int src_r = 2 + rng.below(6), src_c = 2 + rng.below(6);
        const SamplingGrid grid = random_grid(rng, out_r, out_c, src_r, src_c, 0.2);
        const ImageTensor x = random_image(rng, src_r, src_c, 1, -1.0, 1.0);
        const ImageTensor y = random_image(rng, out_r, out_c, 1, -1.0, 1.0);

        const ImageTensor ax = sample_bilinear(x, grid);
        const ImageTensor aty = sample_adjoint(y, grid);
        double lhs = 0.0, rhs = 0.0;
        for (size_t i = 0; i < ax.size(); ++i) {
            lhs += ax.data[i] * y.data[i];
        }
        for (size_t i = 0; i < x.size(); ++i) {
            rhs += x.data[i] * aty.data[i];
        }
        CHECK(rel_err(lhs, rhs) < 1e-10);

        // cross-check both against the dense matrix
        const std::vector<double> mat = dense_matrix(grid);
        const size_t src_n = x.size();
        for (size_t row = 0; row < ax.size(); ++row) {
            double expect = 0.0;
            for (size_t col = 0; col < src_n; ++col) {
                expect += mat[row * src_n + col] * x.data[col];
            }
            CHECK(std::fabs(ax.data[row] - expect) < 1e-12);
        }
        for (size_t col = 0; col < src_n; ++col) {
            double expect = 0.0;
            for (size_t row = 0; row < y.size(); ++row) {
                expect += mat[row * src_n + col] * y.data[row];
            }
            CHECK(std::fabs(aty.data[col] - expect) < 1e-12);
        }
    }
}

TEST_CASE("sampling is linear in the source for a fixed grid") {
    TestRng rng(26);
    const SamplingGrid grid = random_grid(rng, 8, 8, 10, 10);
    const ImageTensor x = random_image(rng, 10, 10, 1);
    const ImageTensor y = random_image(rng, 10, 10, 1);
    const double alpha = 0.37, beta = -1.25;
    ImageTensor combo(10, 10, 1);
    for (size_t i = 0; i < combo.size(); ++i) {
        combo.data[i] = alpha * x.data[i] + beta * y.data[i];
    }
    const ImageTensor s_combo = sample_bilinear(combo, grid);
    const ImageTensor sx = sample_bilinear(x, grid);
    const ImageTensor sy = sample_bilinear(y, grid);
    for (size_t i = 0; i < s_combo.size(); ++i) {
        CHECK(std::fabs(s_combo.data[i] - (alpha * sx.data[i] + beta * sy.data[i])) <=
              1e-12);
    }
}

TEST_CASE("range preservation: in-bounds samples stay within [min, max]") {
    TestRng rng(27);
    const SamplingGrid grid = random_grid(rng, 12, 12, 9, 9, 0.0);
    const ImageTensor src = random_image(rng, 9, 9, 1, 0.2, 0.9);
    const ImageTensor out = sample_bilinear(src, grid);
    double lo = 2.0, hi = -2.0;
    for (double v : src.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (size_t e = 0; e < grid.size(); ++e) {
        const double v = out.data[grid.out_index[e]];
        CHECK(v >= lo - 1e-12);
        CHECK(v <= hi + 1e-12);
    }
}

TEST_CASE("apply_patch: empty grid returns the photo untouched") {
    TestRng rng(28);
    const ImageTensor photo = random_image(rng, 10, 10, 3);
    SamplingGrid grid;
    grid.out_rows = grid.out_cols = 10;
    grid.src_rows = 4;
    grid.src_cols = 4;
    const Patch patch(4, 4, 0.5);
    const CompositeResult comp = apply_patch(photo, patch, grid);
    CHECK(comp.image.data == photo.data);
    for (uint8_t m : comp.coverage_mask) {
        CHECK(m == 0);
    }
}

TEST_CASE("apply_patch: constant patch paints the covered region in every channel") {
    TestRng rng(29);
    const ImageTensor photo = random_image(rng, 12, 12, 3);
    CellCorrespondence cell;
    cell.cell_id = 0;
    cell.patch_corners = {Point2{0, 0}, Point2{3, 0}, Point2{3, 3}, Point2{0, 3}};
    cell.photo_corners = {Point2{4, 4}, Point2{7, 4}, Point2{7, 7}, Point2{4, 7}};
    const SamplingGrid grid = precompute_patch_grid(std::vector{cell}, 4, 4, 12, 12);
    const Patch patch(4, 4, 0.5);
    const CompositeResult comp = apply_patch(photo, patch, grid);
    size_t covered = 0;
    for (int r = 0; r < 12; ++r) {
        for (int c = 0; c < 12; ++c) {
            const size_t idx = static_cast<size_t>(r) * 12 + c;
            if (comp.coverage_mask[idx]) {
                ++covered;
                for (int ch = 0; ch < 3; ++ch) {
                    CHECK(comp.image.at(ch, r, c) == 0.5);
                }
            } else {
                for (int ch = 0; ch < 3; ++ch) {
                    // off-mask pixels are bit-exact copies
                    CHECK(comp.image.at(ch, r, c) == photo.at(ch, r, c));
                }
            }
        }
    }
    CHECK(covered == 16); // 4x4 inclusive corner pixels
}

TEST_CASE("apply_patch: composite is linear in the patch over the covered region") {
    TestRng rng(30);
    const ImageTensor photo = random_image(rng, 14, 14, 3);
    CellCorrespondence cell;
    cell.cell_id = 0;
    cell.patch_corners = {Point2{0, 0}, Point2{5, 0}, Point2{5, 5}, Point2{0, 5}};
    cell.photo_corners = {Point2{2.3, 3.1}, Point2{10.8, 3.4}, Point2{11.2, 11.0},
                          Point2{2.0, 10.6}};
    const SamplingGrid grid = precompute_patch_grid(std::vector{cell}, 6, 6, 14, 14);
    REQUIRE(grid.size() > 0);

    Patch p1(6, 6), p2(6, 6);
    for (size_t i = 0; i < p1.size(); ++i) {
        p1.image.data[i] = rng.uniform();
        p2.image.data[i] = rng.uniform();
    }
    const double a = 0.4, b = 0.6;
    Patch mix(6, 6);
    for (size_t i = 0; i < mix.size(); ++i) {
        mix.image.data[i] = a * p1.image.data[i] + b * p2.image.data[i];
    }
    const CompositeResult cm = apply_patch(photo, mix, grid);
    const CompositeResult c1 = apply_patch(photo, p1, grid);
    const CompositeResult c2 = apply_patch(photo, p2, grid);
    for (size_t e = 0; e < grid.size(); ++e) {
        const int32_t idx = grid.out_index[e];
        for (int ch = 0; ch < 3; ++ch) {
            const double lhs = cm.image.plane(ch)[idx];
            const double rhs = a * c1.image.plane(ch)[idx] + b * c2.image.plane(ch)[idx];
            CHECK(std::fabs(lhs - rhs) < 1e-12);
        }
    }
}

TEST_CASE("apply_patch adjoint matches the composite's linear map") {
    TestRng rng(31);
    const ImageTensor photo = random_image(rng, 10, 10, 3);
    CellCorrespondence cell;
    cell.cell_id = 0;
    cell.patch_corners = {Point2{0, 0}, Point2{4, 0}, Point2{4, 4}, Point2{0, 4}};
    cell.photo_corners = {Point2{1.5, 2.5}, Point2{8.2, 2.0}, Point2{8.5, 8.4},
                          Point2{1.0, 8.0}};
    const SamplingGrid grid = precompute_patch_grid(std::vector{cell}, 5, 5, 10, 10);
    REQUIRE(grid.size() > 0);

    // <composite(p) - composite(0), g> == <p, adjoint(g)>
    const ImageTensor g = random_image(rng, 10, 10, 3, -1.0, 1.0);
    Patch p(5, 5);
    for (double& v : p.image.data) {
        v = rng.uniform();
    }
    const CompositeResult cp = apply_patch(photo, p, grid);
    const CompositeResult c0 = apply_patch(photo, Patch(5, 5, 0.0), grid);
    double lhs = 0.0;
    for (size_t i = 0; i < g.size(); ++i) {
        lhs += (cp.image.data[i] - c0.image.data[i]) * g.data[i];
    }
    const Patch adj = apply_patch_adjoint(g, grid, 5, 5);
    double rhs = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        rhs += p.image.data[i] * adj.image.data[i];
    }
    CHECK(rel_err(lhs, rhs) < 1e-10);
}

TEST_CASE("align_face: identity and downscale behavior") {
    TestRng rng(32);
    const ImageTensor photo112 = random_image(rng, 112, 112, 3);
    const SamplingGrid id_grid =
        precompute_alignment_grid(SimilarityTransform{}, 112, 112, 112, 112);
    CHECK(align_face(photo112, id_grid).data == photo112.data);

    const ImageTensor photo224 = random_image(rng, 224, 224, 1);
    SimilarityTransform half;
    half.scale = 0.5;
    const SamplingGrid half_grid = precompute_alignment_grid(half, 112, 112, 224, 224);
    const ImageTensor out = align_face(photo224, half_grid);
    for (int r = 0; r < 112; r += 17) {
        for (int c = 0; c < 112; c += 13) {
            CHECK(out.at(0, r, c) == doctest::Approx(photo224.at(0, 2 * r, 2 * c)));
        }
    }
}
