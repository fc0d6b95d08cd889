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

// The kernel backends promise bit-identical results; every comparison here is
// exact equality, across sizes that exercise the vector bodies and the tails.

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "patchforge/kernels.hpp"
#include "test_helpers.hpp"

using namespace patchforge;
using patchforge::testing::TestRng;

namespace {

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

const kernels::Backend* avx2_or_skip() {
    const kernels::Backend* avx2 = kernels::avx2_backend();
    if (avx2 == nullptr) {
        MESSAGE("AVX2 unavailable on this host; equivalence checks skipped");
    }
    return avx2;
}

} // namespace

TEST_CASE("scalar reductions match a plain accumulation within round-off") {
    TestRng rng(1);
    const auto& k = kernels::scalar_backend();
    for (size_t n : {size_t{1}, size_t{7}, size_t{128}, size_t{1001}}) {
        const auto a = rng.vec(n);
        const auto b = rng.vec(n);
        double naive_dot = 0.0, naive_asum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            naive_dot += a[i] * b[i];
            naive_asum += std::fabs(a[i]);
        }
        CHECK(std::fabs(k.dot(a.data(), b.data(), n) - naive_dot) < 1e-9);
        CHECK(std::fabs(k.asum(a.data(), n) - naive_asum) < 1e-9);
    }
}

TEST_CASE("reductions: avx2 bit-identical to scalar") {
    const kernels::Backend* avx2 = avx2_or_skip();
    if (avx2 == nullptr) {
        return;
    }
    const auto& scalar = kernels::scalar_backend();
    TestRng rng(2);
    for (size_t n : {size_t{1}, size_t{3}, size_t{4}, size_t{5}, size_t{64}, size_t{127},
                     size_t{1000}, size_t{4096}}) {
        const auto a = rng.vec(n, -3.0, 3.0);
        const auto b = rng.vec(n, -3.0, 3.0);
        CHECK(scalar.dot(a.data(), b.data(), n) == avx2->dot(a.data(), b.data(), n));
        CHECK(scalar.asum(a.data(), n) == avx2->asum(a.data(), n));
    }
    // strided 2d windows, including ragged column counts
    for (int cols : {1, 3, 4, 6, 32, 57}) {
        const int rows = 11;
        const size_t stride_a = cols + 3;
        const size_t stride_b = cols + 1;
        const auto a = rng.vec(stride_a * rows);
        const auto b = rng.vec(stride_b * rows);
        CHECK(scalar.dot2d(a.data(), stride_a, b.data(), stride_b, rows, cols) ==
              avx2->dot2d(a.data(), stride_a, b.data(), stride_b, rows, cols));
        CHECK(scalar.sum2d(a.data(), stride_a, rows, cols) ==
              avx2->sum2d(a.data(), stride_a, rows, cols));
    }
}

TEST_CASE("elementwise kernels: avx2 bit-identical to scalar") {
    const kernels::Backend* avx2 = avx2_or_skip();
    if (avx2 == nullptr) {
        return;
    }
    const auto& scalar = kernels::scalar_backend();
    TestRng rng(3);
    for (size_t n : {size_t{1}, size_t{5}, size_t{256}, size_t{1003}}) {
        const auto x = rng.vec(n, -2.0, 2.0);
        const auto g = rng.vec(n, -2.0, 2.0);

        auto y1 = rng.vec(n), y2 = y1;
        scalar.axpy(0.37, x.data(), y1.data(), n);
        avx2->axpy(0.37, x.data(), y2.data(), n);
        CHECK(bits_equal(y1, y2));

        std::vector<double> a1(n), a2(n);
        scalar.lrelu_fwd(x.data(), a1.data(), n, 0.01);
        avx2->lrelu_fwd(x.data(), a2.data(), n, 0.01);
        CHECK(bits_equal(a1, a2));

        scalar.lrelu_bwd(x.data(), g.data(), a1.data(), n, 0.01);
        avx2->lrelu_bwd(x.data(), g.data(), a2.data(), n, 0.01);
        CHECK(bits_equal(a1, a2));
    }
}

TEST_CASE("lrelu applies the slope at and below zero") {
    const auto& k = kernels::scalar_backend();
    const double x[4] = {-1.0, 0.0, 0.5, 2.0};
    double y[4];
    k.lrelu_fwd(x, y, 4, 0.01);
    CHECK(y[0] == -0.01);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 0.5);
    CHECK(y[3] == 2.0);
    const double g[4] = {1.0, 1.0, 1.0, 1.0};
    double gx[4];
    k.lrelu_bwd(x, g, gx, 4, 0.01);
    CHECK(gx[0] == 0.01);
    CHECK(gx[1] == 0.01); // subgradient at 0
    CHECK(gx[2] == 1.0);
}

TEST_CASE("conv3x3 kernels: avx2 bit-identical to scalar") {
    const kernels::Backend* avx2 = avx2_or_skip();
    if (avx2 == nullptr) {
        return;
    }
    const auto& scalar = kernels::scalar_backend();
    TestRng rng(4);
    for (const auto [in_c, out_c, h, w] :
         {std::array{1, 1, 4, 4}, std::array{3, 8, 12, 14}, std::array{2, 5, 9, 7},
          std::array{4, 3, 16, 33}}) {
        const size_t pad_plane = static_cast<size_t>(h + 2) * (w + 2);
        const auto in_pad = rng.vec(pad_plane * in_c);
        const auto weights = rng.vec(static_cast<size_t>(out_c) * in_c * 9);
        const auto bias = rng.vec(out_c);
        std::vector<double> o1(static_cast<size_t>(out_c) * h * w);
        std::vector<double> o2(o1.size());
        scalar.conv3x3_fwd(in_pad.data(), in_c, h, w, weights.data(), bias.data(), out_c,
                           o1.data());
        avx2->conv3x3_fwd(in_pad.data(), in_c, h, w, weights.data(), bias.data(), out_c,
                          o2.data());
        CHECK(bits_equal(o1, o2));

        const auto gout_pad = rng.vec(pad_plane * out_c);
        std::vector<double> g1(static_cast<size_t>(in_c) * h * w);
        std::vector<double> g2(g1.size());
        scalar.conv3x3_bwd_input(gout_pad.data(), out_c, h, w, weights.data(), in_c,
                                 g1.data());
        avx2->conv3x3_bwd_input(gout_pad.data(), out_c, h, w, weights.data(), in_c,
                                g2.data());
        CHECK(bits_equal(g1, g2));
    }
}

TEST_CASE("conv3x3 forward agrees with a naive direct convolution") {
    TestRng rng(5);
    const auto& k = kernels::scalar_backend();
    const int in_c = 2, out_c = 3, h = 6, w = 5;
    const size_t pad_stride = w + 2;
    const size_t pad_plane = static_cast<size_t>(h + 2) * pad_stride;
    const auto in_pad = rng.vec(pad_plane * in_c);
    const auto weights = rng.vec(static_cast<size_t>(out_c) * in_c * 9);
    const auto bias = rng.vec(out_c);
    std::vector<double> out(static_cast<size_t>(out_c) * h * w);
    k.conv3x3_fwd(in_pad.data(), in_c, h, w, weights.data(), bias.data(), out_c,
                  out.data());
    for (int co = 0; co < out_c; ++co) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double expect = bias[co];
                for (int ci = 0; ci < in_c; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            expect += weights[((static_cast<size_t>(co) * in_c + ci) * 9) +
                                              ky * 3 + kx] *
                                      in_pad[ci * pad_plane + (y + ky) * pad_stride + x + kx];
                        }
                    }
                }
                CHECK(std::fabs(out[(static_cast<size_t>(co) * h + y) * w + x] - expect) <
                      1e-12);
            }
        }
    }
}

TEST_CASE("conv3x3 backward-input is the transpose of forward") {
    // <conv(x), g> == <x, conv_bwd(g)> over the unpadded domain
    TestRng rng(6);
    const auto& k = kernels::active();
    const int in_c = 3, out_c = 4, h = 8, w = 10;
    const size_t plane = static_cast<size_t>(h) * w;
    const size_t pad_plane = static_cast<size_t>(h + 2) * (w + 2);
    const auto weights = rng.vec(static_cast<size_t>(out_c) * in_c * 9);
    const std::vector<double> bias(out_c, 0.0);

    const auto x = rng.vec(plane * in_c);
    const auto g = rng.vec(plane * out_c);
    // pad x and g
    std::vector<double> x_pad(pad_plane * in_c, 0.0), g_pad(pad_plane * out_c, 0.0);
    auto pad_in = [&](const std::vector<double>& src, std::vector<double>& dst, int ch) {
        for (int c = 0; c < ch; ++c) {
            for (int y = 0; y < h; ++y) {
                std::memcpy(dst.data() + c * pad_plane + (y + 1) * (w + 2) + 1,
                            src.data() + c * plane + static_cast<size_t>(y) * w,
                            sizeof(double) * w);
            }
        }
    };
    pad_in(x, x_pad, in_c);
    pad_in(g, g_pad, out_c);

    std::vector<double> ax(plane * out_c), atg(plane * in_c);
    k.conv3x3_fwd(x_pad.data(), in_c, h, w, weights.data(), bias.data(), out_c, ax.data());
    k.conv3x3_bwd_input(g_pad.data(), out_c, h, w, weights.data(), in_c, atg.data());
    const double lhs = k.dot(ax.data(), g.data(), ax.size());
    const double rhs = k.dot(x.data(), atg.data(), x.size());
    CHECK(patchforge::testing::rel_err(lhs, rhs) < 1e-12);
}

TEST_CASE("gather/scatter kernels: avx2 bit-identical to scalar") {
    const kernels::Backend* avx2 = avx2_or_skip();
    if (avx2 == nullptr) {
        return;
    }
    const auto& scalar = kernels::scalar_backend();
    TestRng rng(7);
    for (size_t n : {size_t{1}, size_t{4}, size_t{7}, size_t{333}}) {
        const size_t src_n = 64;
        const auto src = rng.vec(src_n);
        std::vector<int32_t> i0(n), i1(n), i2(n), i3(n);
        for (size_t e = 0; e < n; ++e) {
            i0[e] = rng.below(src_n);
            i1[e] = rng.below(src_n);
            i2[e] = rng.below(src_n);
            i3[e] = rng.below(src_n);
        }
        const auto w0 = rng.vec(n), w1 = rng.vec(n), w2 = rng.vec(n), w3 = rng.vec(n);
        std::vector<double> o1(n), o2(n);
        scalar.gather_bilinear(src.data(), i0.data(), i1.data(), i2.data(), i3.data(),
                               w0.data(), w1.data(), w2.data(), w3.data(), n, o1.data());
        avx2->gather_bilinear(src.data(), i0.data(), i1.data(), i2.data(), i3.data(),
                              w0.data(), w1.data(), w2.data(), w3.data(), n, o2.data());
        CHECK(bits_equal(o1, o2));

        const auto g = rng.vec(n);
        std::vector<double> s1(src_n, 0.0), s2(src_n, 0.0);
        scalar.scatter_bilinear(g.data(), i0.data(), i1.data(), i2.data(), i3.data(),
                                w0.data(), w1.data(), w2.data(), w3.data(), n, s1.data());
        avx2->scatter_bilinear(g.data(), i0.data(), i1.data(), i2.data(), i3.data(),
                               w0.data(), w1.data(), w2.data(), w3.data(), n, s2.data());
        CHECK(bits_equal(s1, s2));
    }
}

TEST_CASE("active backend dispatch returns a usable table") {
    const auto& k = kernels::active();
    CHECK(k.name != nullptr);
    const double a[2] = {1.0, 2.0};
    const double b[2] = {3.0, 4.0};
    CHECK(k.dot(a, b, 2) == 11.0);
}
