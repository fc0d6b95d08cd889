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

// Scalar reference kernels. These definitions are the semantics: the AVX2
// variants replay the same IEEE operation sequence per element / per lane.

#include "patchforge/kernels.hpp"

#include <cmath>
#include <cstddef>

namespace patchforge::kernels {
namespace {

double dot_scalar(const double* a, const double* b, size_t n) {
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        lane[0] = std::fma(a[i + 0], b[i + 0], lane[0]);
        lane[1] = std::fma(a[i + 1], b[i + 1], lane[1]);
        lane[2] = std::fma(a[i + 2], b[i + 2], lane[2]);
        lane[3] = std::fma(a[i + 3], b[i + 3], lane[3]);
    }
    for (; i < n; ++i) {
        lane[i & 3] = std::fma(a[i], b[i], lane[i & 3]);
    }
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double asum_scalar(const double* x, size_t n) {
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        lane[0] += std::fabs(x[i + 0]);
        lane[1] += std::fabs(x[i + 1]);
        lane[2] += std::fabs(x[i + 2]);
        lane[3] += std::fabs(x[i + 3]);
    }
    for (; i < n; ++i) {
        lane[i & 3] += std::fabs(x[i]);
    }
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double dot2d_scalar(const double* a, size_t stride_a, const double* b, size_t stride_b,
                    int rows, int cols) {
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    for (int r = 0; r < rows; ++r) {
        const double* pa = a + static_cast<size_t>(r) * stride_a;
        const double* pb = b + static_cast<size_t>(r) * stride_b;
        int c = 0;
        for (; c + 4 <= cols; c += 4) {
            lane[0] = std::fma(pa[c + 0], pb[c + 0], lane[0]);
            lane[1] = std::fma(pa[c + 1], pb[c + 1], lane[1]);
            lane[2] = std::fma(pa[c + 2], pb[c + 2], lane[2]);
            lane[3] = std::fma(pa[c + 3], pb[c + 3], lane[3]);
        }
        for (; c < cols; ++c) {
            lane[c & 3] = std::fma(pa[c], pb[c], lane[c & 3]);
        }
    }
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double sum2d_scalar(const double* a, size_t stride_a, int rows, int cols) {
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    for (int r = 0; r < rows; ++r) {
        const double* pa = a + static_cast<size_t>(r) * stride_a;
        int c = 0;
        for (; c + 4 <= cols; c += 4) {
            lane[0] += pa[c + 0];
            lane[1] += pa[c + 1];
            lane[2] += pa[c + 2];
            lane[3] += pa[c + 3];
        }
        for (; c < cols; ++c) {
            lane[c & 3] += pa[c];
        }
    }
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

void axpy_scalar(double alpha, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        y[i] = std::fma(alpha, x[i], y[i]);
    }
}

void lrelu_fwd_scalar(const double* x, double* y, size_t n, double slope) {
    for (size_t i = 0; i < n; ++i) {
        y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
    }
}

void lrelu_bwd_scalar(const double* x, const double* gy, double* gx, size_t n,
                      double slope) {
    for (size_t i = 0; i < n; ++i) {
        gx[i] = x[i] > 0.0 ? gy[i] : slope * gy[i];
    }
}

void conv3x3_fwd_scalar(const double* in_pad, int in_c, int h, int w,
                        const double* weights, const double* bias, int out_c,
                        double* out) {
    const size_t pad_stride = static_cast<size_t>(w) + 2;
    const size_t pad_plane = static_cast<size_t>(h + 2) * pad_stride;
    for (int co = 0; co < out_c; ++co) {
        double* out_plane = out + static_cast<size_t>(co) * h * w;
        const double* wco = weights + static_cast<size_t>(co) * in_c * 9;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = bias[co];
                for (int ci = 0; ci < in_c; ++ci) {
                    const double* plane = in_pad + static_cast<size_t>(ci) * pad_plane;
                    const double* wk = wco + static_cast<size_t>(ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* row = plane + static_cast<size_t>(y + ky) * pad_stride + x;
                        acc = std::fma(wk[ky * 3 + 0], row[0], acc);
                        acc = std::fma(wk[ky * 3 + 1], row[1], acc);
                        acc = std::fma(wk[ky * 3 + 2], row[2], acc);
                    }
                }
                out_plane[static_cast<size_t>(y) * w + x] = acc;
            }
        }
    }
}

void conv3x3_bwd_input_scalar(const double* gout_pad, int out_c, int h, int w,
                              const double* weights, int in_c, double* gin) {
    // gin[ci][y][x] = sum_{co,ky,kx} w[co][ci][2-ky][2-kx] * gout_pad[co][y+ky][x+kx]
    const size_t pad_stride = static_cast<size_t>(w) + 2;
    const size_t pad_plane = static_cast<size_t>(h + 2) * pad_stride;
    for (int ci = 0; ci < in_c; ++ci) {
        double* gin_plane = gin + static_cast<size_t>(ci) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int co = 0; co < out_c; ++co) {
                    const double* plane = gout_pad + static_cast<size_t>(co) * pad_plane;
                    const double* wk =
                        weights + (static_cast<size_t>(co) * in_c + ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* row = plane + static_cast<size_t>(y + ky) * pad_stride + x;
                        acc = std::fma(wk[(2 - ky) * 3 + 2], row[0], acc);
                        acc = std::fma(wk[(2 - ky) * 3 + 1], row[1], acc);
                        acc = std::fma(wk[(2 - ky) * 3 + 0], row[2], acc);
                    }
                }
                gin_plane[static_cast<size_t>(y) * w + x] = acc;
            }
        }
    }
}

void gather_bilinear_scalar(const double* src, const int32_t* i0, const int32_t* i1,
                            const int32_t* i2, const int32_t* i3, const double* w0,
                            const double* w1, const double* w2, const double* w3,
                            size_t n, double* out_vals) {
    for (size_t e = 0; e < n; ++e) {
        double v = w0[e] * src[i0[e]];
        v = std::fma(w1[e], src[i1[e]], v);
        v = std::fma(w2[e], src[i2[e]], v);
        v = std::fma(w3[e], src[i3[e]], v);
        out_vals[e] = v;
    }
}

void scatter_bilinear_scalar(const double* gout_vals, const int32_t* i0,
                             const int32_t* i1, const int32_t* i2, const int32_t* i3,
                             const double* w0, const double* w1, const double* w2,
                             const double* w3, size_t n, double* gsrc) {
    for (size_t e = 0; e < n; ++e) {
        const double g = gout_vals[e];
        gsrc[i0[e]] = std::fma(w0[e], g, gsrc[i0[e]]);
        gsrc[i1[e]] = std::fma(w1[e], g, gsrc[i1[e]]);
        gsrc[i2[e]] = std::fma(w2[e], g, gsrc[i2[e]]);
        gsrc[i3[e]] = std::fma(w3[e], g, gsrc[i3[e]]);
    }
}

} // namespace

const Backend& scalar_backend() {
    static const Backend table = {
        "scalar",
        dot_scalar,
        asum_scalar,
        dot2d_scalar,
        sum2d_scalar,
        axpy_scalar,
        lrelu_fwd_scalar,
        lrelu_bwd_scalar,
        conv3x3_fwd_scalar,
        conv3x3_bwd_input_scalar,
        gather_bilinear_scalar,
        scatter_bilinear_scalar,
    };
    return table;
}

} // namespace patchforge::kernels
