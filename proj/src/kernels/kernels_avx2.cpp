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

// AVX2+FMA kernel variants. This translation unit is the only one compiled
// with -mavx2 -mfma; entry is gated by runtime CPU detection in backend.cpp.
// Each kernel mirrors the scalar reference operation-for-operation so results
// are bit-identical (see kernels.hpp).

#include "patchforge/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

namespace patchforge::kernels {
namespace {

inline double combine_lanes(__m256d acc) {
    alignas(32) double lane[4];
    _mm256_store_pd(lane, acc);
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double dot_avx2(const double* a, const double* b, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    if (i < n) {
        alignas(32) double lane[4];
        _mm256_store_pd(lane, acc);
        for (; i < n; ++i) {
            lane[i & 3] = std::fma(a[i], b[i], lane[i & 3]);
        }
        return (lane[0] + lane[1]) + (lane[2] + lane[3]);
    }
    return combine_lanes(acc);
}

double asum_avx2(const double* x, size_t n) {
    const __m256d sign_mask = _mm256_set1_pd(-0.0);
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_andnot_pd(sign_mask, _mm256_loadu_pd(x + i)));
    }
    if (i < n) {
        alignas(32) double lane[4];
        _mm256_store_pd(lane, acc);
        for (; i < n; ++i) {
            lane[i & 3] += std::fabs(x[i]);
        }
        return (lane[0] + lane[1]) + (lane[2] + lane[3]);
    }
    return combine_lanes(acc);
}

double dot2d_avx2(const double* a, size_t stride_a, const double* b, size_t stride_b,
                  int rows, int cols) {
    __m256d acc = _mm256_setzero_pd();
    for (int r = 0; r < rows; ++r) {
        const double* pa = a + static_cast<size_t>(r) * stride_a;
        const double* pb = b + static_cast<size_t>(r) * stride_b;
        int c = 0;
        for (; c + 4 <= cols; c += 4) {
            acc = _mm256_fmadd_pd(_mm256_loadu_pd(pa + c), _mm256_loadu_pd(pb + c), acc);
        }
        if (c < cols) {
            alignas(32) double lane[4];
            _mm256_store_pd(lane, acc);
            for (; c < cols; ++c) {
                lane[c & 3] = std::fma(pa[c], pb[c], lane[c & 3]);
            }
            acc = _mm256_load_pd(lane);
        }
    }
    return combine_lanes(acc);
}

double sum2d_avx2(const double* a, size_t stride_a, int rows, int cols) {
    __m256d acc = _mm256_setzero_pd();
    for (int r = 0; r < rows; ++r) {
        const double* pa = a + static_cast<size_t>(r) * stride_a;
        int c = 0;
        for (; c + 4 <= cols; c += 4) {
            acc = _mm256_add_pd(acc, _mm256_loadu_pd(pa + c));
        }
        if (c < cols) {
            alignas(32) double lane[4];
            _mm256_store_pd(lane, acc);
            for (; c < cols; ++c) {
                lane[c & 3] += pa[c];
            }
            acc = _mm256_load_pd(lane);
        }
    }
    return combine_lanes(acc);
}

void axpy_avx2(double alpha, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i,
                         _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) {
        y[i] = std::fma(alpha, x[i], y[i]);
    }
}

void lrelu_fwd_avx2(const double* x, double* y, size_t n, double slope) {
    const __m256d vs = _mm256_set1_pd(slope);
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        const __m256d pos = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(vs, vx), vx, pos));
    }
    for (; i < n; ++i) {
        y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
    }
}

void lrelu_bwd_avx2(const double* x, const double* gy, double* gx, size_t n,
                    double slope) {
    const __m256d vs = _mm256_set1_pd(slope);
    const __m256d zero = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        const __m256d vg = _mm256_loadu_pd(gy + i);
        const __m256d pos = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(gx + i, _mm256_blendv_pd(_mm256_mul_pd(vs, vg), vg, pos));
    }
    for (; i < n; ++i) {
        gx[i] = x[i] > 0.0 ? gy[i] : slope * gy[i];
    }
}

void conv3x3_fwd_avx2(const double* in_pad, int in_c, int h, int w,
                      const double* weights, const double* bias, int out_c,
                      double* out) {
    const size_t pad_stride = static_cast<size_t>(w) + 2;
    const size_t pad_plane = static_cast<size_t>(h + 2) * pad_stride;
    for (int co = 0; co < out_c; ++co) {
        double* out_plane = out + static_cast<size_t>(co) * h * w;
        const double* wco = weights + static_cast<size_t>(co) * in_c * 9;
        const __m256d vbias = _mm256_set1_pd(bias[co]);
        for (int y = 0; y < h; ++y) {
            double* out_row = out_plane + static_cast<size_t>(y) * w;
            int x = 0;
            for (; x + 4 <= w; x += 4) {
                __m256d acc = vbias;
                for (int ci = 0; ci < in_c; ++ci) {
                    const double* plane = in_pad + static_cast<size_t>(ci) * pad_plane;
                    const double* wk = wco + static_cast<size_t>(ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* row =
                            plane + static_cast<size_t>(y + ky) * pad_stride + x;
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[ky * 3 + 0]),
                                              _mm256_loadu_pd(row + 0), acc);
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[ky * 3 + 1]),
                                              _mm256_loadu_pd(row + 1), acc);
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[ky * 3 + 2]),
                                              _mm256_loadu_pd(row + 2), acc);
                    }
                }
                _mm256_storeu_pd(out_row + x, acc);
            }
            for (; x < w; ++x) {
                double acc = bias[co];
                for (int ci = 0; ci < in_c; ++ci) {
                    const double* plane = in_pad + static_cast<size_t>(ci) * pad_plane;
                    const double* wk = wco + static_cast<size_t>(ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* row =
                            plane + static_cast<size_t>(y + ky) * pad_stride + x;
                        acc = std::fma(wk[ky * 3 + 0], row[0], acc);
                        acc = std::fma(wk[ky * 3 + 1], row[1], acc);
                        acc = std::fma(wk[ky * 3 + 2], row[2], acc);
                    }
                }
                out_row[x] = acc;
            }
        }
    }
}

void conv3x3_bwd_input_avx2(const double* gout_pad, int out_c, int h, int w,
                            const double* weights, int in_c, double* gin) {
    const size_t pad_stride = static_cast<size_t>(w) + 2;
    const size_t pad_plane = static_cast<size_t>(h + 2) * pad_stride;
    for (int ci = 0; ci < in_c; ++ci) {
        double* gin_plane = gin + static_cast<size_t>(ci) * h * w;
        for (int y = 0; y < h; ++y) {
            double* gin_row = gin_plane + static_cast<size_t>(y) * w;
            int x = 0;
            for (; x + 4 <= w; x += 4) {
                __m256d acc = _mm256_setzero_pd();
                for (int co = 0; co < out_c; ++co) {
                    const double* plane = gout_pad + static_cast<size_t>(co) * pad_plane;
                    const double* wk = weights + (static_cast<size_t>(co) * in_c + ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* row =
                            plane + static_cast<size_t>(y + ky) * pad_stride + x;
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[(2 - ky) * 3 + 2]),
                                              _mm256_loadu_pd(row + 0), acc);
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[(2 - ky) * 3 + 1]),
                                              _mm256_loadu_pd(row + 1), acc);
                        acc = _mm256_fmadd_pd(_mm256_set1_pd(wk[(2 - ky) * 3 + 0]),
                                              _mm256_loadu_pd(row + 2), acc);
                    }
                }
                _mm256_storeu_pd(gin_row + x, acc);
            }
            for (; x < w; ++x) {
                double acc = 0.0;
                for (int co = 0; co < out_c; ++co) {
                    const double* plane = gout_pad + static_cast<size_t>(co) * pad_plane;
                    const double* wk = weights + (static_cast<size_t>(co) * in_c + ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        const double* row =
                            plane + static_cast<size_t>(y + ky) * pad_stride + x;
                        acc = std::fma(wk[(2 - ky) * 3 + 2], row[0], acc);
                        acc = std::fma(wk[(2 - ky) * 3 + 1], row[1], acc);
                        acc = std::fma(wk[(2 - ky) * 3 + 0], row[2], acc);
                    }
                }
                gin_row[x] = acc;
            }
        }
    }
}

void gather_bilinear_avx2(const double* src, const int32_t* i0, const int32_t* i1,
                          const int32_t* i2, const int32_t* i3, const double* w0,
                          const double* w1, const double* w2, const double* w3,
                          size_t n, double* out_vals) {
    size_t e = 0;
    for (; e + 4 <= n; e += 4) {
        const __m256d s0 = _mm256_i32gather_pd(
            src, _mm_loadu_si128(reinterpret_cast<const __m128i*>(i0 + e)), 8);
        const __m256d s1 = _mm256_i32gather_pd(
            src, _mm_loadu_si128(reinterpret_cast<const __m128i*>(i1 + e)), 8);
        const __m256d s2 = _mm256_i32gather_pd(
            src, _mm_loadu_si128(reinterpret_cast<const __m128i*>(i2 + e)), 8);
        const __m256d s3 = _mm256_i32gather_pd(
            src, _mm_loadu_si128(reinterpret_cast<const __m128i*>(i3 + e)), 8);
        __m256d v = _mm256_mul_pd(_mm256_loadu_pd(w0 + e), s0);
        v = _mm256_fmadd_pd(_mm256_loadu_pd(w1 + e), s1, v);
        v = _mm256_fmadd_pd(_mm256_loadu_pd(w2 + e), s2, v);
        v = _mm256_fmadd_pd(_mm256_loadu_pd(w3 + e), s3, v);
        _mm256_storeu_pd(out_vals + e, v);
    }
    for (; e < n; ++e) {
        double v = w0[e] * src[i0[e]];
        v = std::fma(w1[e], src[i1[e]], v);
        v = std::fma(w2[e], src[i2[e]], v);
        v = std::fma(w3[e], src[i3[e]], v);
        out_vals[e] = v;
    }
}

// Scatter collides on shared source pixels; the fixed entry order is part of
// the determinism contract, so the AVX2 table reuses a scalar loop.
void scatter_bilinear_seq(const double* gout_vals, const int32_t* i0, const int32_t* i1,
                          const int32_t* i2, const int32_t* i3, const double* w0,
                          const double* w1, const double* w2, const double* w3,
                          size_t n, double* gsrc) {
    for (size_t e = 0; e < n; ++e) {
        const double g = gout_vals[e];
        gsrc[i0[e]] = std::fma(w0[e], g, gsrc[i0[e]]);
        gsrc[i1[e]] = std::fma(w1[e], g, gsrc[i1[e]]);
        gsrc[i2[e]] = std::fma(w2[e], g, gsrc[i2[e]]);
        gsrc[i3[e]] = std::fma(w3[e], g, gsrc[i3[e]]);
    }
}

} // namespace

const Backend* avx2_backend_impl() {
    static const Backend table = {
        "avx2",
        dot_avx2,
        asum_avx2,
        dot2d_avx2,
        sum2d_avx2,
        axpy_avx2,
        lrelu_fwd_avx2,
        lrelu_bwd_avx2,
        conv3x3_fwd_avx2,
        conv3x3_bwd_input_avx2,
        gather_bilinear_avx2,
        scatter_bilinear_seq,
    };
    return &table;
}

} // namespace patchforge::kernels

#else // !(__AVX2__ && __FMA__)

namespace patchforge::kernels {

const Backend* avx2_backend_impl() { return nullptr; }

} // namespace patchforge::kernels

#endif
