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
#include <cstdint>

namespace patchforge::kernels {

// Data-parallel inner loops behind the embedding net, the bilinear sampler
// and the loss reductions. Every kernel has a scalar reference definition;
// the AVX2 variant is required to be bit-identical to it:
//   * multiply-adds are explicit fma in both variants (no compiler
//     contraction, see -ffp-contract=off),
//   * reductions accumulate in four lanes, lane k holding the elements with
//     column index == k (mod 4), combined as (l0+l1)+(l2+l3),
//   * elementwise kernels perform the same IEEE op sequence per element.
// The equivalence test suite asserts bit-exact agreement, so runtime
// dispatch never changes results.

struct Backend {
    const char* name;

    // -- blocked-4 reductions ------------------------------------------------
    double (*dot)(const double* a, const double* b, size_t n);
    double (*asum)(const double* x, size_t n);
    // Row-strided variants over a rows x cols window; lanes restart at each
    // row (lane index = column mod 4).
    double (*dot2d)(const double* a, size_t stride_a, const double* b, size_t stride_b,
                    int rows, int cols);
    double (*sum2d)(const double* a, size_t stride_a, int rows, int cols);

    // -- elementwise ---------------------------------------------------------
    void (*axpy)(double alpha, const double* x, double* y, size_t n);
    void (*lrelu_fwd)(const double* x, double* y, size_t n, double slope);
    void (*lrelu_bwd)(const double* x, const double* gy, double* gx, size_t n,
                      double slope);

    // -- 3x3 convolution, stride 1, zero padding 1 ---------------------------
    // Input planes are pre-padded to (h+2) x (w+2); weights are
    // [out_c][in_c][3][3]; outputs are unpadded h x w planes.
    void (*conv3x3_fwd)(const double* in_pad, int in_c, int h, int w,
                        const double* weights, const double* bias, int out_c,
                        double* out);
    // Gradient w.r.t. the (unpadded) input given the padded output gradient.
    void (*conv3x3_bwd_input)(const double* gout_pad, int out_c, int h, int w,
                              const double* weights, int in_c, double* gin);

    // -- bilinear sampling over SoA grid arrays -------------------------------
    // out_vals[e] = fma(w3,s3, fma(w2,s2, fma(w1,s1, w0*s0))) with sk = src[ik[e]].
    void (*gather_bilinear)(const double* src, const int32_t* i0, const int32_t* i1,
                            const int32_t* i2, const int32_t* i3, const double* w0,
                            const double* w1, const double* w2, const double* w3,
                            size_t n, double* out_vals);
    // Transpose of gather: scatter-adds into gsrc in entry order. The scatter
    // order is part of the determinism contract, so both variants run the
    // scalar loop.
    void (*scatter_bilinear)(const double* gout_vals, const int32_t* i0,
                             const int32_t* i1, const int32_t* i2, const int32_t* i3,
                             const double* w0, const double* w1, const double* w2,
                             const double* w3, size_t n, double* gsrc);
};

/// Reference implementation; always available.
const Backend& scalar_backend();

/// AVX2+FMA implementation, or nullptr when the build or CPU lacks support.
const Backend* avx2_backend();

/// The dispatched backend. Chosen once: PATCHFORGE_KERNELS=scalar|avx2 forces
/// a variant (falling back to scalar with a warning if unsupported), anything
/// else picks the widest supported variant.
const Backend& active();

} // namespace patchforge::kernels
