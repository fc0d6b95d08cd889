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

#include "patchforge/kernels.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace patchforge::kernels {

// Defined in kernels_avx2.cpp (nullptr when built without AVX2 support).
const Backend* avx2_backend_impl();

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Backend* choose() {
    const Backend* avx2 = avx2_backend();
    const char* request = std::getenv("PATCHFORGE_KERNELS");
    if (request != nullptr) {
        if (std::strcmp(request, "scalar") == 0) {
            return &scalar_backend();
        }
        if (std::strcmp(request, "avx2") == 0) {
            if (avx2 != nullptr) {
                return avx2;
            }
            std::fprintf(stderr,
                         "patchforge: PATCHFORGE_KERNELS=avx2 requested but AVX2 is "
                         "unavailable; using scalar kernels\n");
            return &scalar_backend();
        }
        if (std::strcmp(request, "auto") != 0) {
            std::fprintf(stderr,
                         "patchforge: unknown PATCHFORGE_KERNELS value '%s'; using "
                         "auto selection\n",
                         request);
        }
    }
    return avx2 != nullptr ? avx2 : &scalar_backend();
}

} // namespace

const Backend* avx2_backend() {
    return cpu_has_avx2_fma() ? avx2_backend_impl() : nullptr;
}

const Backend& active() {
    static const Backend* chosen = choose();
    return *chosen;
}

} // namespace patchforge::kernels
