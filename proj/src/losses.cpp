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

#include "patchforge/losses.hpp"

#include <cmath>

#include "patchforge/kernels.hpp"

namespace patchforge {

namespace {
constexpr double kTvDelta = 1e-12;
}

const char* attack_mode_name(AttackMode mode) {
    return mode == AttackMode::Untargeted ? "untargeted" : "targeted";
}

TvResult tv_loss(const Patch& patch) {
    const int rows = patch.rows();
    const int cols = patch.cols();
    TvResult result;
    result.gradient = Patch(rows, cols, 0.0);
    const double* p = patch.data();
    double* g = result.gradient.data();
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const size_t idx = static_cast<size_t>(i) * cols + j;
            const double dx = j + 1 < cols ? p[idx] - p[idx + 1] : 0.0;
            const double dy = i + 1 < rows ? p[idx] - p[idx + cols] : 0.0;
            const double r = std::sqrt(dx * dx + dy * dy + kTvDelta);
            result.value += r;
            const double inv_r = 1.0 / r;
            g[idx] += (dx + dy) * inv_r;
            if (j + 1 < cols) {
                g[idx + 1] -= dx * inv_r;
            }
            if (i + 1 < rows) {
                g[idx + cols] -= dy * inv_r;
            }
        }
    }
    return result;
}

AdvResult adv_loss(std::span<const Embedding> batch, const Embedding& reference,
                   AttackMode mode) {
    if (batch.empty()) {
        fail(ErrorKind::EmptyBatch, "adversarial loss needs at least one embedding");
    }
    const auto& k = kernels::active();
    const size_t d = reference.v.size();
    const double sign = mode == AttackMode::Untargeted ? 1.0 : -1.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    AdvResult result;
    result.per_item.reserve(batch.size());
    for (const Embedding& e : batch) {
        if (e.v.size() != d) {
            fail(ErrorKind::ShapeMismatch, "embedding dimension mismatch in batch");
        }
        result.per_item.push_back(sign * k.dot(e.v.data(), reference.v.data(), d));
    }
    double sum = 0.0;
    for (double v : result.per_item) {
        sum += v;
    }
    result.value = sum * inv_n;
    result.grad_embedding.assign(d, 0.0);
    k.axpy(sign * inv_n, reference.v.data(), result.grad_embedding.data(), d);
    return result;
}

TotalLossResult TotalLossEvaluator::evaluate(std::span<const AttackPhoto> photos,
                                             const Patch& patch, double tau,
                                             AttackMode mode, const Embedding& reference) {
    if (photos.empty()) {
        fail(ErrorKind::EmptyBatch, "total loss needs at least one photo");
    }
    const auto& k = kernels::active();
    workspaces_.resize(photos.size());

    std::vector<Embedding> embeddings;
    embeddings.reserve(photos.size());
    for (size_t i = 0; i < photos.size(); ++i) {
        try {
            const CompositeResult comp =
                apply_patch(photos[i].image, patch, photos[i].patch_grid);
            const ImageTensor aligned = align_face(comp.image, photos[i].align_grid);
            embeddings.push_back(net_.forward(aligned, workspaces_[i]));
        } catch (const Error& e) {
            fail(e.kind(), "photo " + std::to_string(i) + " (" + photos[i].id + "): " +
                               e.what());
        }
    }

    const AdvResult adv = adv_loss(embeddings, reference, mode);
    const TvResult tv = tv_loss(patch);

    TotalLossResult result;
    result.grad = Patch(patch.rows(), patch.cols(), 0.0);
    for (size_t i = 0; i < photos.size(); ++i) {
        const ImageTensor g_aligned = net_.backward(workspaces_[i], adv.grad_embedding);
        const ImageTensor g_photo = sample_adjoint(g_aligned, photos[i].align_grid);
        const Patch g_patch =
            apply_patch_adjoint(g_photo, photos[i].patch_grid, patch.rows(), patch.cols());
        k.axpy(1.0, g_patch.data(), result.grad.data(), result.grad.size());
    }
    k.axpy(tau, tv.gradient.data(), result.grad.data(), result.grad.size());

    result.breakdown.adv = adv.value;
    result.breakdown.tv = tv.value;
    result.breakdown.total = adv.value + tau * tv.value;
    result.breakdown.per_photo_adv = adv.per_item;
    return result;
}

TotalLossResult total_loss(std::span<const AttackPhoto> photos, const Patch& patch,
                           const EmbedNet& net, double tau, AttackMode mode,
                           const Embedding& reference) {
    TotalLossEvaluator evaluator(net);
    return evaluator.evaluate(photos, patch, tau, mode, reference);
}

} // namespace patchforge
