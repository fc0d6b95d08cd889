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

#include <span>
#include <string>
#include <vector>

#include "patchforge/embednet.hpp"
#include "patchforge/geometry.hpp"
#include "patchforge/sampler.hpp"
#include "patchforge/tensor.hpp"

namespace patchforge {

enum class AttackMode { Untargeted, Targeted };

const char* attack_mode_name(AttackMode mode);

/// One training/validation/test photo bundled with its precomputed grids.
struct AttackPhoto {
    std::string id;
    ImageTensor image;
    SamplingGrid patch_grid; // patch -> this photo (built per photo, reused)
    SamplingGrid align_grid; // this photo -> aligned network input
};

/// Smoothness term: sum over pixels of sqrt(dx^2 + dy^2 + delta) with
/// out-of-range neighbor differences treated as 0 and delta = 1e-12 keeping
/// the root differentiable; the gradient is exact for this stabilized form.
struct TvResult {
    double value = 0.0;
    Patch gradient;
};
TvResult tv_loss(const Patch& patch);

/// Adversarial cosine term. The attack loop descends on the total loss
/// (p := p - eps*sign(g)), so the untargeted term is the mean similarity to
/// the ground-truth embedding (driven down, stop once negative) and the
/// targeted term is minus the mean similarity to the target embedding
/// (driven down as the target similarity rises).
struct AdvResult {
    double value = 0.0;
    std::vector<double> per_item;       // value == mean(per_item)
    std::vector<double> grad_embedding; // d value / d e, identical for every item
};
AdvResult adv_loss(std::span<const Embedding> batch, const Embedding& reference,
                   AttackMode mode);

/// total = adv + tau * tv, per photo chain apply_patch -> align_face ->
/// forward_embed, gradients assembled through the exact adjoints in fixed
/// photo order.
struct LossBreakdown {
    double total = 0.0;
    double adv = 0.0;
    double tv = 0.0;
    std::vector<double> per_photo_adv;
};
struct TotalLossResult {
    LossBreakdown breakdown;
    Patch grad;
};

/// Reusable evaluator (keeps per-photo network workspaces warm across attack
/// iterations).
class TotalLossEvaluator {
public:
    explicit TotalLossEvaluator(const EmbedNet& net) : net_(net) {}

    TotalLossResult evaluate(std::span<const AttackPhoto> photos, const Patch& patch,
                             double tau, AttackMode mode, const Embedding& reference);

private:
    const EmbedNet& net_;
    std::vector<EmbedNet::Workspace> workspaces_;
};

TotalLossResult total_loss(std::span<const AttackPhoto> photos, const Patch& patch,
                           const EmbedNet& net, double tau, AttackMode mode,
                           const Embedding& reference);

} // namespace patchforge
