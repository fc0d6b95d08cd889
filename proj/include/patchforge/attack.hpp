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

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchforge/losses.hpp"

namespace patchforge {

enum class PatchInit { Constant, UniformRandom };
enum class StopReason { Converged, BudgetExhausted };

struct AttackConfig {
    double epsilon = 1.0 / 16.0; // sign-step size
    double mu = 0.9;             // momentum decay
    double tau = 1e-3;           // TV weight
    int max_iters = 10000;
    AttackMode mode = AttackMode::Untargeted;
    double stop_when_adv_below = 0.0;
    uint64_t seed = 1;
    PatchInit init = PatchInit::Constant;
    double init_constant = 0.5;
};

struct IterationRecord {
    int iter = 0;
    double adv = 0.0;
    double tv = 0.0;
    double total = 0.0;
};

struct AttackTrace {
    std::vector<IterationRecord> records;
    StopReason stop_reason = StopReason::BudgetExhausted;
    Patch final_patch;
    double wall_time_seconds = 0.0;
};

/// One momentum sign-gradient update, in place:
///   g := mu*g + grad/||grad||_1   (decay only when ||grad||_1 == 0)
///   p := clip(p - epsilon*sign(g), 0, 1), sign(0) = 0.
void momentum_step(std::vector<double>& momentum, std::span<const double> grad,
                   Patch& patch, double epsilon, double mu);

/// Called once per iteration with the record and the patch after that
/// iteration's update (or the unchanged patch on the converged iteration).
using IterationObserver =
    std::function<void(const IterationRecord&, const Patch&)>;

/// Iterate total_loss + momentum_step until the batch-mean adversarial loss
/// drops below the stop threshold or the budget runs out. The patch stays
/// grayscale in [0,1] throughout; deterministic given the seed.
AttackTrace run_attack(std::span<const AttackPhoto> photos, const EmbedNet& net,
                       const Embedding& gt_embedding,
                       const std::optional<Embedding>& target_embedding,
                       const AttackConfig& config,
                       const IterationObserver& observer = nullptr);

struct ClassEmbedding {
    int class_id = 0;
    Embedding embedding;
};

/// Most attacker-similar gallery class other than the ground truth; ties go
/// to the lowest class id.
ClassEmbedding select_target_class(std::span<const ClassEmbedding> gallery,
                                   const Embedding& attacker, int gt_class);

/// Per-split mean and standard error of cos(e_x_t, gt) and, when a target is
/// given, cos(e_x_t, target), with the patch applied through each photo's
/// own grids. SEM uses the n-1 divisor over sqrt(n) and is undefined at n=1.
struct SplitStats {
    int n = 0;
    double mean_gt = 0.0;
    std::optional<double> sem_gt;
    std::optional<double> mean_target;
    std::optional<double> sem_target;
};

/// Sample mean and standard error (n-1 divisor over sqrt(n)); SEM is
/// undefined (nullopt) for a single sample.
std::pair<double, std::optional<double>> mean_and_sem(std::span<const double> values);

struct PhotoSets {
    std::vector<AttackPhoto> train, val, test;
};

struct EvaluationTable {
    std::string patch_name;
    AttackMode mode = AttackMode::Untargeted;
    SplitStats train, val, test;
};

EvaluationTable evaluate_patch(const Patch& patch, const PhotoSets& sets,
                               const EmbedNet& net, const Embedding& gt_embedding,
                               const std::optional<Embedding>& target_embedding);

/// Trace CSV: header "iter,adv,tv,total", one row per record, full precision.
void write_trace_csv(const AttackTrace& trace, const std::filesystem::path& path);

/// Evaluation CSV with full-precision numeric columns (one row per table).
void write_evaluation_csv(const EvaluationTable& table,
                          const std::filesystem::path& path);

/// Aligned one-row text rendering of the evaluation, Table-style.
std::string render_evaluation_text(const EvaluationTable& table);

} // namespace patchforge
