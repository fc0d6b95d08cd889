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

#include "patchforge/attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "patchforge/kernels.hpp"

namespace patchforge {

namespace {

void validate_config(const AttackConfig& config) {
    if (!(config.epsilon > 0.0)) {
        fail(ErrorKind::InvalidArgument, "epsilon must be positive");
    }
    if (!(config.mu >= 0.0 && config.mu < 1.0)) {
        fail(ErrorKind::InvalidArgument, "mu must lie in [0,1)");
    }
    if (config.max_iters < 1) {
        fail(ErrorKind::InvalidArgument, "max_iters must be >= 1");
    }
}

Patch make_initial_patch(int rows, int cols, const AttackConfig& config) {
    Patch p(rows, cols, config.init_constant);
    if (config.init == PatchInit::UniformRandom) {
        std::mt19937_64 eng(config.seed);
        for (double& v : p.image.data) {
            v = static_cast<double>(eng() >> 11) * 0x1.0p-53;
        }
    }
    return p;
}

double cosine(const Embedding& a, const Embedding& b) {
    return kernels::active().dot(a.v.data(), b.v.data(), a.v.size());
}

SplitStats split_stats(std::span<const AttackPhoto> photos, const Patch& patch,
                       const EmbedNet& net, const Embedding& gt,
                       const std::optional<Embedding>& target, const char* split_name) {
    if (photos.empty()) {
        fail(ErrorKind::EmptySplit, std::string(split_name) + " split is empty");
    }
    EmbedNet::Workspace ws;
    std::vector<double> gt_cos, tg_cos;
    gt_cos.reserve(photos.size());
    for (const AttackPhoto& photo : photos) {
        const CompositeResult comp = apply_patch(photo.image, patch, photo.patch_grid);
        const ImageTensor aligned = align_face(comp.image, photo.align_grid);
        const Embedding e = net.forward(aligned, ws);
        gt_cos.push_back(cosine(e, gt));
        if (target.has_value()) {
            tg_cos.push_back(cosine(e, *target));
        }
    }
    SplitStats stats;
    stats.n = static_cast<int>(photos.size());
    const auto [gm, gs] = mean_and_sem(gt_cos);
    stats.mean_gt = gm;
    stats.sem_gt = gs;
    if (target.has_value()) {
        const auto [tm, ts] = mean_and_sem(tg_cos);
        stats.mean_target = tm;
        stats.sem_target = ts;
    }
    return stats;
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::pair<double, std::optional<double>> mean_and_sem(std::span<const double> values) {
    const double n = static_cast<double>(values.size());
    double sum = 0.0;
    for (double x : values) {
        sum += x;
    }
    const double mean = sum / n;
    std::optional<double> sem;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double x : values) {
            ss += (x - mean) * (x - mean);
        }
        sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return {mean, sem};
}

void momentum_step(std::vector<double>& momentum, std::span<const double> grad,
                   Patch& patch, double epsilon, double mu) {
    if (momentum.size() != grad.size() || patch.size() != grad.size()) {
        fail(ErrorKind::ShapeMismatch, "momentum step shapes disagree");
    }
    const double l1 = kernels::active().asum(grad.data(), grad.size());
    if (l1 > 0.0) {
        const double inv_l1 = 1.0 / l1;
        for (size_t i = 0; i < momentum.size(); ++i) {
            momentum[i] = mu * momentum[i] + grad[i] * inv_l1;
        }
    } else {
        // Eq-undefined normalization: decay only.
        for (double& g : momentum) {
            g = mu * g;
        }
    }
    double* p = patch.data();
    for (size_t i = 0; i < momentum.size(); ++i) {
        const double sign = momentum[i] > 0.0 ? 1.0 : (momentum[i] < 0.0 ? -1.0 : 0.0);
        p[i] = std::clamp(p[i] - epsilon * sign, 0.0, 1.0);
    }
}

AttackTrace run_attack(std::span<const AttackPhoto> photos, const EmbedNet& net,
                       const Embedding& gt_embedding,
                       const std::optional<Embedding>& target_embedding,
                       const AttackConfig& config, const IterationObserver& observer) {
    validate_config(config);
    if (photos.empty()) {
        fail(ErrorKind::EmptyBatch, "attack needs at least one training photo");
    }
    if (config.mode == AttackMode::Targeted && !target_embedding.has_value()) {
        fail(ErrorKind::MissingTarget, "targeted attack needs a target embedding");
    }
    const int patch_rows = photos[0].patch_grid.src_rows;
    const int patch_cols = photos[0].patch_grid.src_cols;
    for (const AttackPhoto& photo : photos) {
        if (photo.patch_grid.src_rows != patch_rows ||
            photo.patch_grid.src_cols != patch_cols) {
            fail(ErrorKind::ShapeMismatch, "photos disagree on the patch shape");
        }
    }
    const Embedding& reference =
        config.mode == AttackMode::Targeted ? *target_embedding : gt_embedding;

    const auto t0 = std::chrono::steady_clock::now();
    AttackTrace trace;
    Patch patch = make_initial_patch(patch_rows, patch_cols, config);
    std::vector<double> momentum(patch.size(), 0.0);
    TotalLossEvaluator evaluator(net);

    for (int iter = 1; iter <= config.max_iters; ++iter) {
        const TotalLossResult res =
            evaluator.evaluate(photos, patch, config.tau, config.mode, reference);
        IterationRecord rec{iter, res.breakdown.adv, res.breakdown.tv,
                            res.breakdown.total};
        trace.records.push_back(rec);
        if (res.breakdown.adv < config.stop_when_adv_below) {
            trace.stop_reason = StopReason::Converged;
            if (observer) {
                observer(rec, patch);
            }
            break;
        }
        momentum_step(momentum, res.grad.image.data, patch, config.epsilon, config.mu);
        if (observer) {
            observer(rec, patch);
        }
    }
    trace.final_patch = std::move(patch);
    trace.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

ClassEmbedding select_target_class(std::span<const ClassEmbedding> gallery,
                                   const Embedding& attacker, int gt_class) {
    const ClassEmbedding* best = nullptr;
    double best_cos = 0.0;
    for (const ClassEmbedding& entry : gallery) {
        if (entry.class_id == gt_class) {
            continue;
        }
        const double c = cosine(entry.embedding, attacker);
        if (best == nullptr || c > best_cos ||
            (c == best_cos && entry.class_id < best->class_id)) {
            best = &entry;
            best_cos = c;
        }
    }
    if (best == nullptr) {
        fail(ErrorKind::NoEligibleClass, "gallery holds no class besides the ground truth");
    }
    return *best;
}

EvaluationTable evaluate_patch(const Patch& patch, const PhotoSets& sets,
                               const EmbedNet& net, const Embedding& gt_embedding,
                               const std::optional<Embedding>& target_embedding) {
    EvaluationTable table;
    table.mode =
        target_embedding.has_value() ? AttackMode::Targeted : AttackMode::Untargeted;
    table.train =
        split_stats(sets.train, patch, net, gt_embedding, target_embedding, "train");
    table.val = split_stats(sets.val, patch, net, gt_embedding, target_embedding, "val");
    table.test =
        split_stats(sets.test, patch, net, gt_embedding, target_embedding, "test");
    return table;
}

void write_trace_csv(const AttackTrace& trace, const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) {
        fail(ErrorKind::IoFailure, "cannot write " + path.string());
    }
    std::fprintf(f, "iter,adv,tv,total\n");
    for (const IterationRecord& r : trace.records) {
        std::fprintf(f, "%d,%.17g,%.17g,%.17g\n", r.iter, r.adv, r.tv, r.total);
    }
    std::fclose(f);
}

void write_evaluation_csv(const EvaluationTable& table,
                          const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) {
        fail(ErrorKind::IoFailure, "cannot write " + path.string());
    }
    std::fprintf(f, "patch,attack,split,n,mean_gt,sem_gt,mean_target,sem_target\n");
    auto row = [&](const char* split, const SplitStats& s) {
        std::fprintf(f, "%s,%s,%s,%d,%s,%s,%s,%s\n", table.patch_name.c_str(),
                     attack_mode_name(table.mode), split, s.n,
                     format_full(s.mean_gt).c_str(),
                     s.sem_gt ? format_full(*s.sem_gt).c_str() : "",
                     s.mean_target ? format_full(*s.mean_target).c_str() : "",
                     s.sem_target ? format_full(*s.sem_target).c_str() : "");
    };
    row("train", table.train);
    row("val", table.val);
    row("test", table.test);
    std::fclose(f);
}

std::string render_evaluation_text(const EvaluationTable& table) {
    auto cell = [](double mean, const std::optional<double>& sem) {
        char buf[64];
        if (sem.has_value()) {
            std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", mean, *sem);
        } else {
            std::snprintf(buf, sizeof(buf), "%.3f ± n/a", mean);
        }
        return std::string(buf);
    };
    auto target_cell = [&](const SplitStats& s) {
        return s.mean_target.has_value() ? cell(*s.mean_target, s.sem_target)
                                         : std::string("—");
    };
    std::ostringstream os;
    os << table.patch_name << " | " << attack_mode_name(table.mode) << " | "
       << cell(table.train.mean_gt, table.train.sem_gt) << " | "
       << target_cell(table.train) << " | " << cell(table.val.mean_gt, table.val.sem_gt)
       << " | " << target_cell(table.val) << " | "
       << cell(table.test.mean_gt, table.test.sem_gt) << " | "
       << target_cell(table.test);
    return os.str();
}

} // namespace patchforge
