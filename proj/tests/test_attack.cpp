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

#include "patchforge/attack.hpp"
#include "patchforge/embednet.hpp"
#include "test_helpers.hpp"

using namespace patchforge;
using patchforge::testing::random_image;
using patchforge::testing::TestRng;

namespace {

Embedding unit_embedding(TestRng& rng, int d) {
    Embedding e;
    e.v = rng.vec(d);
    double norm = 0.0;
    for (double v : e.v) {
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : e.v) {
        v /= norm;
    }
    return e;
}

struct TinyScene {
    EmbedNetConfig config;
    ModelCheckpoint ckpt;
    std::vector<AttackPhoto> photos;
    Embedding gt;

    explicit TinyScene(TestRng& rng, int num_photos = 2) {
        config.input_rows = 24;
        config.input_cols = 24;
        config.conv_channels = {4, 6};
        config.embed_dim = 16;
        config.seed = 5;
        ckpt = make_initial_checkpoint(config, 0);
        for (int i = 0; i < num_photos; ++i) {
            AttackPhoto photo;
            photo.id = "p" + std::to_string(i);
            photo.image = random_image(rng, 24, 24, 3);
            CellCorrespondence cell;
            cell.cell_id = 0;
            cell.patch_corners = {Point2{0, 0}, Point2{7, 0}, Point2{7, 5}, Point2{0, 5}};
            cell.photo_corners = {Point2{3, 4}, Point2{19, 4}, Point2{19, 16},
                                  Point2{3, 16}};
            photo.patch_grid = precompute_patch_grid(std::vector{cell}, 6, 8, 24, 24);
            photo.align_grid =
                precompute_alignment_grid(SimilarityTransform{}, 24, 24, 24, 24);
            photos.push_back(std::move(photo));
        }
        gt = unit_embedding(rng, 16);
    }
};

/// Independent single-step FGSM oracle (Eq.-1 style sign step).
Patch fgsm_oracle(const Patch& patch, const Patch& grad, double epsilon) {
    Patch out = patch;
    for (size_t i = 0; i < out.size(); ++i) {
        const double g = grad.image.data[i];
        const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        out.image.data[i] = std::clamp(out.image.data[i] - epsilon * sign, 0.0, 1.0);
    }
    return out;
}

} // namespace

TEST_CASE("momentum_step: spec arithmetic") {
    SUBCASE("zero momentum picks up the normalized gradient") {
        Patch patch(1, 3, 0.5);
        std::vector<double> momentum(3, 0.0);
        // ||grad||_1 = 1
        const std::vector<double> grad = {0.5, -0.25, 0.25};
        momentum_step(momentum, grad, patch, 1.0 / 16.0, 0.9);
        CHECK(momentum[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(momentum[1] == doctest::Approx(-0.25).epsilon(1e-15));
        CHECK(momentum[2] == doctest::Approx(0.25).epsilon(1e-15));
        // positive g -> pixel steps down by 1/16
        CHECK(patch.image.data[0] == 0.4375);
        CHECK(patch.image.data[1] == 0.5625);
        CHECK(patch.image.data[2] == 0.4375);
    }
    SUBCASE("zero gradient only decays the momentum") {
        Patch patch(1, 2, 0.5);
        std::vector<double> momentum = {0.4, 0.0};
        const std::vector<double> grad = {0.0, 0.0};
        momentum_step(momentum, grad, patch, 1.0 / 16.0, 0.9);
        CHECK(momentum[0] == doctest::Approx(0.36).epsilon(1e-15));
        CHECK(momentum[1] == 0.0);
        CHECK(patch.image.data[0] == 0.4375); // sign(0.36) = 1
        CHECK(patch.image.data[1] == 0.5);    // sign(0) = 0: untouched
    }
    SUBCASE("clipping binds at the box") {
        Patch patch(1, 1, 0.01);
        std::vector<double> momentum(1, 0.0);
        const std::vector<double> grad = {1.0};
        momentum_step(momentum, grad, patch, 1.0 / 16.0, 0.9);
        CHECK(patch.image.data[0] == 0.0);
    }
}

TEST_CASE("run_attack: budget contract and records") {
    TestRng rng(61);
    TinyScene scene(rng);
    const EmbedNet net(scene.ckpt);
    AttackConfig config;
    config.max_iters = 1;
    config.stop_when_adv_below = -10.0; // never converges
    const AttackTrace trace = run_attack(scene.photos, net, scene.gt, std::nullopt, config);
    CHECK(trace.records.size() == 1);
    CHECK(trace.records[0].iter == 1);
    CHECK(trace.stop_reason == StopReason::BudgetExhausted);

    AttackConfig bad = config;
    bad.max_iters = 0;
    CHECK_THROWS_AS(run_attack(scene.photos, net, scene.gt, std::nullopt, bad), Error);
}

TEST_CASE("run_attack: converged stop means the last adv is below the threshold") {
    TestRng rng(62);
    TinyScene scene(rng);
    const EmbedNet net(scene.ckpt);
    AttackConfig config;
    config.max_iters = 400;
    config.stop_when_adv_below = 0.0;
    const AttackTrace trace = run_attack(scene.photos, net, scene.gt, std::nullopt, config);
    // strictly increasing iteration numbers
    for (size_t i = 1; i < trace.records.size(); ++i) {
        CHECK(trace.records[i].iter == trace.records[i - 1].iter + 1);
    }
    if (trace.stop_reason == StopReason::Converged) {
        CHECK(trace.records.back().adv < config.stop_when_adv_below);
    }
    // patch invariants
    CHECK(trace.final_patch.image.channels == 1);
    for (double v : trace.final_patch.image.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("run_attack: per-iteration pixel deltas are 0 or +-epsilon unless clipped") {
    TestRng rng(63);
    TinyScene scene(rng);
    const EmbedNet net(scene.ckpt);
    AttackConfig config;
    config.max_iters = 30;
    config.stop_when_adv_below = -10.0;
    const double eps = config.epsilon;

    Patch prev(6, 8, config.init_constant);
    size_t violations = 0;
    const AttackTrace trace = run_attack(
        scene.photos, net, scene.gt, std::nullopt, config,
        [&](const IterationRecord&, const Patch& patch) {
            for (size_t i = 0; i < patch.size(); ++i) {
                const double delta = patch.image.data[i] - prev.image.data[i];
                const double v = patch.image.data[i];
                const bool full_step = std::fabs(delta) < 1e-15 ||
                                       std::fabs(std::fabs(delta) - eps) < 1e-15;
                const bool clipped = (v == 0.0 || v == 1.0) && std::fabs(delta) < eps;
                if (!full_step && !clipped) {
                    ++violations;
                }
            }
            prev = patch;
        });
    CHECK(violations == 0);
    CHECK(trace.records.size() == 30);
}

TEST_CASE("run_attack: mu = 0 single step equals the FGSM oracle bit-exactly") {
    TestRng rng(64);
    TinyScene scene(rng);
    const EmbedNet net(scene.ckpt);

    AttackConfig config;
    config.mu = 0.0;
    config.max_iters = 1;
    config.stop_when_adv_below = -10.0;
    const AttackTrace trace = run_attack(scene.photos, net, scene.gt, std::nullopt, config);

    const Patch init(6, 8, config.init_constant);
    const TotalLossResult loss = total_loss(scene.photos, init, net, config.tau,
                                            AttackMode::Untargeted, scene.gt);
    const Patch oracle = fgsm_oracle(init, loss.grad, config.epsilon);
    CHECK(trace.final_patch.image.data == oracle.image.data);
}

TEST_CASE("run_attack: deterministic traces and patches") {
    TestRng rng(65);
    TinyScene scene(rng);
    const EmbedNet net(scene.ckpt);
    AttackConfig config;
    config.max_iters = 20;
    config.stop_when_adv_below = -10.0;
    config.init = PatchInit::UniformRandom;
    config.seed = 123;
    const AttackTrace a = run_attack(scene.photos, net, scene.gt, std::nullopt, config);
    const AttackTrace b = run_attack(scene.photos, net, scene.gt, std::nullopt, config);
    CHECK(a.final_patch.image.data == b.final_patch.image.data);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].adv == b.records[i].adv);
        CHECK(a.records[i].tv == b.records[i].tv);
        CHECK(a.records[i].total == b.records[i].total);
    }
}

TEST_CASE("run_attack: targeted mode requires a target") {
    TestRng rng(66);
    TinyScene scene(rng);
    const EmbedNet net(scene.ckpt);
    AttackConfig config;
    config.mode = AttackMode::Targeted;
    try {
        run_attack(scene.photos, net, scene.gt, std::nullopt, config);
        FAIL("expected MissingTarget");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MissingTarget);
    }
}

TEST_CASE("select_target_class") {
    TestRng rng(67);
    Embedding attacker;
    attacker.v = {1.0, 0.0};
    auto entry = [](int id, double x, double y) {
        ClassEmbedding e;
        e.class_id = id;
        e.embedding.v = {x, y};
        return e;
    };
    SUBCASE("gallery with only the ground truth") {
        const std::vector<ClassEmbedding> gallery = {entry(0, 1.0, 0.0)};
        try {
            select_target_class(gallery, attacker, 0);
            FAIL("expected NoEligibleClass");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::NoEligibleClass);
        }
    }
    SUBCASE("two classes: the non-gt one wins regardless of similarity") {
        const std::vector<ClassEmbedding> gallery = {entry(0, 1.0, 0.0),
                                                     entry(1, -1.0, 0.0)};
        CHECK(select_target_class(gallery, attacker, 0).class_id == 1);
    }
    SUBCASE("argmax over cosine excluding the ground truth") {
        // cosines: gt: 0.7 (excluded), A: 0.2, B: 0.5
        const std::vector<ClassEmbedding> gallery = {
            entry(0, 0.7, std::sqrt(1 - 0.49)), entry(1, 0.2, std::sqrt(1 - 0.04)),
            entry(2, 0.5, std::sqrt(1 - 0.25))};
        CHECK(select_target_class(gallery, attacker, 0).class_id == 2);
    }
    SUBCASE("ties break to the lowest class id") {
        const std::vector<ClassEmbedding> gallery = {entry(0, 1.0, 0.0), entry(5, 0.0, 1.0),
                                                     entry(3, 0.0, 1.0)};
        CHECK(select_target_class(gallery, attacker, 0).class_id == 3);
    }
}

TEST_CASE("mean_and_sem: spec arithmetic") {
    SUBCASE("two samples {0.3, 0.5} give 0.4 +- 0.1") {
        const std::vector<double> xs = {0.3, 0.5};
        const auto [mean, sem] = mean_and_sem(xs);
        CHECK(mean == doctest::Approx(0.4).epsilon(1e-12));
        REQUIRE(sem.has_value());
        CHECK(*sem == doctest::Approx(0.1).epsilon(1e-12));
    }
    SUBCASE("single sample has undefined SEM") {
        const std::vector<double> xs = {0.42};
        const auto [mean, sem] = mean_and_sem(xs);
        CHECK(mean == 0.42);
        CHECK_FALSE(sem.has_value());
    }
}

TEST_CASE("evaluate_patch: split stats and empty-split error") {
    TestRng rng(68);
    TinyScene scene(rng, 4);
    const EmbedNet net(scene.ckpt);
    const Patch patch(6, 8, 0.5);

    PhotoSets sets;
    sets.train = {scene.photos[0], scene.photos[1]};
    sets.val = {scene.photos[2]};
    sets.test = {scene.photos[3]};
    const Embedding target = unit_embedding(rng, 16);

    const EvaluationTable table = evaluate_patch(patch, sets, net, scene.gt, target);
    CHECK(table.train.n == 2);
    CHECK(table.train.sem_gt.has_value());
    CHECK(table.val.n == 1);
    CHECK_FALSE(table.val.sem_gt.has_value()); // n = 1: SEM undefined
    CHECK(table.mode == AttackMode::Targeted);
    REQUIRE(table.train.mean_target.has_value());

    // independent recomputation of the train means
    EmbedNet::Workspace ws;
    std::vector<double> gt_cos;
    for (const AttackPhoto& photo : sets.train) {
        const CompositeResult comp = apply_patch(photo.image, patch, photo.patch_grid);
        const Embedding e = net.forward(align_face(comp.image, photo.align_grid), ws);
        double dot = 0.0;
        for (size_t i = 0; i < e.v.size(); ++i) {
            dot += e.v[i] * scene.gt.v[i];
        }
        gt_cos.push_back(dot);
    }
    const auto [mean, sem] = mean_and_sem(gt_cos);
    CHECK(table.train.mean_gt == doctest::Approx(mean).epsilon(1e-12));
    CHECK(*table.train.sem_gt == doctest::Approx(*sem).epsilon(1e-12));

    PhotoSets empty = sets;
    empty.test.clear();
    try {
        evaluate_patch(patch, empty, net, scene.gt, std::nullopt);
        FAIL("expected EmptySplit");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptySplit);
    }
}
