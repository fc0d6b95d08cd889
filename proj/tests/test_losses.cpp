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

#include "patchforge/embednet.hpp"
#include "patchforge/kernels.hpp"
#include "patchforge/losses.hpp"
#include "test_helpers.hpp"

using namespace patchforge;
using patchforge::testing::random_image;
using patchforge::testing::rel_err;
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

/// 24x24-input two-block scene: one photo with a single skewed cell and an
/// identity alignment grid.
struct TinyScene {
    EmbedNetConfig config;
    ModelCheckpoint ckpt;
    std::vector<AttackPhoto> photos;
    Embedding reference;

    explicit TinyScene(TestRng& rng, int num_photos) {
        config.input_rows = 24;
        config.input_cols = 24;
        config.conv_channels = {4, 6};
        config.embed_dim = 16;
        config.seed = 7;
        ckpt = make_initial_checkpoint(config, 0);
        for (int i = 0; i < num_photos; ++i) {
            AttackPhoto photo;
            photo.id = "p" + std::to_string(i);
            photo.image = random_image(rng, 24, 24, 3);
            CellCorrespondence cell;
            cell.cell_id = 0;
            cell.patch_corners = {Point2{0, 0}, Point2{7, 0}, Point2{7, 5}, Point2{0, 5}};
            cell.photo_corners = {Point2{3.0 + i, 4.0}, Point2{19.0 + 0.3 * i, 4.5},
                                  Point2{19.5, 17.0}, Point2{2.5, 16.0}};
            photo.patch_grid =
                precompute_patch_grid(std::vector{cell}, 6, 8, 24, 24);
            photo.align_grid =
                precompute_alignment_grid(SimilarityTransform{}, 24, 24, 24, 24);
            photos.push_back(std::move(photo));
        }
        reference = unit_embedding(rng, 16);
    }
};

} // namespace

TEST_CASE("tv_loss: constant patch is (near) zero") {
    const Patch flat(7, 9, 0.42);
    const TvResult r = tv_loss(flat);
    CHECK(r.value >= 0.0);
    CHECK(r.value <= 7 * 9 * 1e-6); // m*n*sqrt(delta)
    for (double g : r.gradient.image.data) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("tv_loss: 2x2 hand-summed value") {
    Patch patch(2, 2);
    patch.image.data = {0.0, 1.0, 0.0, 1.0};
    const TvResult r = tv_loss(patch);
    CHECK(std::fabs(r.value - 2.0) < 1e-5);
}

TEST_CASE("tv_loss: gradient matches finite differences") {
    TestRng rng(51);
    Patch patch(6, 8);
    for (double& v : patch.image.data) {
        v = rng.uniform();
    }
    const TvResult r = tv_loss(patch);
    auto f = [&] { return tv_loss(patch).value; };
    for (int probe = 0; probe < 10; ++probe) {
        const size_t idx = rng.index(patch.size());
        const double fd = patchforge::testing::central_diff(f, patch.image.data, idx);
        CHECK(rel_err(r.gradient.image.data[idx], fd) < 1e-4);
    }
}

TEST_CASE("tv_loss: invariances") {
    TestRng rng(52);
    Patch patch(5, 7);
    for (double& v : patch.image.data) {
        v = rng.uniform(0.0, 0.5);
    }
    const double base = tv_loss(patch).value;
    CHECK(base >= 0.0);

    SUBCASE("adding a constant") {
        Patch shifted = patch;
        for (double& v : shifted.image.data) {
            v += 0.25;
        }
        CHECK(tv_loss(shifted).value == doctest::Approx(base).epsilon(1e-12));
    }
    SUBCASE("horizontal flip") {
        Patch flipped(5, 7);
        for (int r = 0; r < 5; ++r) {
            for (int c = 0; c < 7; ++c) {
                flipped.image.at(0, r, c) = patch.image.at(0, r, 6 - c);
            }
        }
        CHECK(tv_loss(flipped).value == doctest::Approx(base).epsilon(1e-9));
    }
    SUBCASE("vertical flip") {
        Patch flipped(5, 7);
        for (int r = 0; r < 5; ++r) {
            for (int c = 0; c < 7; ++c) {
                flipped.image.at(0, r, c) = patch.image.at(0, 4 - r, c);
            }
        }
        CHECK(tv_loss(flipped).value == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("adv_loss: trivial values under the descent sign convention") {
    TestRng rng(53);
    const Embedding ref = unit_embedding(rng, 8);
    Embedding ortho;
    ortho.v.assign(8, 0.0);
    // Gram-Schmidt a second unit vector orthogonal to ref
    Embedding other = unit_embedding(rng, 8);
    double dot = 0.0;
    for (int i = 0; i < 8; ++i) {
        dot += other.v[i] * ref.v[i];
    }
    double norm = 0.0;
    for (int i = 0; i < 8; ++i) {
        ortho.v[i] = other.v[i] - dot * ref.v[i];
        norm += ortho.v[i] * ortho.v[i];
    }
    for (double& v : ortho.v) {
        v /= std::sqrt(norm);
    }

    const std::vector<Embedding> same = {ref};
    const std::vector<Embedding> orth = {ortho};
    // untargeted drives the ground-truth similarity down, so its value IS the
    // similarity; targeted drives the target similarity up, so its value is
    // the negated similarity
    CHECK(adv_loss(same, ref, AttackMode::Untargeted).value ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(adv_loss(same, ref, AttackMode::Targeted).value ==
          doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::fabs(adv_loss(orth, ref, AttackMode::Untargeted).value) < 1e-12);
    CHECK(std::fabs(adv_loss(orth, ref, AttackMode::Targeted).value) < 1e-12);
}

TEST_CASE("adv_loss: bounded, mean structure, gradients") {
    TestRng rng(54);
    const Embedding ref = unit_embedding(rng, 12);
    std::vector<Embedding> batch;
    for (int i = 0; i < 5; ++i) {
        batch.push_back(unit_embedding(rng, 12));
    }
    for (AttackMode mode : {AttackMode::Untargeted, AttackMode::Targeted}) {
        const AdvResult r = adv_loss(batch, ref, mode);
        CHECK(r.value >= -1.0 - 1e-12);
        CHECK(r.value <= 1.0 + 1e-12);
        double mean = 0.0;
        for (double v : r.per_item) {
            mean += v;
        }
        CHECK(r.value == doctest::Approx(mean / 5.0).epsilon(1e-12));
        const double sign = mode == AttackMode::Untargeted ? 1.0 : -1.0;
        for (size_t i = 0; i < r.grad_embedding.size(); ++i) {
            CHECK(r.grad_embedding[i] == doctest::Approx(sign * ref.v[i] / 5.0));
        }
    }
}

TEST_CASE("adv_loss: empty batch throws") {
    TestRng rng(55);
    const Embedding ref = unit_embedding(rng, 4);
    CHECK_THROWS_AS(adv_loss(std::vector<Embedding>{}, ref, AttackMode::Untargeted),
                    Error);
}

TEST_CASE("total_loss: empty-coverage grids give the patch-free baseline and zero grad") {
    TestRng rng(56);
    TinyScene scene(rng, 2);
    // replace patch grids with empty ones
    for (AttackPhoto& photo : scene.photos) {
        SamplingGrid empty;
        empty.out_rows = empty.out_cols = 24;
        empty.src_rows = 6;
        empty.src_cols = 8;
        photo.patch_grid = empty;
    }
    const EmbedNet net(scene.ckpt);
    const Patch patch(6, 8, 0.5);
    const TotalLossResult r =
        total_loss(scene.photos, patch, net, 0.0, AttackMode::Untargeted, scene.reference);

    // baseline: embed the raw photos
    EmbedNet::Workspace ws;
    double baseline = 0.0;
    for (const AttackPhoto& photo : scene.photos) {
        const Embedding e = net.forward(photo.image, ws);
        baseline += kernels::active().dot(e.v.data(), scene.reference.v.data(), 16);
    }
    baseline /= 2.0;
    CHECK(r.breakdown.adv == doctest::Approx(baseline).epsilon(1e-12));
    for (double g : r.grad.image.data) {
        CHECK(g == 0.0);
    }
}

TEST_CASE("total_loss: breakdown identity and per-photo list") {
    TestRng rng(57);
    TinyScene scene(rng, 3);
    const EmbedNet net(scene.ckpt);
    Patch patch(6, 8);
    for (double& v : patch.image.data) {
        v = rng.uniform();
    }
    const double tau = 1e-3;
    const TotalLossResult r =
        total_loss(scene.photos, patch, net, tau, AttackMode::Untargeted, scene.reference);
    CHECK(std::fabs(r.breakdown.total - (r.breakdown.adv + tau * r.breakdown.tv)) <=
          1e-12);
    CHECK(r.breakdown.per_photo_adv.size() == 3);
    double mean = 0.0;
    for (double v : r.breakdown.per_photo_adv) {
        mean += v;
    }
    CHECK(r.breakdown.adv == doctest::Approx(mean / 3.0).epsilon(1e-12));
}

TEST_CASE("total_loss: patch gradient matches finite differences through the chain") {
    TestRng rng(58);
    TinyScene scene(rng, 2);
    const EmbedNet net(scene.ckpt);
    Patch patch(6, 8);
    for (double& v : patch.image.data) {
        v = rng.uniform(0.2, 0.8);
    }
    const double tau = 1e-3;
    for (AttackMode mode : {AttackMode::Untargeted, AttackMode::Targeted}) {
        const TotalLossResult r =
            total_loss(scene.photos, patch, net, tau, mode, scene.reference);
        auto f = [&] {
            return total_loss(scene.photos, patch, net, tau, mode, scene.reference)
                .breakdown.total;
        };
        int checked = 0;
        for (int probe = 0; probe < 10 && checked < 5; ++probe) {
            const size_t idx = rng.index(patch.size());
            const double fd = patchforge::testing::central_diff(f, patch.image.data, idx);
            if (std::fabs(fd) < 1e-8 && std::fabs(r.grad.image.data[idx]) < 1e-8) {
                continue;
            }
            CHECK(rel_err(r.grad.image.data[idx], fd) < 1e-4);
            ++checked;
        }
        CHECK(checked >= 5);
    }
}

TEST_CASE("total_loss: deterministic gradients") {
    TestRng rng(59);
    TinyScene scene(rng, 2);
    const EmbedNet net(scene.ckpt);
    Patch patch(6, 8, 0.5);
    const TotalLossResult a =
        total_loss(scene.photos, patch, net, 1e-3, AttackMode::Untargeted, scene.reference);
    const TotalLossResult b =
        total_loss(scene.photos, patch, net, 1e-3, AttackMode::Untargeted, scene.reference);
    CHECK(a.grad.image.data == b.grad.image.data);
    CHECK(a.breakdown.total == b.breakdown.total);
}
