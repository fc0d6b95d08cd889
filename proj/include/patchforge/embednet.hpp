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

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "patchforge/tensor.hpp"

namespace patchforge {

// A small differentiable face-embedding network: N blocks of
// (3x3 conv, leaky rectifier, 2x2 max-pool), a dense projection and L2
// normalization. Deliberately hand-differentiable and CPU-sized; it stands
// in for a production recognition backbone as the white-box attack target.

/// Unit-L2 feature vector.
struct Embedding {
    std::vector<double> v;
};

struct EmbedNetConfig {
    int input_rows = 112;
    int input_cols = 112;
    int input_channels = 3;
    std::vector<int> conv_channels{8, 16, 32};
    int embed_dim = 128;
    double lrelu_slope = 0.01;
    double margin = 0.5; // additive angular margin m
    double scale = 64.0; // logit scale s
    uint64_t seed = 1;
};

struct ConvShape {
    int in_c = 0;
    int out_c = 0;
};

struct Architecture {
    int input_rows = 0;
    int input_cols = 0;
    int input_channels = 0;
    std::vector<ConvShape> convs; // each conv is followed by lrelu + 2x2 maxpool
    double lrelu_slope = 0.01;
    int dense_in = 0;
    int dense_out = 0;
    int num_classes = 0;

    std::string descriptor() const;
    static Architecture parse_descriptor(const std::string& text);
    size_t weight_count() const;
};

/// Weights plus the class-center matrix, serializable to the PFCK format:
/// magic "PFCK", u32 version, length-prefixed UTF-8 architecture descriptor,
/// then the 64-bit float weight blocks in descriptor order, little-endian.
struct ModelCheckpoint {
    uint32_t version = 1;
    Architecture arch;
    std::vector<double> weights; // conv W/b per block, dense W/b, centers
    std::map<std::string, std::string> metadata;

    // Offsets into `weights`.
    size_t conv_w_offset(int block) const;
    size_t conv_b_offset(int block) const;
    size_t dense_w_offset() const;
    size_t dense_b_offset() const;
    size_t centers_offset() const;
    std::span<const double> centers() const;
    std::span<double> centers();
};

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Fresh seeded checkpoint (He-style init, centers on the unit sphere).
ModelCheckpoint make_initial_checkpoint(const EmbedNetConfig& config, int num_classes);

/// Forward/backward evaluator bound to a checkpoint. Pure given the
/// checkpoint; one Workspace per concurrent caller.
class EmbedNet {
public:
    explicit EmbedNet(const ModelCheckpoint& ckpt);

    struct Workspace {
        std::vector<double> centered; // input shifted to [-0.5, 0.5]
        std::vector<std::vector<double>> pad;    // zero-padded conv inputs
        std::vector<std::vector<double>> pre;    // conv pre-activations
        std::vector<std::vector<double>> act;    // post-lrelu
        std::vector<std::vector<double>> pooled; // post 2x2 maxpool
        std::vector<std::vector<int32_t>> argmax;
        std::vector<double> pre_norm; // dense output u
        std::vector<double> embedding;
        double norm = 0.0;
    };

    const Architecture& arch() const { return arch_; }

    Embedding forward(const ImageTensor& image, Workspace& ws) const;

    /// Exact reverse-mode gradient of <embedding, upstream> w.r.t. the input
    /// pixels, through the L2-normalization Jacobian (I - e e^T)/||u||.
    /// When param_grads is non-null, accumulates network parameter gradients
    /// into it (same layout as checkpoint weights; the centers block is left
    /// untouched).
    ImageTensor backward(const Workspace& ws, std::span<const double> upstream,
                         std::vector<double>* param_grads = nullptr) const;

private:
    const ModelCheckpoint& ckpt_;
    const Architecture& arch_;
    std::vector<int> block_rows_, block_cols_; // input dims per block
};

/// One-shot wrappers over EmbedNet for callers without a workspace.
Embedding forward_embed(const ImageTensor& image, const ModelCheckpoint& ckpt);
ImageTensor backward_to_pixels(const ImageTensor& image, const ModelCheckpoint& ckpt,
                               std::span<const double> upstream);

/// Additive-angular-margin softmax loss over cosine logits and its exact
/// gradients w.r.t. the embedding and the (unit-row) center matrix.
struct ArcfaceResult {
    double loss = 0.0;
    std::vector<double> grad_embedding;
    std::vector<double> grad_centers; // num_classes x embed_dim
};
ArcfaceResult arcface_margin_loss(std::span<const double> embedding, int label,
                                  std::span<const double> centers, int num_classes,
                                  double scale, double margin);

struct TrainDataset {
    std::vector<ImageTensor> images; // aligned network inputs
    std::vector<int> labels;
    int num_classes = 0;
};

struct TrainOptions {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int epochs = 50;
    // The gate is checked only after this many epochs; stopping at the first
    // epoch that clears it leaves the margin training lopsided (whichever
    // feature region separates classes first soaks up all the weight).
    int min_epochs = 12;
    int batch_size = 16;
    double accuracy_gate = 0.95;
    // The full margin from a cold start drives true-class angles past
    // pi - m, where the linear tail of the margined logit attracts them to
    // the anti-pole; ramping the margin over the first epochs lets the
    // embeddings align first. 0 disables the ramp.
    int margin_warmup_epochs = 10;
    bool verbose = false;
};

/// Seeded mini-batch SGD with the margin loss until the nearest-center
/// accuracy gate is reached or the epoch budget runs out (NonConvergence).
ModelCheckpoint train_target(const TrainDataset& dataset, const EmbedNetConfig& config,
                             const TrainOptions& options = {});

/// Fraction of images whose nearest class center (cosine) matches the label.
double nearest_center_accuracy(const ModelCheckpoint& ckpt, const TrainDataset& dataset);

} // namespace patchforge
