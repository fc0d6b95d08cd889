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

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchforge/attack.hpp"
#include "patchforge/embednet.hpp"
#include "patchforge/geometry.hpp"
#include "patchforge/losses.hpp"
#include "patchforge/tensor.hpp"

namespace patchforge {

enum class Split { Train, Val, Test };

const char* split_name(Split split);
Split parse_split(const std::string& name);

/// One capture: the photo, its marked chessboard cells, its five landmarks
/// and the split it belongs to.
struct CapturePhoto {
    std::string id;
    Split split = Split::Train;
    int class_id = -1; // ground-truth identity when known
    std::filesystem::path source; // image path as written in the manifest
    ImageTensor image;
    std::vector<CellCorrespondence> cells;
    std::vector<Point2> landmarks; // exactly 5
};

/// Manifest JSON schema: { "photos": [ { "id", "split", "class_id"?, "photo",
/// "cells": [ { "id", "patch": [[x,y]*4], "photo": [[x,y]*4] } ],
/// "landmarks": [[x,y]*5] } ] }. Image paths resolve against the workspace
/// root. Validates annotations and rejects duplicate ids.
std::vector<CapturePhoto> load_attack_inputs(const std::filesystem::path& manifest_path,
                                             const std::filesystem::path& workspace_root);

/// Writes the manifest (and the photo PNGs when write_images is set) so that
/// load_attack_inputs reproduces every annotation exactly.
void write_manifest(std::span<const CapturePhoto> photos,
                    const std::filesystem::path& manifest_path,
                    const std::filesystem::path& workspace_root, bool write_images);

/// Alternating 0/1 cells, top-left cell black, optional white border; the
/// pattern printed and worn during capture.
ImageTensor generate_chessboard(int rows, int cols, int cell_px, int border_px);

/// Canonical five-point landmark template in the aligned 112x112 input.
struct AlignmentTemplate {
    int rows = 112;
    int cols = 112;
    std::array<Point2, 5> points;
};
AlignmentTemplate default_alignment_template();
AlignmentTemplate load_alignment_template(const std::filesystem::path& path);
void save_alignment_template(const AlignmentTemplate& tpl,
                             const std::filesystem::path& path);

struct SyntheticIdentitySpec {
    int num_identities = 10;
    int images_per_identity = 20;
    int image_rows = 112;
    int image_cols = 112;
    int max_shift_px = 4;
    double max_brightness = 0.1;
    // Landmark annotations carry detector-style noise; the residual
    // misalignment it leaves after the similarity fit is what keeps aligned
    // same-identity photos from being pixel-identical.
    double landmark_noise_px = 1.5;
    // patch region: cells_cols x cells_rows chessboard over a forehead-style
    // rectangle, tracked through the per-image jitter
    int patch_cells_rows = 5;
    int patch_cells_cols = 14;
    int patch_cell_px = 6;
    double region_x0 = 11.0, region_y0 = 6.0;
    double region_x1 = 100.0, region_y1 = 40.0;
    int val_per_identity = 3;
    int test_per_identity = 3;
    uint64_t seed = 1;
};

struct SyntheticDataset {
    std::vector<CapturePhoto> photos;
    int num_classes = 0;
    int patch_rows = 0;
    int patch_cols = 0;
};

/// Procedurally distinct identities (seeded geometric compositions) with
/// per-image shift/brightness jitter; landmarks and cells track the jitter.
/// Images are 8-bit quantized so the in-memory dataset matches its files.
SyntheticDataset generate_synthetic_identities(const SyntheticIdentitySpec& spec);

/// Writes images/ PNGs plus manifest.json under dir.
void write_synthetic_dataset(const SyntheticDataset& dataset,
                             const std::filesystem::path& dir);

/// Aligned network inputs + labels for train_target.
TrainDataset build_train_dataset(std::span<const CapturePhoto> photos,
                                 const AlignmentTemplate& tpl,
                                 std::optional<Split> split_filter);

/// Precompute both grids for one photo.
AttackPhoto build_attack_photo(const CapturePhoto& photo, int patch_rows, int patch_cols,
                               const AlignmentTemplate& tpl);

/// Smallest patch shape containing every cell's patch-space corners.
std::pair<int, int> derive_patch_shape(std::span<const CapturePhoto> photos);

struct GalleryEntry {
    int class_id = 0;
    std::string label;
    Embedding embedding; // unit norm
    std::string source;
};

/// Mean embedding per class over the given split, renormalized.
std::vector<GalleryEntry> build_gallery(std::span<const CapturePhoto> photos,
                                        const ModelCheckpoint& ckpt,
                                        const AlignmentTemplate& tpl, Split split);

void save_gallery(std::span<const GalleryEntry> gallery,
                  const std::filesystem::path& path);
std::vector<GalleryEntry> load_gallery(const std::filesystem::path& path);

/// Physical print layout of a patch.
struct PatchLayout {
    int cells_rows = 5;
    int cells_cols = 14;
    int cell_px = 6;          // patch pixels per cell
    double cm_per_cell = 1.0; // physical cell width
};

/// Nearest-neighbor upscale to the physical print resolution; writes a
/// grayscale PNG carrying dpi (pHYs) and a physical-size annotation.
void export_patch(const Patch& patch, const PatchLayout& layout, double dpi,
                  const std::filesystem::path& path);

/// Report rows render as "mean ± SEM" to 3 decimals; absent target columns
/// render as an em dash, undefined SEM as "n/a".
struct ReportCell {
    std::optional<double> mean;
    std::optional<double> sem;
};
struct ReportRow {
    std::string patch_name;
    std::string attack_type;
    std::array<ReportCell, 6> cells; // train/val/test x gt/target
};

ReportRow report_row_from(const EvaluationTable& table);
std::string format_report_cell(const ReportCell& cell);

struct NamedTrace {
    std::string name;
    const AttackTrace* trace = nullptr;
};

/// Writes report.csv and report.txt (aligned), plus trace_<name>.csv files.
void write_report(std::span<const ReportRow> rows, std::span<const NamedTrace> traces,
                  const std::filesystem::path& dir);

} // namespace patchforge
