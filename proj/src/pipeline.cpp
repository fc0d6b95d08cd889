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

#include "patchforge/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "patchforge/image_io.hpp"
#include "patchforge/kernels.hpp"

namespace patchforge {

using nlohmann::json;

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int below(int n) { return static_cast<int>(eng_() % static_cast<uint64_t>(n)); }

private:
    std::mt19937_64 eng_;
};

void quantize_to_8bit(ImageTensor& image) {
    for (double& v : image.data) {
        const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
        v = q / 255.0;
    }
}

json point_to_json(const Point2& p) { return json::array({p.x, p.y}); }

Point2 point_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        fail(ErrorKind::MalformedAnnotation, "point must be a [x, y] number pair");
    }
    const Point2 p{j[0].get<double>(), j[1].get<double>()};
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        fail(ErrorKind::MalformedAnnotation, "point coordinates must be finite");
    }
    return p;
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

const char* split_name(Split split) {
    switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    fail(ErrorKind::MalformedAnnotation, "unknown split '" + name + "'");
}

// ---------------------------------------------------------------------------
// Manifest IO

std::vector<CapturePhoto> load_attack_inputs(const std::filesystem::path& manifest_path,
                                             const std::filesystem::path& workspace_root) {
    std::ifstream in(manifest_path);
    if (!in) {
        fail(ErrorKind::MissingFile, "cannot open manifest " + manifest_path.string());
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        fail(ErrorKind::MalformedAnnotation,
             "manifest " + manifest_path.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("photos") || !doc["photos"].is_array()) {
        fail(ErrorKind::MalformedAnnotation, "manifest needs a 'photos' array");
    }

    std::vector<CapturePhoto> photos;
    std::set<std::string> seen_ids;
    for (const json& jp : doc["photos"]) {
        CapturePhoto photo;
        try {
            photo.id = jp.at("id").get<std::string>();
            photo.split = parse_split(jp.at("split").get<std::string>());
            if (jp.contains("class_id")) {
                photo.class_id = jp["class_id"].get<int>();
            }
            photo.source = jp.at("photo").get<std::string>();
        } catch (const json::exception& e) {
            fail(ErrorKind::MalformedAnnotation, std::string("photo entry: ") + e.what());
        }
        if (!seen_ids.insert(photo.id).second) {
            fail(ErrorKind::DuplicateId, "photo id '" + photo.id + "' appears twice");
        }
        const std::filesystem::path image_path = workspace_root / photo.source;
        if (!std::filesystem::exists(image_path)) {
            fail(ErrorKind::MissingFile, "photo file " + image_path.string());
        }
        photo.image = load_image(image_path);

        if (jp.contains("cells")) {
            if (!jp["cells"].is_array()) {
                fail(ErrorKind::MalformedAnnotation,
                     "photo '" + photo.id + "': cells must be an array");
            }
            for (const json& jc : jp["cells"]) {
                CellCorrespondence cell;
                try {
                    cell.cell_id = jc.at("id").get<int>();
                } catch (const json::exception& e) {
                    fail(ErrorKind::MalformedAnnotation,
                         "photo '" + photo.id + "': cell without id: " + e.what());
                }
                for (const char* key : {"patch", "photo"}) {
                    if (!jc.contains(key) || !jc[key].is_array() || jc[key].size() != 4) {
                        fail(ErrorKind::MalformedAnnotation,
                             "photo '" + photo.id + "': cell " +
                                 std::to_string(cell.cell_id) + " needs 4 '" + key +
                                 "' corners");
                    }
                }
                for (int k = 0; k < 4; ++k) {
                    cell.patch_corners[k] = point_from_json(jc["patch"][k]);
                    cell.photo_corners[k] = point_from_json(jc["photo"][k]);
                }
                photo.cells.push_back(cell);
            }
        }

        if (!jp.contains("landmarks") || !jp["landmarks"].is_array() ||
            jp["landmarks"].size() != 5) {
            fail(ErrorKind::MalformedAnnotation,
                 "photo '" + photo.id + "' needs exactly 5 landmarks");
        }
        for (const json& jl : jp["landmarks"]) {
            const Point2 p = point_from_json(jl);
            if (p.x < 0.0 || p.x > photo.image.cols - 1 || p.y < 0.0 ||
                p.y > photo.image.rows - 1) {
                fail(ErrorKind::LandmarkOutOfBounds,
                     "photo '" + photo.id + "': landmark (" + format_full(p.x) + ", " +
                         format_full(p.y) + ") outside the image");
            }
            photo.landmarks.push_back(p);
        }
        photos.push_back(std::move(photo));
    }
    return photos;
}

void write_manifest(std::span<const CapturePhoto> photos,
                    const std::filesystem::path& manifest_path,
                    const std::filesystem::path& workspace_root, bool write_images) {
    json doc;
    doc["photos"] = json::array();
    for (const CapturePhoto& photo : photos) {
        json jp;
        jp["id"] = photo.id;
        jp["split"] = split_name(photo.split);
        if (photo.class_id >= 0) {
            jp["class_id"] = photo.class_id;
        }
        jp["photo"] = photo.source.generic_string();
        jp["cells"] = json::array();
        for (const CellCorrespondence& cell : photo.cells) {
            json jc;
            jc["id"] = cell.cell_id;
            jc["patch"] = json::array();
            jc["photo"] = json::array();
            for (int k = 0; k < 4; ++k) {
                jc["patch"].push_back(point_to_json(cell.patch_corners[k]));
                jc["photo"].push_back(point_to_json(cell.photo_corners[k]));
            }
            jp["cells"].push_back(jc);
        }
        jp["landmarks"] = json::array();
        for (const Point2& p : photo.landmarks) {
            jp["landmarks"].push_back(point_to_json(p));
        }
        doc["photos"].push_back(jp);

        if (write_images) {
            const std::filesystem::path image_path = workspace_root / photo.source;
            std::filesystem::create_directories(image_path.parent_path());
            save_png(photo.image, image_path);
        }
    }
    std::ofstream out(manifest_path);
    if (!out) {
        fail(ErrorKind::IoFailure, "cannot write " + manifest_path.string());
    }
    out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Calibration assets

ImageTensor generate_chessboard(int rows, int cols, int cell_px, int border_px) {
    if (rows < 1 || cols < 1 || cell_px < 1 || border_px < 0) {
        fail(ErrorKind::InvalidArgument, "chessboard dimensions must be >= 1");
    }
    const int h = rows * cell_px + 2 * border_px;
    const int w = cols * cell_px + 2 * border_px;
    ImageTensor board(h, w, 1, 1.0);
    for (int r = 0; r < rows * cell_px; ++r) {
        for (int c = 0; c < cols * cell_px; ++c) {
            const int cell_r = r / cell_px;
            const int cell_c = c / cell_px;
            board.at(0, r + border_px, c + border_px) =
                (cell_r + cell_c) % 2 == 0 ? 0.0 : 1.0;
        }
    }
    return board;
}

AlignmentTemplate default_alignment_template() {
    // Conventional five-point destination template for 112x112 aligned crops
    // (left eye, right eye, nose tip, left/right mouth corner).
    AlignmentTemplate tpl;
    tpl.points = {Point2{38.2946, 51.6963}, Point2{73.5318, 51.5014},
                  Point2{56.0252, 71.7366}, Point2{41.5493, 92.3655},
                  Point2{70.7299, 92.2041}};
    return tpl;
}

AlignmentTemplate load_alignment_template(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::MissingFile, "cannot open template " + path.string());
    }
    json doc;
    try {
        in >> doc;
        AlignmentTemplate tpl;
        tpl.rows = doc.at("size")[0].get<int>();
        tpl.cols = doc.at("size")[1].get<int>();
        const json& pts = doc.at("landmarks");
        if (!pts.is_array() || pts.size() != 5) {
            fail(ErrorKind::MalformedAnnotation, "template needs 5 landmarks");
        }
        for (int k = 0; k < 5; ++k) {
            tpl.points[k] = point_from_json(pts[k]);
        }
        return tpl;
    } catch (const json::exception& e) {
        fail(ErrorKind::MalformedAnnotation, "template " + path.string() + ": " + e.what());
    }
}

void save_alignment_template(const AlignmentTemplate& tpl,
                             const std::filesystem::path& path) {
    json doc;
    doc["size"] = json::array({tpl.rows, tpl.cols});
    doc["landmarks"] = json::array();
    for (const Point2& p : tpl.points) {
        doc["landmarks"].push_back(point_to_json(p));
    }
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoFailure, "cannot write " + path.string());
    }
    out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic identities

namespace {

// A synthetic identity is a fixed set of colored shapes on the shared face
// geometry; the backdrop behind the face is drawn fresh per image, so it
// carries no class evidence and keeps same-identity embeddings from
// collapsing onto a single point.
struct ShapeParams {
    int kind = 0; // square, disc, bar
    double color[3] = {0, 0, 0};
    double cx = 0, cy = 0;
    int size = 0;
    bool horizontal = false;
};

// Samples a shape that fits inside the box entirely, so features meant for
// the patch band cannot spill past the region the patch can cover.
ShapeParams sample_shape(Rng& rng, double x_lo, double x_hi, double y_lo, double y_hi,
                         int min_size, int max_size) {
    ShapeParams p;
    for (int ch = 0; ch < 3; ++ch) {
        p.color[ch] = rng.uniform();
    }
    p.kind = rng.below(3);
    p.size = min_size + rng.below(max_size - min_size + 1);
    p.horizontal = rng.below(2) == 0;
    double hx, hy; // half extents
    if (p.kind == 0) {
        hx = hy = p.size / 2 + 1;
    } else if (p.kind == 1) {
        hx = hy = p.size / 2 + 2;
    } else {
        // bar spans 2*size along its axis; cap so it fits the box
        const double span_x = (x_hi - x_lo) / 2.0 - 2.0;
        const double span_y = (y_hi - y_lo) / 2.0 - 2.0;
        const int cap = static_cast<int>(p.horizontal ? span_x : span_y);
        p.size = std::min(p.size, std::max(min_size / 2 + 1, cap));
        hx = p.horizontal ? p.size + 1 : p.size / 6 + 2;
        hy = p.horizontal ? p.size / 6 + 2 : p.size + 1;
    }
    hx = std::min(hx, (x_hi - x_lo) / 2.0);
    hy = std::min(hy, (y_hi - y_lo) / 2.0);
    p.cx = rng.uniform(x_lo + hx, x_hi - hx);
    p.cy = rng.uniform(y_lo + hy, y_hi - hy);
    return p;
}

void render_shape(ImageTensor& img, const ShapeParams& p, double dx, double dy) {
    const int rows = img.rows, cols = img.cols;
    const int cx = static_cast<int>(std::lround(p.cx + dx));
    const int cy = static_cast<int>(std::lround(p.cy + dy));
    auto put = [&](int r, int c) {
        if (r >= 0 && r < rows && c >= 0 && c < cols) {
            for (int ch = 0; ch < 3; ++ch) {
                img.at(ch, r, c) = p.color[ch];
            }
        }
    };
    if (p.kind == 0) {
        for (int r = cy - p.size / 2; r < cy + p.size - p.size / 2; ++r) {
            for (int c = cx - p.size / 2; c < cx + p.size - p.size / 2; ++c) {
                put(r, c);
            }
        }
    } else if (p.kind == 1) {
        const int radius = p.size / 2 + 1;
        for (int r = cy - radius; r <= cy + radius; ++r) {
            for (int c = cx - radius; c <= cx + radius; ++c) {
                if ((r - cy) * (r - cy) + (c - cx) * (c - cx) <= radius * radius) {
                    put(r, c);
                }
            }
        }
    } else {
        const int len = p.size * 2;
        const int thick = std::max(2, p.size / 3);
        const int h = p.horizontal ? thick : len;
        const int w = p.horizontal ? len : thick;
        for (int r = cy - h / 2; r < cy + h - h / 2; ++r) {
            for (int c = cx - w / 2; c < cx + w - w / 2; ++c) {
                put(r, c);
            }
        }
    }
}

std::vector<ShapeParams> sample_identity_shapes(Rng& rng) {
    // Class evidence concentrates in the forehead band (where the patch
    // region sits); the lower face keeps a few small features so identity is
    // not exclusively patch-occludable.
    std::vector<ShapeParams> shapes;
    for (int s = 0; s < 6; ++s) {
        shapes.push_back(sample_shape(rng, 13, 98, 8, 38, 12, 28));
    }
    // Lower-face features are identity-specific but low-contrast (near the
    // face tone): genuinely informative, yet with bounded gain, mirroring how
    // a real forehead patch competes with softer off-patch cues.
    const double face_tone[3] = {0.70, 0.62, 0.55};
    for (int s = 0; s < 4; ++s) {
        ShapeParams p = sample_shape(rng, 26, 86, 56, 102, 12, 22);
        for (int ch = 0; ch < 3; ++ch) {
            p.color[ch] = std::clamp(face_tone[ch] + (p.color[ch] - 0.5) * 0.4, 0.0, 1.0);
        }
        shapes.push_back(p);
    }
    return shapes;
}

void render_photo(ImageTensor& img, Rng& bg_rng,
                  const std::vector<ShapeParams>& shapes, double dx, double dy,
                  double brightness) {
    const int rows = img.rows, cols = img.cols;
    // per-image backdrop: smooth gradient between two random colors
    double c0[3], c1[3];
    for (int ch = 0; ch < 3; ++ch) {
        c0[ch] = bg_rng.uniform();
        c1[ch] = bg_rng.uniform();
    }
    const double angle = bg_rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double gx = std::cos(angle), gy = std::sin(angle);
    const double diag = std::hypot(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double t = std::clamp(0.5 + (c * gx + r * gy) / diag, 0.0, 1.0);
            for (int ch = 0; ch < 3; ++ch) {
                img.at(ch, r, c) = c0[ch] + (c1[ch] - c0[ch]) * t;
            }
        }
    }
    // shared face geometry, tracking the jitter shift
    const double fx = cols * 0.5 + dx, fy = rows * 0.58 + dy;
    const double rx = cols * 0.40, ry = rows * 0.46;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double ex = (c - fx) / rx, ey = (r - fy) / ry;
            if (ex * ex + ey * ey <= 1.0) {
                img.at(0, r, c) = 0.70;
                img.at(1, r, c) = 0.62;
                img.at(2, r, c) = 0.55;
            }
        }
    }
    for (const auto& [ex, ey] : {std::pair{38.3, 51.7}, std::pair{73.5, 51.5}}) {
        const double cx = ex + dx, cy = ey + dy;
        for (int r = static_cast<int>(cy) - 3; r <= static_cast<int>(cy) + 3; ++r) {
            for (int c = static_cast<int>(cx) - 3; c <= static_cast<int>(cx) + 3; ++c) {
                const double dr = r - cy, dc = c - cx;
                if (dr * dr + dc * dc <= 9.0 && r >= 0 && r < rows && c >= 0 && c < cols) {
                    img.at(0, r, c) = 0.15;
                    img.at(1, r, c) = 0.15;
                    img.at(2, r, c) = 0.18;
                }
            }
        }
    }
    for (const ShapeParams& shape : shapes) {
        render_shape(img, shape, dx, dy);
    }
    if (brightness != 0.0) {
        for (double& v : img.data) {
            v = std::clamp(v + brightness, 0.0, 1.0);
        }
    }
    quantize_to_8bit(img);
}

std::vector<CellCorrespondence> region_cells(const SyntheticIdentitySpec& spec,
                                             double dx, double dy) {
    const int p_rows = spec.patch_cells_rows * spec.patch_cell_px;
    const int p_cols = spec.patch_cells_cols * spec.patch_cell_px;
    std::vector<CellCorrespondence> cells;
    cells.reserve(static_cast<size_t>(spec.patch_cells_rows) * spec.patch_cells_cols);
    for (int j = 0; j < spec.patch_cells_rows; ++j) {
        for (int k = 0; k < spec.patch_cells_cols; ++k) {
            CellCorrespondence cell;
            cell.cell_id = j * spec.patch_cells_cols + k;
            auto patch_x = [&](int kk) {
                return static_cast<double>(kk * (p_cols - 1)) / spec.patch_cells_cols;
            };
            auto patch_y = [&](int jj) {
                return static_cast<double>(jj * (p_rows - 1)) / spec.patch_cells_rows;
            };
            auto photo_x = [&](int kk) {
                return spec.region_x0 +
                       kk * (spec.region_x1 - spec.region_x0) / spec.patch_cells_cols +
                       dx;
            };
            auto photo_y = [&](int jj) {
                return spec.region_y0 +
                       jj * (spec.region_y1 - spec.region_y0) / spec.patch_cells_rows +
                       dy;
            };
            cell.patch_corners = {Point2{patch_x(k), patch_y(j)},
                                  Point2{patch_x(k + 1), patch_y(j)},
                                  Point2{patch_x(k + 1), patch_y(j + 1)},
                                  Point2{patch_x(k), patch_y(j + 1)}};
            cell.photo_corners = {Point2{photo_x(k), photo_y(j)},
                                  Point2{photo_x(k + 1), photo_y(j)},
                                  Point2{photo_x(k + 1), photo_y(j + 1)},
                                  Point2{photo_x(k), photo_y(j + 1)}};
            cells.push_back(cell);
        }
    }
    return cells;
}

} // namespace

SyntheticDataset generate_synthetic_identities(const SyntheticIdentitySpec& spec) {
    if (spec.num_identities < 1 || spec.images_per_identity < 1 ||
        spec.val_per_identity + spec.test_per_identity >= spec.images_per_identity) {
        fail(ErrorKind::InvalidArgument, "synthetic spec counts are inconsistent");
    }
    if (spec.max_shift_px < 0 ||
        spec.region_x0 - spec.max_shift_px < 0.0 ||
        spec.region_y0 - spec.max_shift_px < 0.0 ||
        spec.region_x1 + spec.max_shift_px > spec.image_cols - 1 ||
        spec.region_y1 + spec.max_shift_px > spec.image_rows - 1) {
        fail(ErrorKind::InvalidArgument, "patch region leaves the photo under jitter");
    }

    const AlignmentTemplate tpl = default_alignment_template();
    SyntheticDataset dataset;
    dataset.num_classes = spec.num_identities;
    dataset.patch_rows = spec.patch_cells_rows * spec.patch_cell_px;
    dataset.patch_cols = spec.patch_cells_cols * spec.patch_cell_px;
    const int train_n =
        spec.images_per_identity - spec.val_per_identity - spec.test_per_identity;

    for (int id = 0; id < spec.num_identities; ++id) {
        Rng id_rng(mix_seed(spec.seed, static_cast<uint64_t>(id)));
        const std::vector<ShapeParams> shapes = sample_identity_shapes(id_rng);
        for (int img = 0; img < spec.images_per_identity; ++img) {
            Rng jitter_rng(mix_seed(spec.seed, 0x10000ull + static_cast<uint64_t>(id) *
                                                                1000 +
                                                   static_cast<uint64_t>(img)));
            const int dx = jitter_rng.below(2 * spec.max_shift_px + 1) - spec.max_shift_px;
            const int dy = jitter_rng.below(2 * spec.max_shift_px + 1) - spec.max_shift_px;
            const double brightness =
                jitter_rng.uniform(-spec.max_brightness, spec.max_brightness);

            CapturePhoto photo;
            photo.image = ImageTensor(spec.image_rows, spec.image_cols, 3);
            render_photo(photo.image, jitter_rng, shapes, dx, dy, brightness);

            char id_buf[32];
            std::snprintf(id_buf, sizeof(id_buf), "id%02d_img%02d", id, img);
            photo.id = id_buf;
            photo.class_id = id;
            photo.split = img < train_n              ? Split::Train
                          : img < train_n + spec.val_per_identity ? Split::Val
                                                                  : Split::Test;
            photo.source = std::filesystem::path("images") / (photo.id + ".png");
            for (const Point2& p : tpl.points) {
                const double nx =
                    jitter_rng.uniform(-spec.landmark_noise_px, spec.landmark_noise_px);
                const double ny =
                    jitter_rng.uniform(-spec.landmark_noise_px, spec.landmark_noise_px);
                photo.landmarks.push_back(Point2{p.x + dx + nx, p.y + dy + ny});
            }
            photo.cells = region_cells(spec, dx, dy);
            dataset.photos.push_back(std::move(photo));
        }
    }
    return dataset;
}

void write_synthetic_dataset(const SyntheticDataset& dataset,
                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_manifest(dataset.photos, dir / "manifest.json", dir, /*write_images=*/true);
}

// ---------------------------------------------------------------------------
// Dataset assembly

TrainDataset build_train_dataset(std::span<const CapturePhoto> photos,
                                 const AlignmentTemplate& tpl,
                                 std::optional<Split> split_filter) {
    TrainDataset dataset;
    for (const CapturePhoto& photo : photos) {
        if (split_filter.has_value() && photo.split != *split_filter) {
            continue;
        }
        if (photo.class_id < 0) {
            fail(ErrorKind::InvalidArgument,
                 "photo '" + photo.id + "' carries no class_id; cannot train on it");
        }
        const SimilarityTransform sim = estimate_similarity(photo.landmarks, tpl.points);
        const SamplingGrid grid = precompute_alignment_grid(
            sim, tpl.rows, tpl.cols, photo.image.rows, photo.image.cols);
        dataset.images.push_back(align_face(photo.image, grid));
        dataset.labels.push_back(photo.class_id);
        dataset.num_classes = std::max(dataset.num_classes, photo.class_id + 1);
    }
    return dataset;
}

AttackPhoto build_attack_photo(const CapturePhoto& photo, int patch_rows, int patch_cols,
                               const AlignmentTemplate& tpl) {
    AttackPhoto ap;
    ap.id = photo.id;
    ap.image = photo.image;
    ap.patch_grid = precompute_patch_grid(photo.cells, patch_rows, patch_cols,
                                          photo.image.rows, photo.image.cols);
    const SimilarityTransform sim = estimate_similarity(photo.landmarks, tpl.points);
    ap.align_grid = precompute_alignment_grid(sim, tpl.rows, tpl.cols, photo.image.rows,
                                              photo.image.cols);
    return ap;
}

std::pair<int, int> derive_patch_shape(std::span<const CapturePhoto> photos) {
    double max_x = 0.0, max_y = 0.0;
    bool any = false;
    for (const CapturePhoto& photo : photos) {
        for (const CellCorrespondence& cell : photo.cells) {
            for (const Point2& p : cell.patch_corners) {
                max_x = std::max(max_x, p.x);
                max_y = std::max(max_y, p.y);
                any = true;
            }
        }
    }
    if (!any) {
        fail(ErrorKind::MalformedAnnotation, "no cells; cannot derive the patch shape");
    }
    return {static_cast<int>(std::ceil(max_y)) + 1, static_cast<int>(std::ceil(max_x)) + 1};
}

// ---------------------------------------------------------------------------
// Gallery

std::vector<GalleryEntry> build_gallery(std::span<const CapturePhoto> photos,
                                        const ModelCheckpoint& ckpt,
                                        const AlignmentTemplate& tpl, Split split) {
    std::map<int, std::vector<const CapturePhoto*>> by_class;
    for (const CapturePhoto& photo : photos) {
        if (photo.split == split && photo.class_id >= 0) {
            by_class[photo.class_id].push_back(&photo);
        }
    }
    if (by_class.empty()) {
        fail(ErrorKind::EmptySplit, "no photos with class ids in the requested split");
    }
    EmbedNet net(ckpt);
    EmbedNet::Workspace ws;
    std::vector<GalleryEntry> gallery;
    for (const auto& [class_id, members] : by_class) {
        std::vector<double> mean(ckpt.arch.dense_out, 0.0);
        for (const CapturePhoto* photo : members) {
            const SimilarityTransform sim =
                estimate_similarity(photo->landmarks, tpl.points);
            const SamplingGrid grid = precompute_alignment_grid(
                sim, tpl.rows, tpl.cols, photo->image.rows, photo->image.cols);
            const Embedding e = net.forward(align_face(photo->image, grid), ws);
            kernels::active().axpy(1.0, e.v.data(), mean.data(), mean.size());
        }
        double norm2 = 0.0;
        for (double v : mean) {
            norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : mean) {
            v *= inv;
        }
        GalleryEntry entry;
        entry.class_id = class_id;
        entry.label = "id" + std::to_string(class_id);
        entry.embedding.v = std::move(mean);
        entry.source = "mean of " + std::to_string(members.size()) + " " +
                       split_name(split) + " photos";
        gallery.push_back(std::move(entry));
    }
    return gallery;
}

void save_gallery(std::span<const GalleryEntry> gallery,
                  const std::filesystem::path& path) {
    json doc;
    doc["classes"] = json::array();
    for (const GalleryEntry& entry : gallery) {
        json je;
        je["class_id"] = entry.class_id;
        je["label"] = entry.label;
        je["source"] = entry.source;
        je["embedding"] = entry.embedding.v;
        doc["classes"].push_back(je);
    }
    std::ofstream out(path);
    if (!out) {
        fail(ErrorKind::IoFailure, "cannot write " + path.string());
    }
    out << doc.dump(2) << "\n";
}

std::vector<GalleryEntry> load_gallery(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::MissingFile, "cannot open gallery " + path.string());
    }
    json doc;
    try {
        in >> doc;
        std::vector<GalleryEntry> gallery;
        for (const json& je : doc.at("classes")) {
            GalleryEntry entry;
            entry.class_id = je.at("class_id").get<int>();
            entry.label = je.at("label").get<std::string>();
            entry.source = je.value("source", "");
            entry.embedding.v = je.at("embedding").get<std::vector<double>>();
            gallery.push_back(std::move(entry));
        }
        return gallery;
    } catch (const json::exception& e) {
        fail(ErrorKind::MalformedAnnotation, "gallery " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Patch export

void export_patch(const Patch& patch, const PatchLayout& layout, double dpi,
                  const std::filesystem::path& path) {
    const int expect_rows = layout.cells_rows * layout.cell_px;
    const int expect_cols = layout.cells_cols * layout.cell_px;
    if (patch.rows() != expect_rows || patch.cols() != expect_cols) {
        fail(ErrorKind::LayoutMismatch,
             "patch " + std::to_string(patch.rows()) + "x" + std::to_string(patch.cols()) +
                 " does not match layout " + std::to_string(expect_rows) + "x" +
                 std::to_string(expect_cols));
    }
    if (!(dpi > 0.0)) {
        fail(ErrorKind::InvalidArgument, "dpi must be positive");
    }
    const double width_cm = layout.cells_cols * layout.cm_per_cell;
    const double height_cm = layout.cells_rows * layout.cm_per_cell;
    const int out_w = static_cast<int>(std::lround(width_cm * dpi / 2.54));
    const int out_h = static_cast<int>(std::lround(height_cm * dpi / 2.54));

    ImageTensor out(out_h, out_w, 1);
    for (int r = 0; r < out_h; ++r) {
        const int sr = static_cast<int>((static_cast<int64_t>(r) * patch.rows()) / out_h);
        for (int c = 0; c < out_w; ++c) {
            const int sc =
                static_cast<int>((static_cast<int64_t>(c) * patch.cols()) / out_w);
            out.at(0, r, c) = patch.image.at(0, sr, sc);
        }
    }
    char desc[160];
    std::snprintf(desc, sizeof(desc),
                  "%dx%d cells at %.2f cm/cell, physical size %.2f x %.2f cm",
                  layout.cells_cols, layout.cells_rows, layout.cm_per_cell, width_cm,
                  height_cm);
    PngMetadata meta;
    meta.dpi = dpi;
    meta.description = desc;
    save_png(out, path, meta);
}

// ---------------------------------------------------------------------------
// Reports

ReportRow report_row_from(const EvaluationTable& table) {
    ReportRow row;
    row.patch_name = table.patch_name;
    row.attack_type = attack_mode_name(table.mode);
    const SplitStats* splits[3] = {&table.train, &table.val, &table.test};
    for (int s = 0; s < 3; ++s) {
        row.cells[2 * s].mean = splits[s]->mean_gt;
        row.cells[2 * s].sem = splits[s]->sem_gt;
        row.cells[2 * s + 1].mean = splits[s]->mean_target;
        row.cells[2 * s + 1].sem = splits[s]->sem_target;
    }
    return row;
}

std::string format_report_cell(const ReportCell& cell) {
    if (!cell.mean.has_value()) {
        return "—";
    }
    char buf[64];
    if (cell.sem.has_value()) {
        std::snprintf(buf, sizeof(buf), "%.3f ± %.3f", *cell.mean, *cell.sem);
    } else {
        std::snprintf(buf, sizeof(buf), "%.3f ± n/a", *cell.mean);
    }
    return buf;
}

void write_report(std::span<const ReportRow> rows, std::span<const NamedTrace> traces,
                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    static const char* kHeaders[] = {"cos(train, gt)", "cos(train, target)",
                                     "cos(val, gt)",   "cos(val, target)",
                                     "cos(test, gt)",  "cos(test, target)"};
    {
        std::ofstream csv(dir / "report.csv");
        if (!csv) {
            fail(ErrorKind::IoFailure, "cannot write report.csv");
        }
        csv << "patch,attack,train_gt,train_target,val_gt,val_target,test_gt,test_target\n";
        for (const ReportRow& row : rows) {
            csv << row.patch_name << "," << row.attack_type;
            for (const ReportCell& cell : row.cells) {
                csv << "," << format_report_cell(cell);
            }
            csv << "\n";
        }
    }
    {
        size_t name_w = std::string("patch").size();
        size_t type_w = std::string("attack").size();
        for (const ReportRow& row : rows) {
            name_w = std::max(name_w, row.patch_name.size());
            type_w = std::max(type_w, row.attack_type.size());
        }
        auto pad = [](const std::string& s, size_t w) {
            return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
        };
        std::ofstream txt(dir / "report.txt");
        if (!txt) {
            fail(ErrorKind::IoFailure, "cannot write report.txt");
        }
        txt << pad("patch", name_w) << " | " << pad("attack", type_w);
        for (const char* h : kHeaders) {
            txt << " | " << h;
        }
        txt << "\n";
        for (const ReportRow& row : rows) {
            txt << pad(row.patch_name, name_w) << " | " << pad(row.attack_type, type_w);
            for (const ReportCell& cell : row.cells) {
                txt << " | " << format_report_cell(cell);
            }
            txt << "\n";
        }
    }
    for (const NamedTrace& nt : traces) {
        if (nt.trace != nullptr) {
            write_trace_csv(*nt.trace, dir / ("trace_" + nt.name + ".csv"));
        }
    }
}

} // namespace patchforge
