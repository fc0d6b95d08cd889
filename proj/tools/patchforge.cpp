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

// Command-line front end wiring the toolkit into the capture -> train ->
// attack -> evaluate -> report workflow. Every subcommand writes an
// effective-config file recording each setting and where it came from
// (cli > config-file > default; the workspace root may come from the
// PATCHFORGE_WORKSPACE environment variable).

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "patchforge/attack.hpp"
#include "patchforge/embednet.hpp"
#include "patchforge/errors.hpp"
#include "patchforge/image_io.hpp"
#include "patchforge/kernels.hpp"
#include "patchforge/losses.hpp"
#include "patchforge/pipeline.hpp"

namespace pf = patchforge;
namespace fs = std::filesystem;

namespace {

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Option bookkeeping: defaults < config file < command line, per key.

struct TrackedOption {
    std::string key;
    CLI::Option* option = nullptr;
    std::function<void(const std::string&)> set_from_string;
    std::function<std::string()> current_value;
};

class OptionSet {
public:
    explicit OptionSet(CLI::App* cmd) : cmd_(cmd) {
        cmd_->add_option("--config", config_path_,
                         "key=value config file (lower precedence than flags)");
    }

    void add_string(const std::string& key, std::string& var, const std::string& help) {
        auto* opt = cmd_->add_option("--" + key, var, help)->capture_default_str();
        tracked_.push_back({key, opt, [&var](const std::string& s) { var = s; },
                            [&var] { return var; }});
    }

    void add_int(const std::string& key, int& var, const std::string& help) {
        auto* opt = cmd_->add_option("--" + key, var, help)->capture_default_str();
        tracked_.push_back({key, opt,
                            [&var, key](const std::string& s) {
                                if (std::from_chars(s.data(), s.data() + s.size(), var).ec !=
                                    std::errc{}) {
                                    pf::fail(pf::ErrorKind::InvalidArgument,
                                             "config value for " + key + " is not an int");
                                }
                            },
                            [&var] { return std::to_string(var); }});
    }

    void add_uint64(const std::string& key, uint64_t& var, const std::string& help) {
        auto* opt = cmd_->add_option("--" + key, var, help)->capture_default_str();
        tracked_.push_back({key, opt,
                            [&var, key](const std::string& s) {
                                if (std::from_chars(s.data(), s.data() + s.size(), var).ec !=
                                    std::errc{}) {
                                    pf::fail(pf::ErrorKind::InvalidArgument,
                                             "config value for " + key + " is not an integer");
                                }
                            },
                            [&var] { return std::to_string(var); }});
    }

    void add_double(const std::string& key, double& var, const std::string& help) {
        auto* opt = cmd_->add_option("--" + key, var, help)->capture_default_str();
        tracked_.push_back({key, opt,
                            [&var, key](const std::string& s) {
                                try {
                                    var = std::stod(s);
                                } catch (const std::exception&) {
                                    pf::fail(pf::ErrorKind::InvalidArgument,
                                             "config value for " + key + " is not a number");
                                }
                            },
                            [&var] { return format_full(var); }});
    }

    /// Apply config-file values for keys not set on the command line, then
    /// record provenance for every key.
    void finalize(const fs::path& workspace, const std::string& workspace_source,
                  std::vector<std::array<std::string, 3>>& capture) {
        std::map<std::string, std::string> file_values;
        if (!config_path_.empty()) {
            std::ifstream in(config_path_);
            if (!in) {
                pf::fail(pf::ErrorKind::MissingFile,
                         "cannot open config file " + config_path_);
            }
            std::string line;
            int line_no = 0;
            while (std::getline(in, line)) {
                ++line_no;
                const size_t hash = line.find('#');
                if (hash != std::string::npos) {
                    line = line.substr(0, hash);
                }
                const auto first = line.find_first_not_of(" \t\r");
                if (first == std::string::npos) {
                    continue;
                }
                const size_t eq = line.find('=');
                if (eq == std::string::npos) {
                    pf::fail(pf::ErrorKind::InvalidArgument,
                             "config line " + std::to_string(line_no) + " is not key=value");
                }
                auto trim = [](std::string s) {
                    const auto b = s.find_first_not_of(" \t\r");
                    const auto e = s.find_last_not_of(" \t\r");
                    return b == std::string::npos ? std::string()
                                                  : s.substr(b, e - b + 1);
                };
                file_values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
            }
        }
        for (const TrackedOption& t : tracked_) {
            std::string source = "default";
            const auto it = file_values.find(t.key);
            if (t.option->count() > 0) {
                source = "cli";
            } else if (it != file_values.end()) {
                t.set_from_string(it->second);
                source = "config-file";
            }
            if (it != file_values.end()) {
                file_values.erase(it);
            }
            capture.push_back({t.key, t.current_value(), source});
        }
        if (!file_values.empty()) {
            pf::fail(pf::ErrorKind::InvalidArgument,
                     "unknown config key '" + file_values.begin()->first + "'");
        }
        capture.push_back({"workspace", workspace.string(), workspace_source});
    }

private:
    CLI::App* cmd_;
    std::string config_path_;
    std::vector<TrackedOption> tracked_;
};

void write_effective_config(const fs::path& out_dir, const std::string& subcommand,
                            const std::vector<std::array<std::string, 3>>& capture) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "effective-config.txt");
    if (!out) {
        pf::fail(pf::ErrorKind::IoFailure, "cannot write effective-config.txt");
    }
    out << "# effective configuration (subcommand: " << subcommand << ")\n";
    for (const auto& [key, value, source] : capture) {
        out << key << " = " << value << "  # " << source << "\n";
    }
}

// ---------------------------------------------------------------------------
// Shared context

struct Context {
    fs::path workspace;
    std::string workspace_source = "default";
    std::string workspace_flag;

    fs::path resolve(const std::string& p) const {
        fs::path path(p);
        return path.is_absolute() ? path : workspace / path;
    }

    void settle() {
        if (!workspace_flag.empty()) {
            workspace = workspace_flag;
            workspace_source = "cli";
        } else if (const char* env = std::getenv("PATCHFORGE_WORKSPACE")) {
            workspace = env;
            workspace_source = "env";
        } else {
            workspace = ".";
        }
    }
};

pf::AlignmentTemplate resolve_template(const Context& ctx, const std::string& path) {
    if (path.empty()) {
        return pf::default_alignment_template();
    }
    return pf::load_alignment_template(ctx.resolve(path));
}

std::vector<int> parse_channels(const std::string& spec) {
    std::vector<int> channels;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        int v = 0;
        if (std::from_chars(tok.data(), tok.data() + tok.size(), v).ec != std::errc{} ||
            v <= 0) {
            pf::fail(pf::ErrorKind::InvalidArgument,
                     "channels must be a comma list of positive ints, got '" + spec + "'");
        }
        channels.push_back(v);
    }
    if (channels.empty()) {
        pf::fail(pf::ErrorKind::InvalidArgument, "channels list is empty");
    }
    return channels;
}

pf::AttackMode parse_mode(const std::string& mode) {
    if (mode == "untargeted") {
        return pf::AttackMode::Untargeted;
    }
    if (mode == "targeted") {
        return pf::AttackMode::Targeted;
    }
    pf::fail(pf::ErrorKind::InvalidArgument, "mode must be untargeted or targeted");
}

std::vector<pf::CapturePhoto> load_dataset(const Context& ctx, const std::string& data) {
    const fs::path dir = ctx.resolve(data);
    return pf::load_attack_inputs(dir / "manifest.json", dir);
}

std::vector<const pf::CapturePhoto*> photos_of_class(
    const std::vector<pf::CapturePhoto>& photos, int class_id) {
    std::vector<const pf::CapturePhoto*> out;
    for (const pf::CapturePhoto& p : photos) {
        if (p.class_id == class_id) {
            out.push_back(&p);
        }
    }
    if (out.empty()) {
        pf::fail(pf::ErrorKind::InvalidArgument,
                 "no photos with class_id " + std::to_string(class_id));
    }
    return out;
}

pf::GalleryEntry find_gallery_class(const std::vector<pf::GalleryEntry>& gallery,
                                    int class_id) {
    for (const pf::GalleryEntry& e : gallery) {
        if (e.class_id == class_id) {
            return e;
        }
    }
    pf::fail(pf::ErrorKind::InvalidArgument,
             "gallery has no class " + std::to_string(class_id));
}

std::optional<pf::Embedding> resolve_target(
    const std::string& target_class, const std::vector<pf::GalleryEntry>& gallery,
    const pf::Embedding& attacker, int attacker_class, int* target_id_out) {
    if (target_class.empty() || target_class == "none") {
        return std::nullopt;
    }
    if (target_class == "auto") {
        std::vector<pf::ClassEmbedding> entries;
        entries.reserve(gallery.size());
        for (const pf::GalleryEntry& e : gallery) {
            entries.push_back({e.class_id, e.embedding});
        }
        const pf::ClassEmbedding chosen =
            pf::select_target_class(entries, attacker, attacker_class);
        if (target_id_out != nullptr) {
            *target_id_out = chosen.class_id;
        }
        return chosen.embedding;
    }
    int id = 0;
    if (std::from_chars(target_class.data(), target_class.data() + target_class.size(),
                        id).ec != std::errc{}) {
        pf::fail(pf::ErrorKind::InvalidArgument,
                 "target-class must be a class id, 'auto' or 'none'");
    }
    if (id == attacker_class) {
        pf::fail(pf::ErrorKind::InvalidArgument, "target class equals the attacker class");
    }
    if (target_id_out != nullptr) {
        *target_id_out = id;
    }
    return find_gallery_class(gallery, id).embedding;
}

// ---------------------------------------------------------------------------

int dispatch(int argc, char** argv) {
    CLI::App app{"adversarial patch toolkit"};
    app.require_subcommand(1);

    Context ctx;

    // ---- make-chessboard ----
    auto* cmd_board = app.add_subcommand("make-chessboard",
                                         "render the printable calibration pattern");
    OptionSet board_opts(cmd_board);
    int board_rows = 5, board_cols = 14, board_cell_px = 20, board_border_px = 10;
    std::string board_out = "chessboard";
    cmd_board->add_option("--workspace", ctx.workspace_flag, "workspace root");
    board_opts.add_int("rows", board_rows, "cell rows");
    board_opts.add_int("cols", board_cols, "cell columns");
    board_opts.add_int("cell-px", board_cell_px, "pixels per cell");
    board_opts.add_int("border-px", board_border_px, "white border width");
    board_opts.add_string("out", board_out, "output directory");

    // ---- synth-data ----
    auto* cmd_synth = app.add_subcommand("synth-data",
                                         "generate the synthetic identity dataset");
    OptionSet synth_opts(cmd_synth);
    pf::SyntheticIdentitySpec spec;
    std::string synth_out = "data";
    cmd_synth->add_option("--workspace", ctx.workspace_flag, "workspace root");
    synth_opts.add_int("identities", spec.num_identities, "number of identities");
    synth_opts.add_int("images-per-identity", spec.images_per_identity,
                       "images per identity");
    synth_opts.add_int("val-per-identity", spec.val_per_identity, "validation images");
    synth_opts.add_int("test-per-identity", spec.test_per_identity, "test images");
    synth_opts.add_int("max-shift", spec.max_shift_px, "jitter shift bound (px)");
    synth_opts.add_double("max-brightness", spec.max_brightness, "jitter brightness bound");
    synth_opts.add_int("cells-rows", spec.patch_cells_rows, "patch cell rows");
    synth_opts.add_int("cells-cols", spec.patch_cells_cols, "patch cell columns");
    synth_opts.add_int("cell-px", spec.patch_cell_px, "patch pixels per cell");
    synth_opts.add_uint64("seed", spec.seed, "dataset seed");
    synth_opts.add_string("out", synth_out, "output directory");

    // ---- train-target ----
    auto* cmd_train = app.add_subcommand("train-target",
                                         "train the toy embedding model");
    OptionSet train_opts(cmd_train);
    std::string train_data = "data", train_out = "model", train_split = "all";
    std::string train_channels = "8,16,32", train_template;
    pf::EmbedNetConfig net_config;
    pf::TrainOptions train_options;
    cmd_train->add_option("--workspace", ctx.workspace_flag, "workspace root");
    train_opts.add_string("data", train_data, "dataset directory");
    train_opts.add_string("split", train_split, "training split: all or train");
    train_opts.add_string("channels", train_channels, "conv channel widths");
    train_opts.add_int("embed-dim", net_config.embed_dim, "embedding dimension");
    train_opts.add_double("margin", net_config.margin, "angular margin m");
    train_opts.add_double("scale", net_config.scale, "logit scale s");
    train_opts.add_double("lr", train_options.learning_rate, "learning rate");
    train_opts.add_double("momentum", train_options.momentum, "SGD momentum");
    train_opts.add_int("epochs", train_options.epochs, "epoch budget");
    train_opts.add_int("batch", train_options.batch_size, "batch size");
    train_opts.add_double("accuracy-gate", train_options.accuracy_gate,
                          "stop once train accuracy reaches this");
    train_opts.add_uint64("seed", net_config.seed, "training seed");
    train_opts.add_string("align-template", train_template,
                          "landmark template JSON (empty = built-in)");
    train_opts.add_string("out", train_out, "output directory");

    // ---- embed-gallery ----
    auto* cmd_gallery = app.add_subcommand("embed-gallery",
                                           "collect per-class mean embeddings");
    OptionSet gallery_opts(cmd_gallery);
    std::string gal_data = "data", gal_model = "model/model.pfck", gal_split = "train";
    std::string gal_template, gal_out = "gallery";
    cmd_gallery->add_option("--workspace", ctx.workspace_flag, "workspace root");
    gallery_opts.add_string("data", gal_data, "dataset directory");
    gallery_opts.add_string("model", gal_model, "checkpoint path");
    gallery_opts.add_string("split", gal_split, "split to embed");
    gallery_opts.add_string("align-template", gal_template,
                            "landmark template JSON (empty = built-in)");
    gallery_opts.add_string("out", gal_out, "output directory");

    // ---- attack ----
    auto* cmd_attack = app.add_subcommand("attack", "optimize an adversarial patch");
    OptionSet attack_opts(cmd_attack);
    std::string atk_data = "data", atk_model = "model/model.pfck", atk_gallery;
    std::string atk_mode = "untargeted", atk_target = "auto", atk_template;
    std::string atk_init = "constant", atk_out = "attack";
    int atk_class = 0, atk_max_photos = 0, atk_patch_rows = 0, atk_patch_cols = 0;
    pf::AttackConfig attack_config;
    cmd_attack->add_option("--workspace", ctx.workspace_flag, "workspace root");
    attack_opts.add_string("data", atk_data, "dataset directory");
    attack_opts.add_string("model", atk_model, "checkpoint path");
    attack_opts.add_string("gallery", atk_gallery,
                           "gallery JSON (empty = build from train split)");
    attack_opts.add_int("attacker-class", atk_class, "class id under attack");
    attack_opts.add_string("mode", atk_mode, "untargeted or targeted");
    attack_opts.add_string("target-class", atk_target,
                           "targeted mode: class id or 'auto' (nearest non-gt)");
    attack_opts.add_double("epsilon", attack_config.epsilon, "sign-step size");
    attack_opts.add_double("mu", attack_config.mu, "momentum decay");
    attack_opts.add_double("tau", attack_config.tau, "TV weight");
    attack_opts.add_int("max-iters", attack_config.max_iters, "iteration budget");
    attack_opts.add_double("stop-threshold", attack_config.stop_when_adv_below,
                           "stop once adv loss drops below this");
    attack_opts.add_uint64("seed", attack_config.seed, "patch init seed");
    attack_opts.add_string("init", atk_init, "patch init: constant or uniform-random");
    attack_opts.add_double("init-constant", attack_config.init_constant,
                           "constant init value");
    attack_opts.add_int("max-train-photos", atk_max_photos,
                        "cap on training photos (0 = all)");
    attack_opts.add_int("patch-rows", atk_patch_rows, "patch rows (0 = derive)");
    attack_opts.add_int("patch-cols", atk_patch_cols, "patch cols (0 = derive)");
    attack_opts.add_string("align-template", atk_template,
                           "landmark template JSON (empty = built-in)");
    attack_opts.add_string("out", atk_out, "output directory");

    // ---- apply-patch ----
    auto* cmd_apply = app.add_subcommand("apply-patch",
                                         "composite a patch onto a photo");
    OptionSet apply_opts(cmd_apply);
    std::string apl_data = "data", apl_patch = "attack/patch.png", apl_photo_id,
                apl_out = "composited";
    cmd_apply->add_option("--workspace", ctx.workspace_flag, "workspace root");
    apply_opts.add_string("data", apl_data, "dataset directory");
    apply_opts.add_string("patch", apl_patch, "patch image (PNG/PGM)");
    apply_opts.add_string("photo-id", apl_photo_id, "photo id (empty = all photos)");
    apply_opts.add_string("out", apl_out, "output directory");

    // ---- evaluate ----
    auto* cmd_eval = app.add_subcommand("evaluate",
                                        "measure a patch on train/val/test splits");
    OptionSet eval_opts(cmd_eval);
    std::string ev_data = "data", ev_model = "model/model.pfck", ev_patch =
                    "attack/patch.png";
    std::string ev_gallery, ev_target = "none", ev_template, ev_name, ev_out = "eval";
    int ev_class = 0;
    cmd_eval->add_option("--workspace", ctx.workspace_flag, "workspace root");
    eval_opts.add_string("data", ev_data, "dataset directory");
    eval_opts.add_string("model", ev_model, "checkpoint path");
    eval_opts.add_string("patch", ev_patch, "patch image (PNG/PGM)");
    eval_opts.add_int("attacker-class", ev_class, "class id under attack");
    eval_opts.add_string("gallery", ev_gallery,
                         "gallery JSON (empty = build from train split)");
    eval_opts.add_string("target-class", ev_target,
                         "class id, 'auto', or 'none' for untargeted");
    eval_opts.add_string("patch-name", ev_name, "row label (default: patch file stem)");
    eval_opts.add_string("align-template", ev_template,
                         "landmark template JSON (empty = built-in)");
    eval_opts.add_string("out", ev_out, "output directory");

    // ---- report ----
    auto* cmd_report = app.add_subcommand("report",
                                          "combine evaluations into report files");
    OptionSet report_opts(cmd_report);
    std::vector<std::string> rp_evals, rp_traces;
    std::string rp_out = "report";
    cmd_report->add_option("--workspace", ctx.workspace_flag, "workspace root");
    cmd_report->add_option("--eval", rp_evals, "evaluation CSVs from `evaluate`")
        ->required();
    cmd_report->add_option("--trace", rp_traces, "trace CSVs to bundle");
    report_opts.add_string("out", rp_out, "output directory");

    // ---- make-chessboard (export patch helper flags reuse export defaults) ----

    CLI11_PARSE(app, argc, argv);
    ctx.settle();
    std::vector<std::array<std::string, 3>> capture;

    if (cmd_board->parsed()) {
        board_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(board_out);
        write_effective_config(out, "make-chessboard", capture);
        const pf::ImageTensor board =
            pf::generate_chessboard(board_rows, board_cols, board_cell_px, board_border_px);
        pf::save_png(board, out / "chessboard.png");
        std::printf("wrote %s (%dx%d)\n", (out / "chessboard.png").c_str(), board.cols,
                    board.rows);
        return 0;
    }

    if (cmd_synth->parsed()) {
        synth_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(synth_out);
        write_effective_config(out, "synth-data", capture);
        const pf::SyntheticDataset dataset = pf::generate_synthetic_identities(spec);
        pf::write_synthetic_dataset(dataset, out);
        std::printf("wrote %zu photos across %d identities to %s (patch %dx%d)\n",
                    dataset.photos.size(), dataset.num_classes, out.c_str(),
                    dataset.patch_rows, dataset.patch_cols);
        return 0;
    }

    if (cmd_train->parsed()) {
        train_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(train_out);
        write_effective_config(out, "train-target", capture);
        net_config.conv_channels = parse_channels(train_channels);
        const pf::AlignmentTemplate tpl = resolve_template(ctx, train_template);
        const auto photos = load_dataset(ctx, train_data);
        std::optional<pf::Split> filter;
        if (train_split == "train") {
            filter = pf::Split::Train;
        } else if (train_split != "all") {
            pf::fail(pf::ErrorKind::InvalidArgument, "split must be 'all' or 'train'");
        }
        const pf::TrainDataset dataset = pf::build_train_dataset(photos, tpl, filter);
        train_options.verbose = true;
        const pf::ModelCheckpoint ckpt =
            pf::train_target(dataset, net_config, train_options);
        pf::save_checkpoint(out / "model.pfck", ckpt);
        std::printf("trained on %zu images: accuracy %s after %s epochs -> %s\n",
                    dataset.images.size(), ckpt.metadata.at("train_accuracy").c_str(),
                    ckpt.metadata.at("epochs_run").c_str(),
                    (out / "model.pfck").c_str());
        return 0;
    }

    if (cmd_gallery->parsed()) {
        gallery_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(gal_out);
        write_effective_config(out, "embed-gallery", capture);
        const pf::AlignmentTemplate tpl = resolve_template(ctx, gal_template);
        const auto photos = load_dataset(ctx, gal_data);
        const pf::ModelCheckpoint ckpt = pf::load_checkpoint(ctx.resolve(gal_model));
        const auto gallery =
            pf::build_gallery(photos, ckpt, tpl, pf::parse_split(gal_split));
        pf::save_gallery(gallery, out / "gallery.json");
        std::printf("wrote %zu gallery classes to %s\n", gallery.size(),
                    (out / "gallery.json").c_str());
        return 0;
    }

    if (cmd_attack->parsed()) {
        attack_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(atk_out);
        write_effective_config(out, "attack", capture);
        attack_config.mode = parse_mode(atk_mode);
        if (atk_init == "constant") {
            attack_config.init = pf::PatchInit::Constant;
        } else if (atk_init == "uniform-random") {
            attack_config.init = pf::PatchInit::UniformRandom;
        } else {
            pf::fail(pf::ErrorKind::InvalidArgument,
                     "init must be constant or uniform-random");
        }
        if (attack_config.mode == pf::AttackMode::Targeted &&
            (atk_target.empty() || atk_target == "none")) {
            pf::fail(pf::ErrorKind::MissingTarget,
                     "targeted attack needs --target-class (id or 'auto')");
        }

        const pf::AlignmentTemplate tpl = resolve_template(ctx, atk_template);
        const auto photos = load_dataset(ctx, atk_data);
        const pf::ModelCheckpoint ckpt = pf::load_checkpoint(ctx.resolve(atk_model));
        const pf::EmbedNet net(ckpt);

        const auto attacker_photos = photos_of_class(photos, atk_class);
        int patch_rows = atk_patch_rows, patch_cols = atk_patch_cols;
        if (patch_rows <= 0 || patch_cols <= 0) {
            std::vector<pf::CapturePhoto> owned;
            for (const auto* p : attacker_photos) {
                owned.push_back(*p);
            }
            const auto [r, c] = pf::derive_patch_shape(owned);
            patch_rows = r;
            patch_cols = c;
        }

        std::vector<pf::AttackPhoto> train_photos;
        for (const pf::CapturePhoto* p : attacker_photos) {
            if (p->split != pf::Split::Train) {
                continue;
            }
            if (atk_max_photos > 0 &&
                train_photos.size() >= static_cast<size_t>(atk_max_photos)) {
                break;
            }
            train_photos.push_back(pf::build_attack_photo(*p, patch_rows, patch_cols, tpl));
        }

        const auto gallery = atk_gallery.empty()
                                 ? pf::build_gallery(photos, ckpt, tpl, pf::Split::Train)
                                 : pf::load_gallery(ctx.resolve(atk_gallery));
        const pf::Embedding gt = find_gallery_class(gallery, atk_class).embedding;
        int target_id = -1;
        const std::optional<pf::Embedding> target =
            attack_config.mode == pf::AttackMode::Targeted
                ? resolve_target(atk_target, gallery, gt, atk_class, &target_id)
                : std::nullopt;

        const pf::AttackTrace trace =
            pf::run_attack(train_photos, net, gt, target, attack_config);

        pf::save_png(trace.final_patch.image, out / "patch.png");
        pf::save_pgm(trace.final_patch.image, out / "patch.pgm");
        pf::write_trace_csv(trace, out / "trace.csv");
        nlohmann::json summary;
        summary["stop_reason"] = trace.stop_reason == pf::StopReason::Converged
                                     ? "converged"
                                     : "budget_exhausted";
        summary["iterations"] = trace.records.size();
        summary["final_adv"] = trace.records.back().adv;
        summary["final_tv"] = trace.records.back().tv;
        summary["final_total"] = trace.records.back().total;
        summary["mode"] = pf::attack_mode_name(attack_config.mode);
        summary["attacker_class"] = atk_class;
        if (target_id >= 0) {
            summary["target_class"] = target_id;
        }
        summary["patch_rows"] = patch_rows;
        summary["patch_cols"] = patch_cols;
        std::ofstream(out / "summary.json") << summary.dump(2) << "\n";
        std::printf("%s after %zu iterations (adv %.6f, %.1fs) -> %s\n",
                    summary["stop_reason"].get<std::string>().c_str(),
                    trace.records.size(), trace.records.back().adv,
                    trace.wall_time_seconds, out.c_str());
        return 0;
    }

    if (cmd_apply->parsed()) {
        apply_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(apl_out);
        write_effective_config(out, "apply-patch", capture);
        const auto photos = load_dataset(ctx, apl_data);
        const pf::ImageTensor patch_img = pf::load_image(ctx.resolve(apl_patch));
        if (patch_img.channels != 1) {
            pf::fail(pf::ErrorKind::InvalidArgument, "patch must be grayscale");
        }
        pf::Patch patch;
        patch.image = patch_img;
        size_t written = 0;
        for (const pf::CapturePhoto& photo : photos) {
            if (!apl_photo_id.empty() && photo.id != apl_photo_id) {
                continue;
            }
            const pf::SamplingGrid grid =
                pf::precompute_patch_grid(photo.cells, patch.rows(), patch.cols(),
                                          photo.image.rows, photo.image.cols);
            const pf::CompositeResult comp = pf::apply_patch(photo.image, patch, grid);
            pf::save_png(comp.image, out / ("composited_" + photo.id + ".png"));
            ++written;
        }
        if (written == 0) {
            pf::fail(pf::ErrorKind::InvalidArgument, "photo id not found: " + apl_photo_id);
        }
        std::printf("wrote %zu composited photos to %s\n", written, out.c_str());
        return 0;
    }

    if (cmd_eval->parsed()) {
        eval_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(ev_out);
        write_effective_config(out, "evaluate", capture);
        const pf::AlignmentTemplate tpl = resolve_template(ctx, ev_template);
        const auto photos = load_dataset(ctx, ev_data);
        const pf::ModelCheckpoint ckpt = pf::load_checkpoint(ctx.resolve(ev_model));
        const pf::EmbedNet net(ckpt);

        const pf::ImageTensor patch_img = pf::load_image(ctx.resolve(ev_patch));
        if (patch_img.channels != 1) {
            pf::fail(pf::ErrorKind::InvalidArgument, "patch must be grayscale");
        }
        pf::Patch patch;
        patch.image = patch_img;

        pf::PhotoSets sets;
        for (const pf::CapturePhoto* p : photos_of_class(photos, ev_class)) {
            auto& bucket = p->split == pf::Split::Train ? sets.train
                           : p->split == pf::Split::Val ? sets.val
                                                        : sets.test;
            bucket.push_back(
                pf::build_attack_photo(*p, patch.rows(), patch.cols(), tpl));
        }
        const auto gallery = ev_gallery.empty()
                                 ? pf::build_gallery(photos, ckpt, tpl, pf::Split::Train)
                                 : pf::load_gallery(ctx.resolve(ev_gallery));
        const pf::Embedding gt = find_gallery_class(gallery, ev_class).embedding;
        const std::optional<pf::Embedding> target =
            resolve_target(ev_target, gallery, gt, ev_class, nullptr);

        pf::EvaluationTable table = pf::evaluate_patch(patch, sets, net, gt, target);
        table.patch_name =
            ev_name.empty() ? fs::path(ev_patch).stem().string() : ev_name;
        pf::write_evaluation_csv(table, out / "eval.csv");
        const std::string text = pf::render_evaluation_text(table);
        std::ofstream(out / "eval.txt") << text << "\n";
        std::printf("%s\n", text.c_str());
        return 0;
    }

    if (cmd_report->parsed()) {
        report_opts.finalize(ctx.workspace, ctx.workspace_source, capture);
        const fs::path out = ctx.resolve(rp_out);
        write_effective_config(out, "report", capture);

        std::vector<pf::ReportRow> rows;
        for (const std::string& eval_path : rp_evals) {
            std::ifstream in(ctx.resolve(eval_path));
            if (!in) {
                pf::fail(pf::ErrorKind::MissingFile, "cannot open " + eval_path);
            }
            std::string line;
            std::getline(in, line); // header
            pf::EvaluationTable table;
            int seen = 0;
            while (std::getline(in, line)) {
                std::stringstream ss(line);
                std::string patch, attack, split, n, mg, sg, mt, st;
                std::getline(ss, patch, ',');
                std::getline(ss, attack, ',');
                std::getline(ss, split, ',');
                std::getline(ss, n, ',');
                std::getline(ss, mg, ',');
                std::getline(ss, sg, ',');
                std::getline(ss, mt, ',');
                std::getline(ss, st, ',');
                table.patch_name = patch;
                table.mode = parse_mode(attack);
                pf::SplitStats stats;
                stats.n = std::atoi(n.c_str());
                stats.mean_gt = std::atof(mg.c_str());
                if (!sg.empty()) stats.sem_gt = std::atof(sg.c_str());
                if (!mt.empty()) stats.mean_target = std::atof(mt.c_str());
                if (!st.empty()) stats.sem_target = std::atof(st.c_str());
                (split == "train" ? table.train : split == "val" ? table.val
                                                                 : table.test) = stats;
                ++seen;
            }
            if (seen != 3) {
                pf::fail(pf::ErrorKind::InvalidArgument,
                         eval_path + " does not hold train/val/test rows");
            }
            rows.push_back(pf::report_row_from(table));
        }
        pf::write_report(rows, {}, out);
        for (const std::string& trace_path : rp_traces) {
            const fs::path src = ctx.resolve(trace_path);
            fs::copy_file(src, out / ("trace_" + src.stem().string() + ".csv"),
                          fs::copy_options::overwrite_existing);
        }
        std::printf("wrote report for %zu evaluations to %s\n", rows.size(), out.c_str());
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const pf::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        const bool usage = e.kind() == pf::ErrorKind::InvalidArgument ||
                           e.kind() == pf::ErrorKind::MissingTarget;
        return usage ? 1 : 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
