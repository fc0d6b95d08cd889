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

#include "patchforge/embednet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

#include "patchforge/kernels.hpp"

namespace patchforge {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;
// Cosine logits are clamped away from the poles so the margin derivative
// c / sin(theta) stays bounded.
constexpr double kCosClamp = 1e-7;

/// mt19937_64 with hand-rolled transforms so sequences do not depend on the
/// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    size_t below(size_t n) { return static_cast<size_t>(eng_() % n); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void pad_planes(const double* src, int channels, int h, int w, std::vector<double>& dst) {
    const size_t pad_stride = static_cast<size_t>(w) + 2;
    const size_t pad_plane = static_cast<size_t>(h + 2) * pad_stride;
    dst.assign(pad_plane * channels, 0.0);
    for (int c = 0; c < channels; ++c) {
        const double* sp = src + static_cast<size_t>(c) * h * w;
        double* dp = dst.data() + static_cast<size_t>(c) * pad_plane;
        for (int y = 0; y < h; ++y) {
            std::memcpy(dp + static_cast<size_t>(y + 1) * pad_stride + 1,
                        sp + static_cast<size_t>(y) * w, sizeof(double) * w);
        }
    }
}

void maxpool2(const double* act, int channels, int h, int w, double* pooled,
              int32_t* argmax) {
    const int ph = h / 2;
    const int pw = w / 2;
    for (int c = 0; c < channels; ++c) {
        const double* plane = act + static_cast<size_t>(c) * h * w;
        const size_t plane_off = static_cast<size_t>(c) * h * w;
        double* pp = pooled + static_cast<size_t>(c) * ph * pw;
        int32_t* ap = argmax + static_cast<size_t>(c) * ph * pw;
        for (int py = 0; py < ph; ++py) {
            for (int px = 0; px < pw; ++px) {
                const size_t base = static_cast<size_t>(2 * py) * w + 2 * px;
                // ties resolve to the first candidate in scan order
                size_t best = base;
                double bv = plane[base];
                const size_t cand[3] = {base + 1, base + w, base + w + 1};
                for (size_t k = 0; k < 3; ++k) {
                    if (plane[cand[k]] > bv) {
                        bv = plane[cand[k]];
                        best = cand[k];
                    }
                }
                pp[static_cast<size_t>(py) * pw + px] = bv;
                ap[static_cast<size_t>(py) * pw + px] =
                    static_cast<int32_t>(plane_off + best);
            }
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Architecture / checkpoint layout

std::string Architecture::descriptor() const {
    std::ostringstream os;
    os << "input " << input_rows << " " << input_cols << " " << input_channels << "\n";
    for (const ConvShape& c : convs) {
        os << "conv3x3 " << c.in_c << " " << c.out_c << "\n";
        os << "lrelu " << format_double(lrelu_slope) << "\n";
        os << "maxpool2\n";
    }
    os << "dense " << dense_in << " " << dense_out << "\n";
    os << "l2norm\n";
    os << "centers " << num_classes << " " << dense_out << "\n";
    return os.str();
}

Architecture Architecture::parse_descriptor(const std::string& text) {
    Architecture arch;
    std::istringstream is(text);
    std::string line;
    enum class Stage { Input, Blocks, L2, Centers, Done } stage = Stage::Input;
    bool expect_lrelu = false, expect_pool = false;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "input") {
            if (stage != Stage::Input ||
                !(ls >> arch.input_rows >> arch.input_cols >> arch.input_channels)) {
                fail(ErrorKind::CorruptCheckpoint, "bad 'input' line in descriptor");
            }
            stage = Stage::Blocks;
        } else if (tok == "conv3x3") {
            ConvShape c;
            if (stage != Stage::Blocks || expect_lrelu || expect_pool ||
                !(ls >> c.in_c >> c.out_c)) {
                fail(ErrorKind::CorruptCheckpoint, "bad 'conv3x3' line in descriptor");
            }
            arch.convs.push_back(c);
            expect_lrelu = true;
        } else if (tok == "lrelu") {
            double slope = 0.0;
            if (!expect_lrelu || !(ls >> slope)) {
                fail(ErrorKind::CorruptCheckpoint, "bad 'lrelu' line in descriptor");
            }
            arch.lrelu_slope = slope;
            expect_lrelu = false;
            expect_pool = true;
        } else if (tok == "maxpool2") {
            if (!expect_pool) {
                fail(ErrorKind::CorruptCheckpoint, "bad 'maxpool2' line in descriptor");
            }
            expect_pool = false;
        } else if (tok == "dense") {
            if (stage != Stage::Blocks || expect_lrelu || expect_pool ||
                arch.convs.empty() || !(ls >> arch.dense_in >> arch.dense_out)) {
                fail(ErrorKind::CorruptCheckpoint, "bad 'dense' line in descriptor");
            }
            stage = Stage::L2;
        } else if (tok == "l2norm") {
            if (stage != Stage::L2) {
                fail(ErrorKind::CorruptCheckpoint, "misplaced 'l2norm' in descriptor");
            }
            stage = Stage::Centers;
        } else if (tok == "centers") {
            int d = 0;
            if (stage != Stage::Centers || !(ls >> arch.num_classes >> d) ||
                d != arch.dense_out) {
                fail(ErrorKind::CorruptCheckpoint, "bad 'centers' line in descriptor");
            }
            stage = Stage::Done;
        } else {
            fail(ErrorKind::CorruptCheckpoint, "unknown descriptor line: " + line);
        }
    }
    if (stage != Stage::Done) {
        fail(ErrorKind::CorruptCheckpoint, "incomplete architecture descriptor");
    }
    // consistency: channel chain and flatten size
    int rows = arch.input_rows, cols = arch.input_cols, ch = arch.input_channels;
    for (const ConvShape& c : arch.convs) {
        if (c.in_c != ch || c.out_c <= 0 || rows < 2 || cols < 2 || rows % 2 != 0 ||
            cols % 2 != 0) {
            fail(ErrorKind::CorruptCheckpoint, "inconsistent conv chain in descriptor");
        }
        ch = c.out_c;
        rows /= 2;
        cols /= 2;
    }
    if (arch.dense_in != ch * rows * cols || arch.dense_out <= 0 ||
        arch.num_classes < 0) {
        fail(ErrorKind::CorruptCheckpoint, "descriptor shapes are inconsistent");
    }
    return arch;
}

size_t Architecture::weight_count() const {
    size_t n = 0;
    for (const ConvShape& c : convs) {
        n += static_cast<size_t>(c.out_c) * c.in_c * 9 + c.out_c;
    }
    n += static_cast<size_t>(dense_out) * dense_in + dense_out;
    n += static_cast<size_t>(num_classes) * dense_out;
    return n;
}

size_t ModelCheckpoint::conv_w_offset(int block) const {
    size_t off = 0;
    for (int i = 0; i < block; ++i) {
        off += static_cast<size_t>(arch.convs[i].out_c) * arch.convs[i].in_c * 9 +
               arch.convs[i].out_c;
    }
    return off;
}

size_t ModelCheckpoint::conv_b_offset(int block) const {
    return conv_w_offset(block) +
           static_cast<size_t>(arch.convs[block].out_c) * arch.convs[block].in_c * 9;
}

size_t ModelCheckpoint::dense_w_offset() const {
    return conv_w_offset(static_cast<int>(arch.convs.size()));
}

size_t ModelCheckpoint::dense_b_offset() const {
    return dense_w_offset() + static_cast<size_t>(arch.dense_out) * arch.dense_in;
}

size_t ModelCheckpoint::centers_offset() const {
    return dense_b_offset() + arch.dense_out;
}

std::span<const double> ModelCheckpoint::centers() const {
    return {weights.data() + centers_offset(),
            static_cast<size_t>(arch.num_classes) * arch.dense_out};
}

std::span<double> ModelCheckpoint::centers() {
    return {weights.data() + centers_offset(),
            static_cast<size_t>(arch.num_classes) * arch.dense_out};
}

// ---------------------------------------------------------------------------
// Checkpoint IO

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
    std::string text = ckpt.arch.descriptor();
    for (const auto& [key, value] : ckpt.metadata) {
        text += "meta " + key + " " + value + "\n";
    }
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) {
        fail(ErrorKind::IoFailure, "cannot write " + path.string());
    }
    bool ok = std::fwrite(kMagic, 1, 4, f) == 4;
    const uint32_t version = ckpt.version;
    const uint32_t len = static_cast<uint32_t>(text.size());
    ok = ok && std::fwrite(&version, sizeof(version), 1, f) == 1;
    ok = ok && std::fwrite(&len, sizeof(len), 1, f) == 1;
    ok = ok && std::fwrite(text.data(), 1, text.size(), f) == text.size();
    ok = ok && std::fwrite(ckpt.weights.data(), sizeof(double), ckpt.weights.size(), f) ==
                   ckpt.weights.size();
    if (std::fclose(f) != 0 || !ok) {
        fail(ErrorKind::IoFailure, "failed to write " + path.string());
    }
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f == nullptr) {
        fail(ErrorKind::MissingFile, "cannot open " + path.string());
    }
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        fail(ErrorKind::CorruptCheckpoint, "bad magic in " + path.string());
    }
    uint32_t version = 0, len = 0;
    if (std::fread(&version, sizeof(version), 1, f) != 1) {
        fail(ErrorKind::CorruptCheckpoint, "truncated header in " + path.string());
    }
    if (version != kVersion) {
        fail(ErrorKind::UnsupportedVersion,
             "checkpoint version " + std::to_string(version) + " in " + path.string());
    }
    if (std::fread(&len, sizeof(len), 1, f) != 1 || len == 0 || len > (1u << 20)) {
        fail(ErrorKind::CorruptCheckpoint, "bad descriptor length in " + path.string());
    }
    std::string text(len, '\0');
    if (std::fread(text.data(), 1, len, f) != len) {
        fail(ErrorKind::CorruptCheckpoint, "truncated descriptor in " + path.string());
    }

    ModelCheckpoint ckpt;
    ckpt.version = version;
    std::string arch_text;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("meta ", 0) == 0) {
            const size_t sp = line.find(' ', 5);
            if (sp == std::string::npos) {
                fail(ErrorKind::CorruptCheckpoint, "bad meta line in " + path.string());
            }
            ckpt.metadata[line.substr(5, sp - 5)] = line.substr(sp + 1);
        } else {
            arch_text += line;
            arch_text += '\n';
        }
    }
    ckpt.arch = Architecture::parse_descriptor(arch_text);

    const size_t count = ckpt.arch.weight_count();
    ckpt.weights.resize(count);
    if (std::fread(ckpt.weights.data(), sizeof(double), count, f) != count) {
        fail(ErrorKind::CorruptCheckpoint, "truncated weights in " + path.string());
    }
    char extra;
    if (std::fread(&extra, 1, 1, f) == 1) {
        fail(ErrorKind::CorruptCheckpoint, "trailing bytes in " + path.string());
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void validate_config(const EmbedNetConfig& config) {
    if (config.input_rows <= 0 || config.input_cols <= 0 ||
        (config.input_channels != 1 && config.input_channels != 3) ||
        config.embed_dim <= 0 || config.conv_channels.empty()) {
        fail(ErrorKind::InvalidArgument, "embed net dimensions must be positive");
    }
    if (!(config.margin >= 0.0 && config.margin < 1.5707963267948966)) {
        fail(ErrorKind::InvalidArgument, "margin must lie in [0, pi/2)");
    }
    if (!(config.scale > 0.0)) {
        fail(ErrorKind::InvalidArgument, "scale must be positive");
    }
    int rows = config.input_rows, cols = config.input_cols;
    for (size_t i = 0; i < config.conv_channels.size(); ++i) {
        if (config.conv_channels[i] <= 0 || rows % 2 != 0 || cols % 2 != 0) {
            fail(ErrorKind::InvalidArgument,
                 "input size must halve cleanly through every conv block");
        }
        rows /= 2;
        cols /= 2;
    }
}

} // namespace

ModelCheckpoint make_initial_checkpoint(const EmbedNetConfig& config, int num_classes) {
    validate_config(config);
    if (num_classes < 0) {
        fail(ErrorKind::InvalidArgument, "num_classes must be >= 0");
    }
    ModelCheckpoint ckpt;
    Architecture& arch = ckpt.arch;
    arch.input_rows = config.input_rows;
    arch.input_cols = config.input_cols;
    arch.input_channels = config.input_channels;
    arch.lrelu_slope = config.lrelu_slope;
    int ch = config.input_channels;
    int rows = config.input_rows, cols = config.input_cols;
    for (int out_c : config.conv_channels) {
        arch.convs.push_back({ch, out_c});
        ch = out_c;
        rows /= 2;
        cols /= 2;
    }
    arch.dense_in = ch * rows * cols;
    arch.dense_out = config.embed_dim;
    arch.num_classes = num_classes;

    ckpt.weights.assign(arch.weight_count(), 0.0);
    Rng rng(config.seed);
    for (size_t b = 0; b < arch.convs.size(); ++b) {
        const ConvShape& c = arch.convs[b];
        const double stddev = std::sqrt(2.0 / (c.in_c * 9));
        double* w = ckpt.weights.data() + ckpt.conv_w_offset(static_cast<int>(b));
        for (size_t i = 0; i < static_cast<size_t>(c.out_c) * c.in_c * 9; ++i) {
            w[i] = rng.normal() * stddev;
        }
    }
    {
        const double stddev = std::sqrt(2.0 / arch.dense_in);
        double* w = ckpt.weights.data() + ckpt.dense_w_offset();
        for (size_t i = 0; i < static_cast<size_t>(arch.dense_out) * arch.dense_in; ++i) {
            w[i] = rng.normal() * stddev;
        }
    }
    if (num_classes > 0) {
        std::span<double> centers = ckpt.centers();
        for (int j = 0; j < num_classes; ++j) {
            double* row = centers.data() + static_cast<size_t>(j) * arch.dense_out;
            double norm2 = 0.0;
            for (int t = 0; t < arch.dense_out; ++t) {
                row[t] = rng.normal();
                norm2 += row[t] * row[t];
            }
            const double inv = 1.0 / std::sqrt(norm2);
            for (int t = 0; t < arch.dense_out; ++t) {
                row[t] *= inv;
            }
        }
    }
    ckpt.metadata["seed"] = std::to_string(config.seed);
    ckpt.metadata["margin"] = format_double(config.margin);
    ckpt.metadata["scale"] = format_double(config.scale);
    return ckpt;
}

// ---------------------------------------------------------------------------
// Forward / backward

EmbedNet::EmbedNet(const ModelCheckpoint& ckpt) : ckpt_(ckpt), arch_(ckpt.arch) {
    int rows = arch_.input_rows, cols = arch_.input_cols;
    for (size_t i = 0; i < arch_.convs.size(); ++i) {
        block_rows_.push_back(rows);
        block_cols_.push_back(cols);
        rows /= 2;
        cols /= 2;
    }
    if (ckpt_.weights.size() != arch_.weight_count()) {
        fail(ErrorKind::CorruptCheckpoint, "weight array does not match architecture");
    }
}

Embedding EmbedNet::forward(const ImageTensor& image, Workspace& ws) const {
    require_shape(image, arch_.input_rows, arch_.input_cols, arch_.input_channels,
                  "embed net input");
    const auto& k = kernels::active();
    const size_t nblocks = arch_.convs.size();
    ws.pad.resize(nblocks);
    ws.pre.resize(nblocks);
    ws.act.resize(nblocks);
    ws.pooled.resize(nblocks);
    ws.argmax.resize(nblocks);

    // pixels enter zero-centered; an all-positive input range feeds a large
    // common activation component through lrelu+maxpool that swamps the
    // embedding geometry
    ws.centered.resize(image.size());
    for (size_t i = 0; i < image.size(); ++i) {
        ws.centered[i] = image.data[i] - 0.5;
    }

    const double* cur = ws.centered.data();
    for (size_t i = 0; i < nblocks; ++i) {
        const ConvShape& c = arch_.convs[i];
        const int h = block_rows_[i];
        const int w = block_cols_[i];
        pad_planes(cur, c.in_c, h, w, ws.pad[i]);
        const size_t act_size = static_cast<size_t>(c.out_c) * h * w;
        ws.pre[i].resize(act_size);
        ws.act[i].resize(act_size);
        ws.pooled[i].resize(act_size / 4);
        ws.argmax[i].resize(act_size / 4);
        k.conv3x3_fwd(ws.pad[i].data(), c.in_c, h, w,
                      ckpt_.weights.data() + ckpt_.conv_w_offset(static_cast<int>(i)),
                      ckpt_.weights.data() + ckpt_.conv_b_offset(static_cast<int>(i)),
                      c.out_c, ws.pre[i].data());
        k.lrelu_fwd(ws.pre[i].data(), ws.act[i].data(), act_size, arch_.lrelu_slope);
        maxpool2(ws.act[i].data(), c.out_c, h, w, ws.pooled[i].data(),
                 ws.argmax[i].data());
        cur = ws.pooled[i].data();
    }

    ws.pre_norm.resize(arch_.dense_out);
    const double* dense_w = ckpt_.weights.data() + ckpt_.dense_w_offset();
    const double* dense_b = ckpt_.weights.data() + ckpt_.dense_b_offset();
    for (int o = 0; o < arch_.dense_out; ++o) {
        ws.pre_norm[o] =
            dense_b[o] + k.dot(dense_w + static_cast<size_t>(o) * arch_.dense_in, cur,
                               arch_.dense_in);
    }
    ws.norm = std::sqrt(k.dot(ws.pre_norm.data(), ws.pre_norm.data(), arch_.dense_out));
    if (!(ws.norm > 0.0)) {
        fail(ErrorKind::InvalidArgument, "pre-normalization embedding has zero norm");
    }
    ws.embedding.resize(arch_.dense_out);
    const double inv_norm = 1.0 / ws.norm;
    for (int o = 0; o < arch_.dense_out; ++o) {
        ws.embedding[o] = ws.pre_norm[o] * inv_norm;
    }
    Embedding e;
    e.v = ws.embedding;
    return e;
}

ImageTensor EmbedNet::backward(const Workspace& ws, std::span<const double> upstream,
                               std::vector<double>* param_grads) const {
    if (upstream.size() != static_cast<size_t>(arch_.dense_out)) {
        fail(ErrorKind::ShapeMismatch, "upstream gradient has wrong dimension");
    }
    if (param_grads != nullptr && param_grads->size() != ckpt_.weights.size()) {
        fail(ErrorKind::ShapeMismatch, "parameter gradient buffer has wrong size");
    }
    const auto& k = kernels::active();
    const size_t nblocks = arch_.convs.size();

    // L2-normalization Jacobian: du = (g - e <e,g>) / ||u||
    std::vector<double> du(arch_.dense_out);
    const double ip = k.dot(ws.embedding.data(), upstream.data(), arch_.dense_out);
    const double inv_norm = 1.0 / ws.norm;
    for (int o = 0; o < arch_.dense_out; ++o) {
        du[o] = (upstream[o] - ws.embedding[o] * ip) * inv_norm;
    }

    // dense layer
    const double* dense_w = ckpt_.weights.data() + ckpt_.dense_w_offset();
    const double* dense_x = ws.pooled.back().data();
    std::vector<double> grad(static_cast<size_t>(arch_.dense_in), 0.0);
    for (int o = 0; o < arch_.dense_out; ++o) {
        k.axpy(du[o], dense_w + static_cast<size_t>(o) * arch_.dense_in, grad.data(),
               arch_.dense_in);
    }
    if (param_grads != nullptr) {
        double* dw = param_grads->data() + ckpt_.dense_w_offset();
        double* db = param_grads->data() + ckpt_.dense_b_offset();
        for (int o = 0; o < arch_.dense_out; ++o) {
            k.axpy(du[o], dense_x, dw + static_cast<size_t>(o) * arch_.dense_in,
                   arch_.dense_in);
            db[o] += du[o];
        }
    }

    // conv blocks, last to first
    std::vector<double> gact, gpad, gin;
    for (size_t bi = nblocks; bi-- > 0;) {
        const ConvShape& c = arch_.convs[bi];
        const int h = block_rows_[bi];
        const int w = block_cols_[bi];
        const size_t act_size = static_cast<size_t>(c.out_c) * h * w;

        // maxpool backward: route pooled gradients to their argmax source
        gact.assign(act_size, 0.0);
        const std::vector<int32_t>& amax = ws.argmax[bi];
        for (size_t p = 0; p < amax.size(); ++p) {
            gact[amax[p]] += grad[p];
        }
        // lrelu backward, in place over gact
        k.lrelu_bwd(ws.pre[bi].data(), gact.data(), gact.data(), act_size,
                    arch_.lrelu_slope);

        if (param_grads != nullptr) {
            const size_t pad_stride = static_cast<size_t>(w) + 2;
            const size_t pad_plane = static_cast<size_t>(h + 2) * pad_stride;
            double* dw = param_grads->data() + ckpt_.conv_w_offset(static_cast<int>(bi));
            double* db = param_grads->data() + ckpt_.conv_b_offset(static_cast<int>(bi));
            for (int co = 0; co < c.out_c; ++co) {
                const double* gplane = gact.data() + static_cast<size_t>(co) * h * w;
                for (int ci = 0; ci < c.in_c; ++ci) {
                    const double* in_plane =
                        ws.pad[bi].data() + static_cast<size_t>(ci) * pad_plane;
                    double* wk = dw + (static_cast<size_t>(co) * c.in_c + ci) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            wk[ky * 3 + kx] += k.dot2d(
                                gplane, w,
                                in_plane + static_cast<size_t>(ky) * pad_stride + kx,
                                pad_stride, h, w);
                        }
                    }
                }
                db[co] += k.sum2d(gplane, w, h, w);
            }
        }

        // input gradient through the conv
        pad_planes(gact.data(), c.out_c, h, w, gpad);
        gin.assign(static_cast<size_t>(c.in_c) * h * w, 0.0);
        k.conv3x3_bwd_input(gpad.data(), c.out_c, h, w,
                            ckpt_.weights.data() +
                                ckpt_.conv_w_offset(static_cast<int>(bi)),
                            c.in_c, gin.data());
        grad.swap(gin);
    }

    ImageTensor pixel_grad(arch_.input_rows, arch_.input_cols, arch_.input_channels);
    pixel_grad.data = std::move(grad);
    return pixel_grad;
}

Embedding forward_embed(const ImageTensor& image, const ModelCheckpoint& ckpt) {
    EmbedNet net(ckpt);
    EmbedNet::Workspace ws;
    return net.forward(image, ws);
}

ImageTensor backward_to_pixels(const ImageTensor& image, const ModelCheckpoint& ckpt,
                               std::span<const double> upstream) {
    EmbedNet net(ckpt);
    EmbedNet::Workspace ws;
    net.forward(image, ws);
    return net.backward(ws, upstream);
}

// ---------------------------------------------------------------------------
// Margin loss

ArcfaceResult arcface_margin_loss(std::span<const double> embedding, int label,
                                  std::span<const double> centers, int num_classes,
                                  double scale, double margin) {
    const int d = static_cast<int>(embedding.size());
    if (label < 0 || label >= num_classes) {
        fail(ErrorKind::InvalidLabel,
             "label " + std::to_string(label) + " outside [0, " +
                 std::to_string(num_classes) + ")");
    }
    if (centers.size() != static_cast<size_t>(num_classes) * d) {
        fail(ErrorKind::ShapeMismatch, "center matrix does not match embedding dim");
    }
    const auto& k = kernels::active();

    std::vector<double> cos(num_classes);
    for (int j = 0; j < num_classes; ++j) {
        cos[j] = k.dot(centers.data() + static_cast<size_t>(j) * d, embedding.data(), d);
    }

    const double cy = std::clamp(cos[label], -1.0 + kCosClamp, 1.0 - kCosClamp);
    const double sin_y = std::sqrt(std::max(0.0, 1.0 - cy * cy));
    const double cos_m = std::cos(margin);
    const double sin_m = std::sin(margin);
    double phi, dphi;
    if (cy >= 0.0) {
        // cos(theta + margin); theta + margin < pi holds on this branch
        phi = cy * cos_m - sin_y * sin_m;
        dphi = cos_m + cy / std::max(sin_y, 1e-12) * sin_m;
    } else {
        // Past 90 degrees the logit stays unmargined (easy margin). Extending
        // cos(theta+m) with a linear tail puts an attractor at theta = pi
        // that captures embeddings during cold-start training.
        phi = cy;
        dphi = 1.0;
    }

    std::vector<double> z(num_classes);
    for (int j = 0; j < num_classes; ++j) {
        z[j] = scale * cos[j];
    }
    z[label] = scale * phi;

    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (int j = 0; j < num_classes; ++j) {
        denom += std::exp(z[j] - zmax);
    }

    ArcfaceResult result;
    result.loss = std::log(denom) - (z[label] - zmax);
    result.grad_embedding.assign(d, 0.0);
    result.grad_centers.assign(static_cast<size_t>(num_classes) * d, 0.0);
    for (int j = 0; j < num_classes; ++j) {
        const double p = std::exp(z[j] - zmax) / denom;
        const double dz = p - (j == label ? 1.0 : 0.0);
        const double coef = dz * scale * (j == label ? dphi : 1.0);
        k.axpy(coef, centers.data() + static_cast<size_t>(j) * d,
               result.grad_embedding.data(), d);
        k.axpy(coef, embedding.data(),
               result.grad_centers.data() + static_cast<size_t>(j) * d, d);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Training

double nearest_center_accuracy(const ModelCheckpoint& ckpt, const TrainDataset& dataset) {
    const auto& k = kernels::active();
    EmbedNet net(ckpt);
    EmbedNet::Workspace ws;
    std::span<const double> centers = ckpt.centers();
    const int d = ckpt.arch.dense_out;
    size_t correct = 0;
    for (size_t i = 0; i < dataset.images.size(); ++i) {
        const Embedding e = net.forward(dataset.images[i], ws);
        int best = 0;
        double best_cos = -2.0;
        for (int j = 0; j < ckpt.arch.num_classes; ++j) {
            const double c = k.dot(centers.data() + static_cast<size_t>(j) * d,
                                   e.v.data(), d);
            if (c > best_cos) {
                best_cos = c;
                best = j;
            }
        }
        if (best == dataset.labels[i]) {
            ++correct;
        }
    }
    return dataset.images.empty()
               ? 0.0
               : static_cast<double>(correct) / static_cast<double>(dataset.images.size());
}

ModelCheckpoint train_target(const TrainDataset& dataset, const EmbedNetConfig& config,
                             const TrainOptions& options) {
    validate_config(config);
    if (dataset.images.size() != dataset.labels.size()) {
        fail(ErrorKind::InvalidArgument, "images and labels differ in length");
    }
    int num_classes = dataset.num_classes;
    for (int label : dataset.labels) {
        if (label < 0) {
            fail(ErrorKind::InvalidLabel, "negative class label");
        }
        num_classes = std::max(num_classes, label + 1);
    }
    std::vector<size_t> per_class(num_classes, 0);
    for (int label : dataset.labels) {
        ++per_class[label];
    }
    size_t present = 0;
    for (size_t n : per_class) {
        if (n > 0) {
            ++present;
            if (n < 10) {
                fail(ErrorKind::DatasetTooSmall, "every identity needs >= 10 images");
            }
        }
    }
    if (present < 2) {
        fail(ErrorKind::DatasetTooSmall, "need >= 2 identities");
    }

    ModelCheckpoint ckpt = make_initial_checkpoint(config, num_classes);
    EmbedNet net(ckpt);
    EmbedNet::Workspace ws;
    std::vector<double> grads(ckpt.weights.size(), 0.0);
    std::vector<double> velocity(ckpt.weights.size(), 0.0);
    const size_t centers_off = ckpt.centers_offset();
    const int d = ckpt.arch.dense_out;

    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<size_t> order(dataset.images.size());
    std::iota(order.begin(), order.end(), size_t{0});

    double best_accuracy = 0.0;
    const int batch = std::max(1, options.batch_size);
    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        const double margin =
            options.margin_warmup_epochs > 0 && epoch <= options.margin_warmup_epochs
                ? config.margin * (epoch - 1) / options.margin_warmup_epochs
                : config.margin;
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += batch) {
            const size_t end = std::min(order.size(), start + batch);
            std::fill(grads.begin(), grads.end(), 0.0);
            for (size_t bi = start; bi < end; ++bi) {
                const size_t idx = order[bi];
                const Embedding e = net.forward(dataset.images[idx], ws);
                const ArcfaceResult r = arcface_margin_loss(
                    e.v, dataset.labels[idx], ckpt.centers(), num_classes, config.scale,
                    margin);
                epoch_loss += r.loss;
                net.backward(ws, r.grad_embedding, &grads);
                kernels::active().axpy(1.0, r.grad_centers.data(),
                                       grads.data() + centers_off, r.grad_centers.size());
            }
            const double inv_b = 1.0 / static_cast<double>(end - start);
            for (size_t i = 0; i < grads.size(); ++i) {
                velocity[i] = options.momentum * velocity[i] -
                              options.learning_rate * (grads[i] * inv_b);
                ckpt.weights[i] += velocity[i];
            }
            // keep center rows on the unit sphere
            std::span<double> centers = ckpt.centers();
            for (int j = 0; j < num_classes; ++j) {
                double* row = centers.data() + static_cast<size_t>(j) * d;
                const double norm =
                    std::sqrt(kernels::active().dot(row, row, d));
                if (norm > 1e-30) {
                    const double inv = 1.0 / norm;
                    for (int t = 0; t < d; ++t) {
                        row[t] *= inv;
                    }
                }
            }
        }
        const double accuracy = nearest_center_accuracy(ckpt, dataset);
        best_accuracy = std::max(best_accuracy, accuracy);
        if (options.verbose) {
            std::fprintf(stderr, "epoch %d: loss %.4f, accuracy %.4f\n", epoch,
                         epoch_loss / static_cast<double>(dataset.images.size()),
                         accuracy);
        }
        if (epoch >= options.min_epochs && accuracy >= options.accuracy_gate) {
            ckpt.metadata["epochs_run"] = std::to_string(epoch);
            ckpt.metadata["train_accuracy"] = format_double(accuracy);
            return ckpt;
        }
    }
    fail(ErrorKind::NonConvergence,
         "accuracy gate " + format_double(options.accuracy_gate) +
             " not reached in " + std::to_string(options.epochs) +
             " epochs; best accuracy " + format_double(best_accuracy));
}

} // namespace patchforge
