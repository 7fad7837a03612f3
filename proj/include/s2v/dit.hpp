#pragma once

// Small diffusion transformer. The conditioned input sequence is
// [ref_1 ... ref_n, video] with full self-attention across the whole
// sequence, rotary positions from the configured placement variant, text via
// per-block cross-attention, and timestep conditioning through zero-initialized
// adaptive layer-norm modulation. The flow itself lives in raw patch space;
// the learned patch projection is part of the denoiser, so the network maps
// noisy patch tokens to velocity patch tokens of the same grid.

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2v/autodiff.hpp"
#include "s2v/optim.hpp"
#include "s2v/rng.hpp"
#include "s2v/rope.hpp"
#include "s2v/tensor.hpp"

namespace s2v {

template <class S>
struct VideoTokens {
    int64_t frames = 0;
    int64_t rows = 0;
    int64_t cols = 0;
    Tensor<S> tokens; // count() x dim

    int64_t count() const { return frames * rows * cols; }
    int64_t dim() const { return tokens.rank() == 2 ? tokens.extent(1) : 0; }
};

struct PatchSize {
    int64_t temporal = 1;
    int64_t spatial = 4;
};

struct DiTConfig {
    int64_t model_dim = 128;
    int64_t depth = 4;
    int64_t heads = 4;
    int64_t head_dim = 32;
    PatchSize patch;
    int64_t channels = 3;
    int64_t text_vocab_size = 64;
    int64_t text_dim = 64;
    int64_t max_refs = 3;
    RopeConfig rope = RopeConfig::proportional(32);
    RopeVariant variant = RopeVariant::ShiftWH;
    // Whether reference tokens receive the timestep scale/shift modulation
    // (residual gates always apply uniformly).
    bool modulate_reference_tokens = true;

    int64_t patch_dim() const { return channels * patch.temporal * patch.spatial * patch.spatial; }

    void validate() const {
        if (model_dim <= 0 || depth <= 0 || heads <= 0 || head_dim <= 0) {
            throw std::invalid_argument("dit: model_dim/depth/heads/head_dim must be positive");
        }
        if (model_dim != heads * head_dim) {
            throw std::invalid_argument("dit: model_dim " + std::to_string(model_dim) +
                                        " != heads*head_dim " + std::to_string(heads * head_dim));
        }
        if (patch.temporal <= 0 || patch.spatial <= 0 || channels <= 0) {
            throw std::invalid_argument("dit: patch extents and channels must be positive");
        }
        if (text_vocab_size <= 0 || text_dim <= 0 || max_refs < 0) {
            throw std::invalid_argument("dit: text vocab/dim and max_refs must be valid");
        }
        if (rope.head_dim != head_dim) {
            throw std::invalid_argument("dit: rope head_dim mismatch");
        }
        rope.validate();
    }
};

// ---------------------------------------------------------------------------
// patchify / unpatchify
// ---------------------------------------------------------------------------

// pixels: [frames, channels, height, width] -> raw patch tokens, row-major
// over the (t, h, w) grid. Patch payload order is (channel, dt, dy, dx).
// An optional projection matrix [patch_dim, out_dim] is applied when given.
template <class S>
VideoTokens<S> patchify(const Tensor<S>& pixels, PatchSize patch, const Tensor<S>* proj = nullptr) {
    if (pixels.rank() != 4) {
        throw std::invalid_argument("patchify: expected frames x channels x height x width, got " +
                                    shape_str(pixels.shape()));
    }
    int64_t frames = pixels.extent(0), channels = pixels.extent(1);
    int64_t height = pixels.extent(2), width = pixels.extent(3);
    int64_t pt = patch.temporal, ps = patch.spatial;
    if (frames % pt || height % ps || width % ps) {
        auto pad = [](int64_t e, int64_t p) { return (p - e % p) % p; };
        throw std::invalid_argument(
            "patchify: extents " + shape_str(pixels.shape()) + " not divisible by patch (" +
            std::to_string(pt) + ", " + std::to_string(ps) + "); required padding (frames, height, "
            "width) = (" + std::to_string(pad(frames, pt)) + ", " + std::to_string(pad(height, ps)) +
            ", " + std::to_string(pad(width, ps)) + ")");
    }
    VideoTokens<S> out;
    out.frames = frames / pt;
    out.rows = height / ps;
    out.cols = width / ps;
    int64_t pdim = channels * pt * ps * ps;
    out.tokens = Tensor<S>({out.count(), pdim});

    int64_t n = 0;
    for (int64_t t = 0; t < out.frames; ++t) {
        for (int64_t h = 0; h < out.rows; ++h) {
            for (int64_t w = 0; w < out.cols; ++w, ++n) {
                S* dst = out.tokens.data() + n * pdim;
                for (int64_t c = 0; c < channels; ++c) {
                    for (int64_t dt = 0; dt < pt; ++dt) {
                        for (int64_t dy = 0; dy < ps; ++dy) {
                            for (int64_t dx = 0; dx < ps; ++dx) {
                                int64_t f = t * pt + dt;
                                int64_t y = h * ps + dy;
                                int64_t x = w * ps + dx;
                                *dst++ = pixels[((f * channels + c) * height + y) * width + x];
                            }
                        }
                    }
                }
            }
        }
    }
    if (proj) {
        if (proj->rank() != 2 || proj->extent(0) != pdim) {
            throw std::invalid_argument("patchify: projection shape " + shape_str(proj->shape()) +
                                        " does not accept patch dim " + std::to_string(pdim));
        }
        out.tokens = matmul(out.tokens, *proj);
    }
    return out;
}

// Exact inverse of patchify's spatial arrangement; tokens must be in raw
// patch space (dim == channels * pt * ps * ps).
template <class S>
Tensor<S> unpatchify(const VideoTokens<S>& tokens, PatchSize patch, int64_t channels) {
    int64_t pt = patch.temporal, ps = patch.spatial;
    int64_t pdim = channels * pt * ps * ps;
    if (tokens.tokens.rank() != 2 || tokens.tokens.extent(0) != tokens.count() ||
        tokens.tokens.extent(1) != pdim) {
        throw std::invalid_argument("unpatchify: token grid " + std::to_string(tokens.frames) +
                                    "x" + std::to_string(tokens.rows) + "x" +
                                    std::to_string(tokens.cols) + " inconsistent with tensor " +
                                    shape_str(tokens.tokens.shape()));
    }
    int64_t frames = tokens.frames * pt;
    int64_t height = tokens.rows * ps;
    int64_t width = tokens.cols * ps;
    Tensor<S> pixels({frames, channels, height, width});
    int64_t n = 0;
    for (int64_t t = 0; t < tokens.frames; ++t) {
        for (int64_t h = 0; h < tokens.rows; ++h) {
            for (int64_t w = 0; w < tokens.cols; ++w, ++n) {
                const S* src = tokens.tokens.data() + n * pdim;
                for (int64_t c = 0; c < channels; ++c) {
                    for (int64_t dt = 0; dt < pt; ++dt) {
                        for (int64_t dy = 0; dy < ps; ++dy) {
                            for (int64_t dx = 0; dx < ps; ++dx) {
                                int64_t f = t * pt + dt;
                                int64_t y = h * ps + dy;
                                int64_t x = w * ps + dx;
                                pixels[((f * channels + c) * height + y) * width + x] = *src++;
                            }
                        }
                    }
                }
            }
        }
    }
    return pixels;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void init_normal(Tensor<S>& t, RngStream rs, double stddev) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rs.normal() * stddev);
}

} // namespace detail

// Deterministic init. Attention output and final projections start at zero
// along with every modulation head, so a fresh model predicts exactly the
// zero velocity bias.
template <class S>
ParamStore<S> dit_init_params(const DiTConfig& cfg, uint64_t seed) {
    cfg.validate();
    const int64_t d = cfg.model_dim;
    const int64_t pdim = cfg.patch_dim();
    const double std_w = 0.02;
    Rng rng(seed);
    ParamStore<S> ps;

    auto add_normal = [&](const std::string& name, Shape shape) {
        Tensor<S> t(std::move(shape));
        detail::init_normal(t, rng.stream("init", detail::fnv1a64(name)), std_w);
        ps.insert(name, std::move(t));
    };
    auto add_zero = [&](const std::string& name, Shape shape) {
        ps.insert(name, Tensor<S>(std::move(shape)));
    };

    add_normal("patch.w", {pdim, d});
    add_zero("patch.b", {d});
    add_normal("tmlp.w1", {d, d});
    add_zero("tmlp.b1", {d});
    add_normal("tmlp.w2", {d, d});
    add_zero("tmlp.b2", {d});
    add_normal("text.table", {cfg.text_vocab_size, cfg.text_dim});

    for (int64_t b = 0; b < cfg.depth; ++b) {
        std::string p = "blk" + std::to_string(b) + ".";
        add_normal(p + "attn.wq", {d, d});
        add_zero(p + "attn.bq", {d});
        add_normal(p + "attn.wk", {d, d});
        add_zero(p + "attn.bk", {d});
        add_normal(p + "attn.wv", {d, d});
        add_zero(p + "attn.bv", {d});
        add_zero(p + "attn.wo", {d, d});
        add_zero(p + "attn.bo", {d});

        add_normal(p + "xattn.wq", {d, d});
        add_zero(p + "xattn.bq", {d});
        add_normal(p + "xattn.wk", {cfg.text_dim, d});
        add_zero(p + "xattn.bk", {d});
        add_normal(p + "xattn.wv", {cfg.text_dim, d});
        add_zero(p + "xattn.bv", {d});
        add_zero(p + "xattn.wo", {d, d});
        add_zero(p + "xattn.bo", {d});

        add_normal(p + "mlp.w1", {d, 4 * d});
        add_zero(p + "mlp.b1", {4 * d});
        add_normal(p + "mlp.w2", {4 * d, d});
        add_zero(p + "mlp.b2", {d});

        add_zero(p + "mod.w", {d, 9 * d});
        add_zero(p + "mod.b", {9 * d});
    }
    add_zero("final.mod.w", {d, 2 * d});
    add_zero("final.mod.b", {2 * d});
    add_zero("final.w", {d, pdim});
    add_zero("final.b", {pdim});
    return ps;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

struct ForwardOptions {
    bool ref_time_zero = false;   // experimental temporal rule, see rope.hpp
    bool zero_rope_angles = false; // diagnostic: disable all position information
    bool track_input_grads = false; // make video/ref token leafs differentiable
    // Diagnostic: permutation applied to the assembled sequence (tokens and
    // positions together); the output is un-permuted before slicing.
    std::vector<int64_t> sequence_permutation;
};

template <class S>
struct ForwardResult {
    int output = -1;              // [video token count, patch_dim]
    int video_node = -1;          // leaf of the noisy video tokens
    std::vector<int> ref_nodes;   // leafs of the reference tokens
};

template <class S>
using ParamBindings = std::map<std::string, int>;

template <class S>
ParamBindings<S> bind_params(Tape<S>& tape, const ParamStore<S>& store, bool needs_grad = true) {
    ParamBindings<S> ids;
    for (const auto& [name, tensor] : store.params) {
        ids.emplace(name, tape.leaf(tensor, needs_grad));
    }
    return ids;
}

namespace detail {

// Sinusoidal embedding of the scalar timestep, constant wrt the tape.
template <class S>
Tensor<S> timestep_embedding(double t, int64_t dim) {
    Tensor<S> out({1, dim});
    int64_t half = dim / 2;
    for (int64_t k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                               static_cast<double>(half));
        double arg = t * 1000.0 * freq;
        out[k] = static_cast<S>(std::sin(arg));
        out[half + k] = static_cast<S>(std::cos(arg));
    }
    if (dim % 2) out[dim - 1] = S(0);
    return out;
}

// Row gather as a tape node; backward scatters.
template <class S>
int gather_rows(Tape<S>& tape, int x, std::vector<int64_t> idx) {
    const Tensor<S>& xv = tape.value(x);
    int64_t d = xv.extent(1);
    Tensor<S> out({static_cast<int64_t>(idx.size()), d});
    for (size_t i = 0; i < idx.size(); ++i) {
        const S* src = xv.data() + idx[i] * d;
        std::copy(src, src + d, out.data() + static_cast<int64_t>(i) * d);
    }
    return tape.custom(std::move(out), {x}, [x, idx = std::move(idx), d](Tape<S>& t, int self) {
        if (!t.node(x).needs_grad) return;
        const Tensor<S>& gc = t.grad(self);
        Tensor<S>& gx = t.grad_buf(x);
        for (size_t i = 0; i < idx.size(); ++i) {
            const S* src = gc.data() + static_cast<int64_t>(i) * d;
            S* dst = gx.data() + idx[i] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

// Multi-head attention core over tape nodes; q: [N, D], k/v: [M, D].
template <class S>
int attention(Tape<S>& tape, int q, int k, int v, int64_t heads, int64_t head_dim) {
    std::vector<int> outs;
    S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(head_dim)));
    for (int64_t h = 0; h < heads; ++h) {
        int qh = tape.slice_cols(q, h * head_dim, (h + 1) * head_dim);
        int kh = tape.slice_cols(k, h * head_dim, (h + 1) * head_dim);
        int vh = tape.slice_cols(v, h * head_dim, (h + 1) * head_dim);
        int scores = tape.scale(tape.matmul(qh, kh, false, true), inv_sqrt);
        int probs = tape.softmax_lastaxis(scores);
        outs.push_back(tape.matmul(probs, vh));
    }
    return tape.concat_cols(outs);
}

template <class S>
int linear(Tape<S>& tape, const ParamBindings<S>& pb, int x, const std::string& w,
           const std::string& b) {
    return tape.add_rowvec(tape.matmul(x, pb.at(w)), pb.at(b));
}

// Scale/shift modulation that optionally leaves the first `skip_rows` rows
// (reference tokens) untouched.
template <class S>
int modulate(Tape<S>& tape, int x, int scale_vec, int shift_vec, int64_t skip_rows) {
    if (skip_rows <= 0) return tape.rowwise_affine(x, scale_vec, shift_vec);
    const Tensor<S>& xv = tape.value(x);
    int64_t n = xv.extent(0);
    if (skip_rows >= n) return x;
    int head = tape.slice_rows(x, 0, skip_rows);
    int tail = tape.rowwise_affine(tape.slice_rows(x, skip_rows, n), scale_vec, shift_vec);
    return tape.concat_rows({head, tail});
}

} // namespace detail

// Forward pass on an existing tape. noisy_video and refs are raw patch
// tokens (dim == cfg.patch_dim()); refs must be single-frame grids. Returns
// the velocity prediction for the video tokens only.
template <class S>
ForwardResult<S> dit_forward(Tape<S>& tape, const ParamBindings<S>& pb, const DiTConfig& cfg,
                             const VideoTokens<S>& noisy_video,
                             const std::vector<VideoTokens<S>>& refs,
                             const std::vector<int64_t>& prompt_ids, double t,
                             const ForwardOptions& opt = {}) {
    cfg.validate();
    if (static_cast<int64_t>(refs.size()) > cfg.max_refs) {
        throw std::invalid_argument("dit_forward: " + std::to_string(refs.size()) +
                                    " references exceed max_refs " + std::to_string(cfg.max_refs));
    }
    if (t < 0.0 || t > 1.0) {
        throw std::invalid_argument("dit_forward: timestep " + std::to_string(t) +
                                    " outside [0, 1]");
    }
    if (prompt_ids.empty()) {
        throw std::invalid_argument("dit_forward: prompt must be non-empty");
    }
    const int64_t pdim = cfg.patch_dim();
    if (noisy_video.dim() != pdim || noisy_video.tokens.extent(0) != noisy_video.count()) {
        throw std::invalid_argument("dit_forward: video tokens " +
                                    shape_str(noisy_video.tokens.shape()) +
                                    " inconsistent with grid/patch config");
    }
    for (const auto& r : refs) {
        if (r.frames != 1 || r.dim() != pdim || r.tokens.extent(0) != r.count()) {
            throw std::invalid_argument("dit_forward: reference tokens must be single-frame grids "
                                        "in patch space");
        }
    }

    ForwardResult<S> res;

    // sequence geometry and rotary tables
    SequenceGeometry geom;
    for (const auto& r : refs) geom.refs.push_back({r.rows, r.cols});
    geom.video_frames = noisy_video.frames;
    geom.video_rows = noisy_video.rows;
    geom.video_cols = noisy_video.cols;
    std::vector<PositionTriple> positions = assemble_positions(geom, cfg.variant, opt.ref_time_zero);

    const int64_t n_ref = geom.ref_token_count();
    const int64_t n_vid = geom.video_token_count();
    const int64_t n_all = n_ref + n_vid;

    // optional diagnostic permutation of tokens and positions together
    std::vector<int64_t> perm = opt.sequence_permutation;
    std::vector<int64_t> inv_perm;
    if (!perm.empty()) {
        if (static_cast<int64_t>(perm.size()) != n_all) {
            throw std::invalid_argument("dit_forward: permutation length mismatch");
        }
        std::vector<PositionTriple> permuted(positions.size());
        inv_perm.resize(perm.size());
        for (size_t i = 0; i < perm.size(); ++i) {
            permuted[i] = positions[static_cast<size_t>(perm[i])];
            inv_perm[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
        }
        positions = std::move(permuted);
    }

    RopeConfig rope_cfg = cfg.rope;
    rope_cfg.zero_angles = opt.zero_rope_angles;
    auto rope_tab =
        std::make_shared<RopeTable<S>>(build_rope_table<S>(positions, rope_cfg));

    // input leafs
    std::vector<int> seq_parts;
    for (const auto& r : refs) {
        int id = tape.leaf(r.tokens, opt.track_input_grads);
        res.ref_nodes.push_back(id);
        seq_parts.push_back(id);
    }
    res.video_node = tape.leaf(noisy_video.tokens, opt.track_input_grads);
    seq_parts.push_back(res.video_node);
    int seq = seq_parts.size() == 1 ? seq_parts[0] : tape.concat_rows(seq_parts);

    if (!perm.empty()) {
        seq = detail::gather_rows(tape, seq, perm);
    }

    // shared patch embedding for video and reference tokens
    int h = detail::linear(tape, pb, seq, "patch.w", "patch.b");

    // timestep pathway
    int temb = tape.constant(detail::timestep_embedding<S>(t, cfg.model_dim));
    int tvec = detail::linear(tape, pb, tape.silu(detail::linear(tape, pb, temb, "tmlp.w1", "tmlp.b1")),
                              "tmlp.w2", "tmlp.b2");

    // prompt pathway
    int text = tape.embedding(pb.at("text.table"), prompt_ids);

    const int64_t d = cfg.model_dim;
    const int64_t skip = cfg.modulate_reference_tokens ? 0 : (perm.empty() ? n_ref : 0);

    for (int64_t b = 0; b < cfg.depth; ++b) {
        std::string p = "blk" + std::to_string(b) + ".";
        int mod = tape.add_rowvec(tape.matmul(tvec, pb.at(p + "mod.w")), pb.at(p + "mod.b"));
        auto mslice = [&](int64_t i) { return tape.slice_cols(mod, i * d, (i + 1) * d); };
        int sa_shift = mslice(0), sa_scale = mslice(1), sa_gate = mslice(2);
        int xa_shift = mslice(3), xa_scale = mslice(4), xa_gate = mslice(5);
        int ml_shift = mslice(6), ml_scale = mslice(7), ml_gate = mslice(8);

        // self-attention over [refs, video] with rotary positions
        int hn = detail::modulate(tape, tape.layer_norm(h), sa_scale, sa_shift, skip);
        int q = tape_apply_rope(tape, detail::linear(tape, pb, hn, p + "attn.wq", p + "attn.bq"),
                                rope_tab, cfg.heads);
        int k = tape_apply_rope(tape, detail::linear(tape, pb, hn, p + "attn.wk", p + "attn.bk"),
                                rope_tab, cfg.heads);
        int v = detail::linear(tape, pb, hn, p + "attn.wv", p + "attn.bv");
        int attn = detail::attention(tape, q, k, v, cfg.heads, cfg.head_dim);
        attn = detail::linear(tape, pb, attn, p + "attn.wo", p + "attn.bo");
        h = tape.add(h, tape.rowwise_scale(attn, sa_gate));

        // cross-attention to prompt tokens (no rotary positions on text)
        int hx = detail::modulate(tape, tape.layer_norm(h), xa_scale, xa_shift, skip);
        int qx = detail::linear(tape, pb, hx, p + "xattn.wq", p + "xattn.bq");
        int kx = detail::linear(tape, pb, text, p + "xattn.wk", p + "xattn.bk");
        int vx = detail::linear(tape, pb, text, p + "xattn.wv", p + "xattn.bv");
        int xout = detail::attention(tape, qx, kx, vx, cfg.heads, cfg.head_dim);
        xout = detail::linear(tape, pb, xout, p + "xattn.wo", p + "xattn.bo");
        h = tape.add(h, tape.rowwise_scale(xout, xa_gate));

        // mlp
        int hm = detail::modulate(tape, tape.layer_norm(h), ml_scale, ml_shift, skip);
        int m = detail::linear(tape, pb, tape.silu(detail::linear(tape, pb, hm, p + "mlp.w1", p + "mlp.b1")),
                               p + "mlp.w2", p + "mlp.b2");
        h = tape.add(h, tape.rowwise_scale(m, ml_gate));
    }

    if (!perm.empty()) {
        h = detail::gather_rows(tape, h, inv_perm);
    }

    // final layer on video tokens only; references are conditions, not targets
    int hv = tape.slice_rows(h, n_ref, n_all);
    int fmod = tape.add_rowvec(tape.matmul(tvec, pb.at("final.mod.w")), pb.at("final.mod.b"));
    int f_shift = tape.slice_cols(fmod, 0, d);
    int f_scale = tape.slice_cols(fmod, d, 2 * d);
    int out = tape.rowwise_affine(tape.layer_norm(hv), f_scale, f_shift);
    res.output = detail::linear(tape, pb, out, "final.w", "final.b");
    return res;
}

// Convenience wrapper: run a forward pass outside any training loop and
// return the predicted velocity tokens.
template <class S>
VideoTokens<S> dit_predict(const ParamStore<S>& params, const DiTConfig& cfg,
                           const VideoTokens<S>& noisy_video,
                           const std::vector<VideoTokens<S>>& refs,
                           const std::vector<int64_t>& prompt_ids, double t,
                           const ForwardOptions& opt = {}) {
    Tape<S> tape;
    auto pb = bind_params(tape, params, /*needs_grad=*/false);
    auto res = dit_forward(tape, pb, cfg, noisy_video, refs, prompt_ids, t, opt);
    VideoTokens<S> out;
    out.frames = noisy_video.frames;
    out.rows = noisy_video.rows;
    out.cols = noisy_video.cols;
    out.tokens = tape.value(res.output);
    return out;
}

} // namespace s2v
