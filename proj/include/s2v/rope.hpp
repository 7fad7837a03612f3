#pragma once

// 3D rotary positional encoding for video token grids, with four placement
// schemes for reference-image tokens. Video tokens get (t, h, w) starting at
// zero; reference tokens are shifted past the grid's maximum extents and/or
// appended on the timeline, which is the mechanism under test in the
// variant ablation.

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2v/autodiff.hpp"
#include "s2v/tensor.hpp"

namespace s2v {

struct PositionTriple {
    int64_t t = 0;
    int64_t h = 0;
    int64_t w = 0;

    bool operator==(const PositionTriple&) const = default;
};

enum class RopeVariant { Concat, ShiftW, ShiftH, ShiftWH };

inline const char* rope_variant_name(RopeVariant v) {
    switch (v) {
        case RopeVariant::Concat: return "concat";
        case RopeVariant::ShiftW: return "shift_w";
        case RopeVariant::ShiftH: return "shift_h";
        case RopeVariant::ShiftWH: return "shift_wh";
    }
    throw std::invalid_argument("bad rope variant");
}

inline RopeVariant rope_variant_from_name(const std::string& s) {
    if (s == "concat") return RopeVariant::Concat;
    if (s == "shift_w") return RopeVariant::ShiftW;
    if (s == "shift_h") return RopeVariant::ShiftH;
    if (s == "shift_wh") return RopeVariant::ShiftWH;
    throw std::invalid_argument("unknown rope variant '" + s +
                                "' (expected concat|shift_w|shift_h|shift_wh)");
}

struct RopeConfig {
    int64_t head_dim = 32;
    int64_t dim_t = 8;  // sub-dimension rotated by the frame index
    int64_t dim_h = 12; // sub-dimension rotated by the row index
    int64_t dim_w = 12; // sub-dimension rotated by the column index
    double base = 10000.0;

    // Experimental reading of the temporal rule: t = 0 for every reference
    // image instead of t = i - 1. Off by default.
    bool ref_time_zero = false;
    // Diagnostic: force every rotation angle to zero.
    bool zero_angles = false;

    void validate() const {
        if (head_dim <= 0 || head_dim % 2 != 0) {
            throw std::invalid_argument("rope: head_dim must be even and positive");
        }
        if (dim_t < 0 || dim_h < 0 || dim_w < 0 || dim_t % 2 || dim_h % 2 || dim_w % 2) {
            throw std::invalid_argument("rope: axis sub-dimensions must be even and non-negative");
        }
        if (dim_t + dim_h + dim_w != head_dim) {
            throw std::invalid_argument("rope: axis split " + std::to_string(dim_t) + "+" +
                                        std::to_string(dim_h) + "+" + std::to_string(dim_w) +
                                        " != head_dim " + std::to_string(head_dim));
        }
        if (base <= 0) throw std::invalid_argument("rope: base must be positive");
    }

    // 2:3:3 proportional split rounded down to even, remainder to the
    // temporal axis.
    static RopeConfig proportional(int64_t head_dim, double base = 10000.0) {
        if (head_dim <= 0 || head_dim % 2 != 0) {
            throw std::invalid_argument("rope: head_dim must be even and positive");
        }
        RopeConfig c;
        c.head_dim = head_dim;
        c.base = base;
        auto even_floor = [](int64_t x) { return x - (x % 2); };
        c.dim_h = even_floor(head_dim * 3 / 8);
        c.dim_w = c.dim_h;
        c.dim_t = head_dim - c.dim_h - c.dim_w;
        c.validate();
        return c;
    }
};

// Row-major enumeration over (t, h, w), all starting at zero; matches the
// token order produced by patchify.
inline std::vector<PositionTriple> video_positions(int64_t frames, int64_t rows, int64_t cols) {
    if (frames < 1 || rows < 1 || cols < 1) {
        throw std::invalid_argument("video_positions: extents must be >= 1, got (" +
                                    std::to_string(frames) + ", " + std::to_string(rows) + ", " +
                                    std::to_string(cols) + ")");
    }
    std::vector<PositionTriple> out;
    out.reserve(static_cast<size_t>(frames * rows * cols));
    for (int64_t t = 0; t < frames; ++t)
        for (int64_t h = 0; h < rows; ++h)
            for (int64_t w = 0; w < cols; ++w) out.push_back({t, h, w});
    return out;
}

// Positions for the i-th reference image (1-based), token grid r x c.
// H_max / W_max are the video token-grid extents of the current sample.
inline std::vector<PositionTriple> reference_positions(int64_t image_index, int64_t ref_rows,
                                                       int64_t ref_cols, int64_t h_max,
                                                       int64_t w_max, RopeVariant variant,
                                                       int64_t video_frames,
                                                       bool ref_time_zero = false) {
    if (image_index < 1) {
        throw std::invalid_argument("reference_positions: image_index must be >= 1, got " +
                                    std::to_string(image_index));
    }
    if (ref_rows < 1 || ref_cols < 1 || h_max < 1 || w_max < 1 || video_frames < 1) {
        throw std::invalid_argument("reference_positions: extents must be >= 1");
    }
    int64_t t = ref_time_zero ? 0 : image_index - 1;
    int64_t h0 = 0, w0 = 0;
    switch (variant) {
        case RopeVariant::Concat:
            // The baseline continues the video timeline, spatial from zero.
            t = ref_time_zero ? video_frames : video_frames + (image_index - 1);
            break;
        case RopeVariant::ShiftW:
            w0 = w_max;
            break;
        case RopeVariant::ShiftH:
            h0 = h_max;
            break;
        case RopeVariant::ShiftWH:
            h0 = h_max;
            w0 = w_max;
            break;
    }
    std::vector<PositionTriple> out;
    out.reserve(static_cast<size_t>(ref_rows * ref_cols));
    for (int64_t h = 0; h < ref_rows; ++h)
        for (int64_t w = 0; w < ref_cols; ++w) out.push_back({t, h0 + h, w0 + w});
    return out;
}

// Token-grid extents of one sample: n reference images followed by the video.
struct SequenceGeometry {
    struct RefGrid {
        int64_t rows = 0;
        int64_t cols = 0;
    };
    std::vector<RefGrid> refs;
    int64_t video_frames = 0;
    int64_t video_rows = 0;
    int64_t video_cols = 0;

    int64_t ref_token_count() const {
        int64_t n = 0;
        for (const auto& r : refs) n += r.rows * r.cols;
        return n;
    }
    int64_t video_token_count() const { return video_frames * video_rows * video_cols; }
    int64_t total_token_count() const { return ref_token_count() + video_token_count(); }
};

// Positions for the full input sequence [ref_1 ... ref_n, video].
inline std::vector<PositionTriple> assemble_positions(const SequenceGeometry& geom,
                                                      RopeVariant variant,
                                                      bool ref_time_zero = false) {
    std::vector<PositionTriple> out;
    out.reserve(static_cast<size_t>(geom.total_token_count()));
    for (size_t i = 0; i < geom.refs.size(); ++i) {
        auto p = reference_positions(static_cast<int64_t>(i) + 1, geom.refs[i].rows,
                                     geom.refs[i].cols, geom.video_rows, geom.video_cols, variant,
                                     geom.video_frames, ref_time_zero);
        out.insert(out.end(), p.begin(), p.end());
    }
    auto v = video_positions(geom.video_frames, geom.video_rows, geom.video_cols);
    out.insert(out.end(), v.begin(), v.end());
    return out;
}

// Precomputed cos/sin per token and rotation pair. Layout matches the
// head_dim axis: [t pairs | h pairs | w pairs], adjacent-element pairing.
template <class S>
struct RopeTable {
    int64_t tokens = 0;
    int64_t half_dim = 0; // head_dim / 2
    std::vector<S> cos_v;  // tokens x half_dim
    std::vector<S> sin_v;
};

template <class S>
RopeTable<S> build_rope_table(const std::vector<PositionTriple>& positions,
                              const RopeConfig& cfg) {
    cfg.validate();
    RopeTable<S> tab;
    tab.tokens = static_cast<int64_t>(positions.size());
    tab.half_dim = cfg.head_dim / 2;
    tab.cos_v.resize(static_cast<size_t>(tab.tokens * tab.half_dim));
    tab.sin_v.resize(static_cast<size_t>(tab.tokens * tab.half_dim));

    struct AxisSlice {
        int64_t pairs;
        int64_t pos_sel; // 0 = t, 1 = h, 2 = w
    };
    const AxisSlice slices[3] = {{cfg.dim_t / 2, 0}, {cfg.dim_h / 2, 1}, {cfg.dim_w / 2, 2}};

    for (int64_t n = 0; n < tab.tokens; ++n) {
        const PositionTriple& p = positions[static_cast<size_t>(n)];
        const double pos[3] = {static_cast<double>(p.t), static_cast<double>(p.h),
                               static_cast<double>(p.w)};
        int64_t k0 = 0;
        for (const AxisSlice& sl : slices) {
            for (int64_t k = 0; k < sl.pairs; ++k) {
                double theta = 0.0;
                if (!cfg.zero_angles) {
                    double freq = std::pow(cfg.base, -2.0 * static_cast<double>(k) /
                                                         static_cast<double>(sl.pairs * 2));
                    theta = pos[sl.pos_sel] * freq;
                }
                tab.cos_v[static_cast<size_t>(n * tab.half_dim + k0 + k)] =
                    static_cast<S>(std::cos(theta));
                tab.sin_v[static_cast<size_t>(n * tab.half_dim + k0 + k)] =
                    static_cast<S>(std::sin(theta));
            }
            k0 += sl.pairs;
        }
    }
    return tab;
}

// Rotate (x0, x1) pairs in place. dir = +1 forward, -1 inverse (gradient).
template <class S>
void rope_rotate(const RopeTable<S>& tab, S* x, int64_t tokens, int64_t heads, int64_t head_dim,
                 int dir) {
    if (tokens != tab.tokens || head_dim != tab.half_dim * 2) {
        throw std::invalid_argument("rope_rotate: table built for " + std::to_string(tab.tokens) +
                                    " tokens x " + std::to_string(tab.half_dim * 2) +
                                    " dims, got " + std::to_string(tokens) + " x " +
                                    std::to_string(head_dim));
    }
    for (int64_t n = 0; n < tokens; ++n) {
        const S* cr = tab.cos_v.data() + n * tab.half_dim;
        const S* sr = tab.sin_v.data() + n * tab.half_dim;
        for (int64_t hd = 0; hd < heads; ++hd) {
            S* row = x + (n * heads + hd) * head_dim;
            for (int64_t k = 0; k < tab.half_dim; ++k) {
                S c = cr[k];
                S s = dir > 0 ? sr[k] : -sr[k];
                S v0 = row[2 * k];
                S v1 = row[2 * k + 1];
                row[2 * k] = v0 * c - v1 * s;
                row[2 * k + 1] = v0 * s + v1 * c;
            }
        }
    }
}

// Public op: x is tokens x heads x head_dim; returns the rotated copy.
template <class S>
Tensor<S> apply_rope(const Tensor<S>& x, const std::vector<PositionTriple>& positions,
                     const RopeConfig& cfg) {
    if (x.rank() != 3) {
        throw std::invalid_argument("apply_rope: expected rank-3 tokens x heads x head_dim, got " +
                                    shape_str(x.shape()));
    }
    int64_t tokens = x.extent(0), heads = x.extent(1), head_dim = x.extent(2);
    if (static_cast<int64_t>(positions.size()) != tokens) {
        throw std::invalid_argument("apply_rope: " + std::to_string(positions.size()) +
                                    " positions for " + std::to_string(tokens) + " tokens");
    }
    if (head_dim != cfg.head_dim) {
        throw std::invalid_argument("apply_rope: head_dim mismatch");
    }
    RopeTable<S> tab = build_rope_table<S>(positions, cfg);
    Tensor<S> out = x;
    rope_rotate(tab, out.data(), tokens, heads, head_dim, +1);
    return out;
}

// Tape node: x is [tokens, heads * head_dim] (head-major column blocks).
// Rotation is orthonormal per pair, so the backward pass is the inverse
// rotation of the incoming gradient. The table is shared with the closure,
// which may run after the caller's scope ends.
template <class S>
int tape_apply_rope(Tape<S>& tape, int x, std::shared_ptr<RopeTable<S>> tab, int64_t heads) {
    const Tensor<S>& xv = tape.value(x);
    if (xv.rank() != 2 || xv.extent(1) % heads != 0) {
        throw std::invalid_argument("tape_apply_rope: bad operand shape " + shape_str(xv.shape()));
    }
    int64_t tokens = xv.extent(0);
    int64_t head_dim = xv.extent(1) / heads;
    Tensor<S> out = xv;
    rope_rotate(*tab, out.data(), tokens, heads, head_dim, +1);
    return tape.custom(std::move(out), {x},
                       [x, tab = std::move(tab), tokens, heads, head_dim](Tape<S>& t, int self) {
        if (!t.node(x).needs_grad) return;
        Tensor<S> g = t.grad(self);
        rope_rotate(*tab, g.data(), tokens, heads, head_dim, -1);
        axpy(S(1), g, t.grad_buf(x));
    });
}

} // namespace s2v
