#pragma once

// Procedural sprite world: parametric shapes on textured backgrounds along
// scripted trajectories, rasterized with exact binary masks. Scenes are pure
// functions of their spec, and every reference-image mode (naive crop,
// cross-paired re-render, pose-enriched re-render) is derived from the same
// geometry, which is what makes the corpus ground truth exact.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2v/filters.hpp"
#include "s2v/rng.hpp"
#include "s2v/tensor.hpp"

namespace s2v {

// ---------------------------------------------------------------------------
// palettes
// ---------------------------------------------------------------------------

struct Rgb {
    float r, g, b;
};

struct FillTexture {
    const char* name;
    Rgb color;
};

inline const std::vector<FillTexture>& fill_palette() {
    static const std::vector<FillTexture> p = {
        {"red", {0.85f, 0.10f, 0.10f}},    {"green", {0.10f, 0.72f, 0.15f}},
        {"blue", {0.12f, 0.25f, 0.88f}},   {"yellow", {0.92f, 0.85f, 0.12f}},
        {"magenta", {0.85f, 0.15f, 0.82f}}, {"cyan", {0.10f, 0.80f, 0.80f}},
        {"orange", {0.95f, 0.55f, 0.10f}}, {"purple", {0.55f, 0.18f, 0.75f}},
    };
    return p;
}

struct BackgroundTexture {
    const char* name;
};

inline const std::vector<BackgroundTexture>& background_palette() {
    static const std::vector<BackgroundTexture> p = {
        {"gray"}, {"navy"}, {"sand"}, {"checker"}, {"stripes"}, {"bars"},
    };
    return p;
}

// Background color at pixel (x, y); patterns are anchored to pixel indices
// so two renders of the same texture are identical regardless of canvas.
inline Rgb background_color(int background_id, int64_t x, int64_t y) {
    switch (background_id) {
        case 0: return {0.52f, 0.52f, 0.55f};                       // gray
        case 1: return {0.10f, 0.12f, 0.35f};                       // navy
        case 2: return {0.82f, 0.75f, 0.55f};                       // sand
        case 3:                                                      // checker
            return (((x / 4) + (y / 4)) % 2 == 0) ? Rgb{0.30f, 0.30f, 0.30f}
                                                  : Rgb{0.74f, 0.74f, 0.74f};
        case 4:                                                      // stripes
            return ((y / 4) % 2 == 0) ? Rgb{0.22f, 0.45f, 0.28f} : Rgb{0.58f, 0.80f, 0.62f};
        case 5:                                                      // bars
            return ((x / 4) % 2 == 0) ? Rgb{0.48f, 0.28f, 0.55f} : Rgb{0.76f, 0.62f, 0.82f};
        default: throw std::invalid_argument("unknown background id " + std::to_string(background_id));
    }
}

// ---------------------------------------------------------------------------
// shapes
// ---------------------------------------------------------------------------

enum class ShapeKind { Circle, Square, Triangle };

inline const char* shape_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Square: return "square";
        case ShapeKind::Triangle: return "triangle";
    }
    throw std::invalid_argument("bad shape kind");
}

// Pose of a shape instance: center, size (diameter / side / circumdiameter)
// and rotation angle in radians.
struct Pose {
    double cx = 0, cy = 0;
    double size = 0;
    double angle = 0;
};

inline bool point_in_shape(ShapeKind kind, const Pose& pose, double px, double py) {
    double dx = px - pose.cx, dy = py - pose.cy;
    switch (kind) {
        case ShapeKind::Circle: {
            double r = pose.size / 2;
            return dx * dx + dy * dy <= r * r;
        }
        case ShapeKind::Square: {
            double c = std::cos(-pose.angle), s = std::sin(-pose.angle);
            double ux = c * dx - s * dy;
            double uy = s * dx + c * dy;
            double half = pose.size / 2;
            return std::abs(ux) <= half && std::abs(uy) <= half;
        }
        case ShapeKind::Triangle: {
            // equilateral triangle with circumradius size/2
            double r = pose.size / 2;
            std::array<double, 3> vx{}, vy{};
            for (int i = 0; i < 3; ++i) {
                double a = pose.angle - 1.5707963267948966 + i * 2.0943951023931953;
                vx[static_cast<size_t>(i)] = pose.cx + r * std::cos(a);
                vy[static_cast<size_t>(i)] = pose.cy + r * std::sin(a);
            }
            auto cross = [&](int i, int j) {
                return (vx[static_cast<size_t>(j)] - vx[static_cast<size_t>(i)]) *
                           (py - vy[static_cast<size_t>(i)]) -
                       (vy[static_cast<size_t>(j)] - vy[static_cast<size_t>(i)]) *
                           (px - vx[static_cast<size_t>(i)]);
            };
            double c0 = cross(0, 1), c1 = cross(1, 2), c2 = cross(2, 0);
            return (c0 >= 0 && c1 >= 0 && c2 >= 0) || (c0 <= 0 && c1 <= 0 && c2 <= 0);
        }
    }
    throw std::invalid_argument("bad shape kind");
}

inline double shape_area(ShapeKind kind, double size) {
    switch (kind) {
        case ShapeKind::Circle: return 3.14159265358979323846 * (size / 2) * (size / 2);
        case ShapeKind::Square: return size * size;
        case ShapeKind::Triangle: {
            double r = size / 2;
            return 3.0 * std::sqrt(3.0) / 4.0 * r * r;
        }
    }
    throw std::invalid_argument("bad shape kind");
}

inline double shape_perimeter(ShapeKind kind, double size) {
    switch (kind) {
        case ShapeKind::Circle: return 3.14159265358979323846 * size;
        case ShapeKind::Square: return 4 * size;
        case ShapeKind::Triangle: return 3.0 * std::sqrt(3.0) * (size / 2);
    }
    throw std::invalid_argument("bad shape kind");
}

// Conservative half-extent of the shape's bounding box around its center.
inline double shape_bound_radius(ShapeKind kind, double size, double angle) {
    switch (kind) {
        case ShapeKind::Circle: return size / 2;
        case ShapeKind::Square:
            return (size / 2) * (std::abs(std::cos(angle)) + std::abs(std::sin(angle)));
        case ShapeKind::Triangle: return size / 2;
    }
    throw std::invalid_argument("bad shape kind");
}

// ---------------------------------------------------------------------------
// scene specification
// ---------------------------------------------------------------------------

enum class MotionKind { Static, Drift, Spin };

struct SubjectSpec {
    ShapeKind shape = ShapeKind::Circle;
    int fill_id = 0;
    double size = 8;
    double start_x = 0, start_y = 0;
    double vel_x = 0, vel_y = 0;    // pixels per frame
    double angle0 = 0, spin = 0;    // radians, radians per frame
    MotionKind motion = MotionKind::Static;

    Pose pose_at(int64_t frame) const {
        return {start_x + vel_x * static_cast<double>(frame),
                start_y + vel_y * static_cast<double>(frame), size,
                angle0 + spin * static_cast<double>(frame)};
    }
};

struct SceneSpec {
    std::vector<SubjectSpec> subjects;
    int background_id = 0;
    int64_t frames = 8;
    int64_t height = 32;
    int64_t width = 32;
    uint64_t seed = 0; // provenance of the generator draw

    void validate() const {
        if (subjects.empty() || subjects.size() > 3) {
            throw std::invalid_argument("scene: subject count must be 1..3");
        }
        if (frames < 1 || height < 4 || width < 4) {
            throw std::invalid_argument("scene: degenerate extents");
        }
        if (background_id < 0 ||
            background_id >= static_cast<int>(background_palette().size())) {
            throw std::invalid_argument("scene: bad background id");
        }
        for (const auto& s : subjects) {
            if (s.fill_id < 0 || s.fill_id >= static_cast<int>(fill_palette().size())) {
                throw std::invalid_argument("scene: bad fill id");
            }
            if (s.size < 2) throw std::invalid_argument("scene: subject too small");
            for (int64_t f = 0; f < frames; ++f) {
                Pose p = s.pose_at(f);
                double br = shape_bound_radius(s.shape, s.size, p.angle);
                if (p.cx - br < 0 || p.cx + br > static_cast<double>(width) || p.cy - br < 0 ||
                    p.cy + br > static_cast<double>(height)) {
                    throw std::invalid_argument("scene: trajectory escapes frame at frame " +
                                                std::to_string(f));
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

struct RenderedScene {
    Tensor<float> video;                     // [F, 3, H, W]
    std::vector<Tensor<float>> masks;        // per subject [F, H, W]
    std::vector<std::vector<Box>> boxes;     // [subject][frame]
};

namespace detail {

inline void paint_background(float* frame, int background_id, int64_t h, int64_t w) {
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            Rgb c = background_color(background_id, x, y);
            frame[0 * h * w + y * w + x] = c.r;
            frame[1 * h * w + y * w + x] = c.g;
            frame[2 * h * w + y * w + x] = c.b;
        }
    }
}

// Rasterize one shape instance onto a frame; fills mask with 0/1 coverage.
inline void paint_shape(float* frame, float* mask, ShapeKind kind, const Pose& pose, Rgb fill,
                        int64_t h, int64_t w) {
    double br = shape_bound_radius(kind, pose.size, pose.angle) + 1.0;
    int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(pose.cy - br)));
    int64_t y1 = std::min<int64_t>(h, static_cast<int64_t>(std::ceil(pose.cy + br)));
    int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(pose.cx - br)));
    int64_t x1 = std::min<int64_t>(w, static_cast<int64_t>(std::ceil(pose.cx + br)));
    for (int64_t y = y0; y < y1; ++y) {
        for (int64_t x = x0; x < x1; ++x) {
            if (point_in_shape(kind, pose, static_cast<double>(x) + 0.5,
                               static_cast<double>(y) + 0.5)) {
                if (frame) {
                    frame[0 * h * w + y * w + x] = fill.r;
                    frame[1 * h * w + y * w + x] = fill.g;
                    frame[2 * h * w + y * w + x] = fill.b;
                }
                if (mask) mask[y * w + x] = 1.0f;
            }
        }
    }
}

} // namespace detail

// Deterministic rasterization of a validated scene. Masks cover the full
// shape (pixel-center test); boxes are tight bounds of the masks.
inline RenderedScene render_scene(const SceneSpec& spec) {
    spec.validate();
    const int64_t fcount = spec.frames, h = spec.height, w = spec.width;
    RenderedScene out;
    out.video = Tensor<float>({fcount, 3, h, w});
    out.masks.assign(spec.subjects.size(), Tensor<float>({fcount, h, w}));
    out.boxes.assign(spec.subjects.size(), std::vector<Box>(static_cast<size_t>(fcount)));

    for (int64_t f = 0; f < fcount; ++f) {
        float* frame = out.video.data() + f * 3 * h * w;
        detail::paint_background(frame, spec.background_id, h, w);
        for (size_t si = 0; si < spec.subjects.size(); ++si) {
            const auto& subj = spec.subjects[si];
            float* mask = out.masks[si].data() + f * h * w;
            detail::paint_shape(frame, mask, subj.shape, subj.pose_at(f),
                                fill_palette()[static_cast<size_t>(subj.fill_id)].color, h, w);
        }
    }
    for (size_t si = 0; si < spec.subjects.size(); ++si) {
        for (int64_t f = 0; f < fcount; ++f) {
            Tensor<float> m({h, w});
            std::copy(out.masks[si].data() + f * h * w, out.masks[si].data() + (f + 1) * h * w,
                      m.data());
            out.boxes[si][static_cast<size_t>(f)] = mask_bbox(m);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// reference images
// ---------------------------------------------------------------------------

enum class ReferenceMode { InVideoFrame, CrossPaired, PoseEnriched };

inline const char* reference_mode_name(ReferenceMode m) {
    switch (m) {
        case ReferenceMode::InVideoFrame: return "in_video_frame";
        case ReferenceMode::CrossPaired: return "cross_paired";
        case ReferenceMode::PoseEnriched: return "pose_enriched";
    }
    throw std::invalid_argument("bad reference mode");
}

struct ReferenceImage {
    Tensor<float> image; // [3, R, R]
    Tensor<float> mask;  // [R, R]
    Box box;
    int background_id = 0;
    bool cross_paired = false;
    bool pose_enriched = false;
};

// Build one reference image for a subject of the scene. in_video_frame crops
// a video frame around the subject (the naive baseline, background and all);
// cross_paired re-renders the subject on a different background; pose_enriched
// additionally re-renders at a rotation and scale absent from the video
// trajectory.
inline ReferenceImage make_reference(const SceneSpec& spec, const RenderedScene& rendered,
                                     size_t subject_index, ReferenceMode mode, RngStream& rs,
                                     int64_t ref_size) {
    if (subject_index >= spec.subjects.size()) {
        throw std::invalid_argument("make_reference: no subject " + std::to_string(subject_index));
    }
    const auto& subj = spec.subjects[subject_index];
    const int64_t h = spec.height, w = spec.width, r = ref_size;
    int64_t frame = rs.uniform_int(0, spec.frames - 1);

    ReferenceImage out;
    out.image = Tensor<float>({3, r, r});
    out.mask = Tensor<float>({r, r});

    if (mode == ReferenceMode::InVideoFrame) {
        // crop window centered on the subject, clamped inside the frame
        const Box& bb = rendered.boxes[subject_index][static_cast<size_t>(frame)];
        double cx = (bb.x0 + bb.x1) / 2, cy = (bb.y0 + bb.y1) / 2;
        int64_t ox = static_cast<int64_t>(std::lround(cx - static_cast<double>(r) / 2));
        int64_t oy = static_cast<int64_t>(std::lround(cy - static_cast<double>(r) / 2));
        ox = std::clamp<int64_t>(ox, 0, std::max<int64_t>(0, w - r));
        oy = std::clamp<int64_t>(oy, 0, std::max<int64_t>(0, h - r));
        if (r > w || r > h) {
            throw std::invalid_argument("make_reference: crop larger than the frame");
        }
        const float* vf = rendered.video.data() + frame * 3 * h * w;
        const float* vm = rendered.masks[subject_index].data() + frame * h * w;
        for (int64_t y = 0; y < r; ++y) {
            for (int64_t x = 0; x < r; ++x) {
                for (int64_t c = 0; c < 3; ++c) {
                    out.image[(c * r + y) * r + x] = vf[c * h * w + (oy + y) * w + (ox + x)];
                }
                out.mask[y * r + x] = vm[(oy + y) * w + (ox + x)];
            }
        }
        out.background_id = spec.background_id;
    } else {
        // choose a background different from the video's
        int n_bg = static_cast<int>(background_palette().size());
        if (n_bg < 2) throw std::invalid_argument("make_reference: no alternative background");
        int pick = static_cast<int>(rs.uniform_int(0, n_bg - 2));
        out.background_id = pick >= spec.background_id ? pick + 1 : pick;
        out.cross_paired = true;

        Pose pose = subj.pose_at(frame);
        pose.cx = static_cast<double>(r) / 2;
        pose.cy = static_cast<double>(r) / 2;
        if (mode == ReferenceMode::PoseEnriched) {
            out.pose_enriched = true;
            // rotation offset and scale factor outside the trajectory's range
            double delta = (30.0 + 15.0 * static_cast<double>(rs.uniform_int(0, 2))) *
                           3.14159265358979323846 / 180.0;
            pose.angle += delta;
            pose.size = std::min(subj.size * 1.25, 0.9 * static_cast<double>(r));
        }
        if (pose.size >= static_cast<double>(r)) {
            throw std::invalid_argument("make_reference: subject does not fit the reference canvas");
        }
        detail::paint_background(out.image.data(), out.background_id, r, r);
        detail::paint_shape(out.image.data(), out.mask.data(), subj.shape, pose,
                            fill_palette()[static_cast<size_t>(subj.fill_id)].color, r, r);
    }
    out.box = mask_bbox(out.mask);
    return out;
}

// ---------------------------------------------------------------------------
// prompts over the closed vocabulary
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& prompt_vocabulary() {
    static const std::vector<std::string> words = {
        "a",      "and",    "over",    "background", "red",     "green",  "blue",
        "yellow", "magenta", "cyan",   "orange",     "purple",  "circle", "square",
        "triangle", "sitting", "still", "spinning",  "drifting", "left",  "right",
        "up",     "down",   "gray",    "navy",       "sand",    "checker", "stripes",
        "bars",
    };
    return words;
}

inline int64_t prompt_word_id(const std::string& word) {
    const auto& v = prompt_vocabulary();
    for (size_t i = 0; i < v.size(); ++i) {
        if (v[i] == word) return static_cast<int64_t>(i);
    }
    throw std::invalid_argument("word '" + word + "' outside the prompt vocabulary");
}

inline std::string motion_phrase(const SubjectSpec& s) {
    if (s.motion == MotionKind::Spin) return "spinning";
    if (s.motion == MotionKind::Static) return "sitting still";
    if (std::abs(s.vel_x) >= std::abs(s.vel_y)) {
        return s.vel_x >= 0 ? "drifting right" : "drifting left";
    }
    return s.vel_y >= 0 ? "drifting down" : "drifting up";
}

// "a red circle drifting right and a blue square spinning over navy background"
inline std::string scene_prompt(const SceneSpec& spec) {
    std::string text;
    for (size_t i = 0; i < spec.subjects.size(); ++i) {
        const auto& s = spec.subjects[i];
        if (i) text += " and ";
        text += "a ";
        text += fill_palette()[static_cast<size_t>(s.fill_id)].name;
        text += " ";
        text += shape_name(s.shape);
        text += " ";
        text += motion_phrase(s);
    }
    text += " over ";
    text += background_palette()[static_cast<size_t>(spec.background_id)].name;
    text += " background";
    return text;
}

inline std::vector<int64_t> tokenize_prompt(const std::string& text) {
    std::vector<int64_t> ids;
    size_t i = 0;
    while (i < text.size()) {
        size_t j = text.find(' ', i);
        if (j == std::string::npos) j = text.size();
        if (j > i) ids.push_back(prompt_word_id(text.substr(i, j - i)));
        i = j + 1;
    }
    return ids;
}

} // namespace s2v
