#pragma once

// Corpus construction and on-disk layout: one JSON manifest plus raw tensor
// files per sample. Generation is a pure function of (config, seed); two
// builds with the same inputs are byte-identical.

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2v/filters.hpp"
#include "s2v/rng.hpp"
#include "s2v/sprites.hpp"
#include "s2v/tensorfile.hpp"

namespace s2v {

using Json = nlohmann::ordered_json;

inline constexpr int kDatasetSchemaVersion = 1;

struct SubjectAnnotation {
    ShapeKind shape = ShapeKind::Circle;
    int fill_id = 0;
    Tensor<float> mask;          // [F, H, W]
    std::vector<Box> boxes;      // per frame, tight bbox of the mask
    std::vector<ReferenceImage> refs;
};

struct SampleRecord {
    int64_t id = 0;
    uint64_t gen_index = 0; // index in the generation stream (provenance)
    Tensor<float> video;    // [F, 3, H, W] in [0, 1]
    std::vector<SubjectAnnotation> subjects;
    std::string prompt_text;
    std::vector<int64_t> prompt_ids;
    bool cross_paired = false;
    bool pose_enriched = false;
    SceneSpec spec;
};

struct CorpusConfig {
    int64_t count = 64;
    double frac_cross_paired = 1.0;
    double frac_pose_enriched = 0.0;
    double frac_naive = 0.0;
    uint64_t seed = 0;
    int64_t frames = 8;
    int64_t height = 32;
    int64_t width = 32;
    int64_t ref_size = 32;
    int64_t max_subjects = 3;
    FilterConfig filters;

    void validate() const {
        if (count < 1) throw std::invalid_argument("corpus: count must be >= 1");
        double s = frac_cross_paired + frac_pose_enriched + frac_naive;
        if (std::abs(s - 1.0) > 1e-9) {
            throw std::invalid_argument("corpus: mix fractions must sum to 1, got " +
                                        std::to_string(s));
        }
        if (frac_cross_paired < 0 || frac_pose_enriched < 0 || frac_naive < 0) {
            throw std::invalid_argument("corpus: mix fractions must be non-negative");
        }
        if (frames < 1 || height < 8 || width < 8 || ref_size < 8 || ref_size > height ||
            ref_size > width) {
            throw std::invalid_argument("corpus: bad geometry (need ref_size <= video extent)");
        }
        if (max_subjects < 1 || max_subjects > 3) {
            throw std::invalid_argument("corpus: max_subjects must be 1..3");
        }
        filters.validate();
    }
};

struct CorpusStats {
    int64_t generated = 0;
    int64_t accepted = 0;
    std::map<std::string, int64_t> rejected; // reason -> count
};

// ---------------------------------------------------------------------------
// scene sampling
// ---------------------------------------------------------------------------

namespace detail {

inline double worst_case_bound_radius(const SubjectSpec& s) {
    if (s.shape == ShapeKind::Square) return (s.size / 2) * 1.4142135623730951;
    return s.size / 2;
}

// Conservative per-frame box used for placement; expanded by one pixel so
// rasterized masks of distinct subjects can never touch.
inline Box placement_box(const SubjectSpec& s, int64_t frame) {
    Pose p = s.pose_at(frame);
    double br = worst_case_bound_radius(s) + 1.0;
    return {p.cx - br, p.cy - br, p.cx + br, p.cy + br};
}

inline bool boxes_disjoint_all_frames(const SubjectSpec& a, const SubjectSpec& b, int64_t frames) {
    for (int64_t f = 0; f < frames; ++f) {
        if (iou(placement_box(a, f), placement_box(b, f)) > 0.0) return false;
    }
    return true;
}

} // namespace detail

// Draw one scene spec; trajectories are rejection-sampled to stay inside the
// frame and keep subjects disjoint in every frame.
inline SceneSpec sample_scene(const Rng& rng, uint64_t index, const CorpusConfig& cfg) {
    RngStream rs = rng.stream("scene", index);
    SceneSpec spec;
    spec.frames = cfg.frames;
    spec.height = cfg.height;
    spec.width = cfg.width;
    spec.seed = index;
    spec.background_id = static_cast<int>(
        rs.uniform_int(0, static_cast<int64_t>(background_palette().size()) - 1));

    double u = rs.uniform();
    int nsub = u < 0.5 ? 1 : (u < 0.85 ? 2 : 3);
    nsub = std::min<int>(nsub, static_cast<int>(cfg.max_subjects));

    // distinct fill colors
    std::vector<int> fills(fill_palette().size());
    for (size_t i = 0; i < fills.size(); ++i) fills[i] = static_cast<int>(i);
    for (size_t i = fills.size(); i > 1; --i) {
        std::swap(fills[i - 1], fills[static_cast<size_t>(rs.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    }

    const double minext = static_cast<double>(std::min(spec.height, spec.width));
    for (int si = 0; si < nsub; ++si) {
        SubjectSpec s;
        s.shape = static_cast<ShapeKind>(rs.uniform_int(0, 2));
        s.fill_id = fills[static_cast<size_t>(si)];
        s.size = std::max(2.5, (0.22 + 0.18 * rs.uniform()) * minext);

        double mu = rs.uniform();
        s.motion = mu < 0.25 ? MotionKind::Static : (mu < 0.75 ? MotionKind::Drift : MotionKind::Spin);
        if (s.motion == MotionKind::Spin && s.shape == ShapeKind::Circle) {
            s.motion = MotionKind::Drift; // spinning a circle is invisible
        }
        s.angle0 = rs.uniform() * 6.283185307179586;
        if (s.motion == MotionKind::Spin) {
            s.spin = (rs.uniform() < 0.5 ? -1.0 : 1.0) * (0.08 + 0.17 * rs.uniform());
        }

        bool placed = false;
        double speed_cap = 1.2;
        for (int attempt = 0; attempt < 120 && !placed; ++attempt) {
            if (attempt == 60) speed_cap = 0.5;
            SubjectSpec cand = s;
            if (cand.motion == MotionKind::Drift) {
                int dir = static_cast<int>(rs.uniform_int(0, 3));
                double speed = 0.3 + (speed_cap - 0.3) * rs.uniform();
                cand.vel_x = dir == 0 ? speed : dir == 1 ? -speed : 0.0;
                cand.vel_y = dir == 2 ? speed : dir == 3 ? -speed : 0.0;
            }
            double br = detail::worst_case_bound_radius(cand) + 1.0;
            double x_lo = br, x_hi = static_cast<double>(spec.width) - br;
            double y_lo = br, y_hi = static_cast<double>(spec.height) - br;
            double span = static_cast<double>(spec.frames - 1);
            if (cand.vel_x > 0) x_hi -= cand.vel_x * span;
            if (cand.vel_x < 0) x_lo -= cand.vel_x * span;
            if (cand.vel_y > 0) y_hi -= cand.vel_y * span;
            if (cand.vel_y < 0) y_lo -= cand.vel_y * span;
            if (x_lo >= x_hi || y_lo >= y_hi) continue;
            cand.start_x = x_lo + (x_hi - x_lo) * rs.uniform();
            cand.start_y = y_lo + (y_hi - y_lo) * rs.uniform();

            bool clear = true;
            for (const auto& other : spec.subjects) {
                if (!detail::boxes_disjoint_all_frames(cand, other, spec.frames)) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                spec.subjects.push_back(cand);
                placed = true;
            }
        }
        if (!placed) break; // keep the subjects placed so far
    }
    if (spec.subjects.empty()) {
        // guaranteed fallback: one small static subject dead center
        SubjectSpec s;
        s.shape = ShapeKind::Circle;
        s.fill_id = fills[0];
        s.size = 0.25 * minext;
        s.start_x = static_cast<double>(spec.width) / 2;
        s.start_y = static_cast<double>(spec.height) / 2;
        spec.subjects.push_back(s);
    }
    return spec;
}

// ---------------------------------------------------------------------------
// record assembly
// ---------------------------------------------------------------------------

inline ReferenceMode pick_mode(const Rng& rng, uint64_t index, const CorpusConfig& cfg) {
    double u = rng.stream("mode", index).uniform();
    if (u < cfg.frac_cross_paired) return ReferenceMode::CrossPaired;
    if (u < cfg.frac_cross_paired + cfg.frac_pose_enriched) return ReferenceMode::PoseEnriched;
    return ReferenceMode::InVideoFrame;
}

// Build one candidate record (not yet filtered).
inline SampleRecord generate_sample(const Rng& rng, uint64_t index, const CorpusConfig& cfg) {
    SampleRecord rec;
    rec.gen_index = index;
    rec.spec = sample_scene(rng, index, cfg);
    RenderedScene rendered = render_scene(rec.spec);

    ReferenceMode mode = pick_mode(rng, index, cfg);
    rec.cross_paired = mode != ReferenceMode::InVideoFrame;
    rec.pose_enriched = mode == ReferenceMode::PoseEnriched;

    RngStream ref_rs = rng.stream("refs", index);
    for (size_t si = 0; si < rec.spec.subjects.size(); ++si) {
        SubjectAnnotation ann;
        ann.shape = rec.spec.subjects[si].shape;
        ann.fill_id = rec.spec.subjects[si].fill_id;
        ann.refs.push_back(make_reference(rec.spec, rendered, si, mode, ref_rs, cfg.ref_size));
        ann.mask = std::move(rendered.masks[si]);
        ann.boxes = std::move(rendered.boxes[si]);
        rec.subjects.push_back(std::move(ann));
    }
    rec.video = std::move(rendered.video);

    rec.prompt_text = scene_prompt(rec.spec);
    rec.prompt_ids = tokenize_prompt(rec.prompt_text);
    return rec;
}

// ---------------------------------------------------------------------------
// manifest serialization
// ---------------------------------------------------------------------------

namespace detail {

inline Json scene_to_json(const SceneSpec& spec) {
    Json subjects = Json::array();
    for (const auto& s : spec.subjects) {
        subjects.push_back({{"shape", shape_name(s.shape)},
                            {"fill_id", s.fill_id},
                            {"size", s.size},
                            {"start_x", s.start_x},
                            {"start_y", s.start_y},
                            {"vel_x", s.vel_x},
                            {"vel_y", s.vel_y},
                            {"angle0", s.angle0},
                            {"spin", s.spin},
                            {"motion", s.motion == MotionKind::Static  ? "static"
                                       : s.motion == MotionKind::Drift ? "drift"
                                                                       : "spin"}});
    }
    return Json{{"subjects", std::move(subjects)}, {"background_id", spec.background_id},
                {"frames", spec.frames},           {"height", spec.height},
                {"width", spec.width},             {"seed", spec.seed}};
}

inline SceneSpec scene_from_json(const Json& j) {
    SceneSpec spec;
    spec.background_id = j.at("background_id").get<int>();
    spec.frames = j.at("frames").get<int64_t>();
    spec.height = j.at("height").get<int64_t>();
    spec.width = j.at("width").get<int64_t>();
    spec.seed = j.at("seed").get<uint64_t>();
    for (const auto& js : j.at("subjects")) {
        SubjectSpec s;
        std::string sh = js.at("shape").get<std::string>();
        s.shape = sh == "circle" ? ShapeKind::Circle
                  : sh == "square" ? ShapeKind::Square
                                   : ShapeKind::Triangle;
        s.fill_id = js.at("fill_id").get<int>();
        s.size = js.at("size").get<double>();
        s.start_x = js.at("start_x").get<double>();
        s.start_y = js.at("start_y").get<double>();
        s.vel_x = js.at("vel_x").get<double>();
        s.vel_y = js.at("vel_y").get<double>();
        s.angle0 = js.at("angle0").get<double>();
        s.spin = js.at("spin").get<double>();
        std::string m = js.at("motion").get<std::string>();
        s.motion = m == "static" ? MotionKind::Static
                   : m == "drift" ? MotionKind::Drift
                                  : MotionKind::Spin;
        spec.subjects.push_back(s);
    }
    return spec;
}

inline std::string sample_stem(int64_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%05lld", static_cast<long long>(id));
    return buf;
}

} // namespace detail

// Generate, filter, and write a corpus. Aborts when more than half of the
// generated scenes fail the filters (misconfigured thresholds).
inline CorpusStats build_corpus(const CorpusConfig& cfg, const std::string& dir) {
    cfg.validate();
    std::filesystem::create_directories(dir);
    Rng rng(cfg.seed);

    CorpusStats stats;
    Json samples = Json::array();
    int64_t next_id = 0;

    for (uint64_t index = 0; index < static_cast<uint64_t>(cfg.count); ++index) {
        stats.generated += 1;
        SampleRecord rec = generate_sample(rng, index, cfg);

        std::vector<Tensor<float>> masks;
        std::vector<std::vector<Box>> boxes;
        for (const auto& s : rec.subjects) {
            masks.push_back(s.mask);
            boxes.push_back(s.boxes);
        }
        FilterVerdict verdict = filter_sample(rec.video, masks, boxes, cfg.filters);
        if (!verdict.accept) {
            stats.rejected[verdict.reason] += 1;
            continue;
        }
        rec.id = next_id++;
        stats.accepted += 1;

        const std::string stem = detail::sample_stem(rec.id);
        auto rel = [&](const std::string& suffix) { return stem + "_" + suffix + ".tns"; };
        write_tensor_file(rec.video, dir + "/" + rel("video"));

        Json subjects = Json::array();
        for (size_t si = 0; si < rec.subjects.size(); ++si) {
            const auto& ann = rec.subjects[si];
            std::string mask_rel = rel("sub" + std::to_string(si) + "_mask");
            write_mask_file(ann.mask, dir + "/" + mask_rel);
            Json refs = Json::array();
            for (size_t ri = 0; ri < ann.refs.size(); ++ri) {
                const auto& r = ann.refs[ri];
                std::string img_rel =
                    rel("sub" + std::to_string(si) + "_ref" + std::to_string(ri) + "_img");
                std::string rmask_rel =
                    rel("sub" + std::to_string(si) + "_ref" + std::to_string(ri) + "_mask");
                write_tensor_file(r.image, dir + "/" + img_rel);
                write_mask_file(r.mask, dir + "/" + rmask_rel);
                refs.push_back({{"image", img_rel},
                                {"mask", rmask_rel},
                                {"background_id", r.background_id},
                                {"cross_paired", r.cross_paired},
                                {"pose_enriched", r.pose_enriched}});
            }
            subjects.push_back({{"shape", shape_name(ann.shape)},
                                {"fill", fill_palette()[static_cast<size_t>(ann.fill_id)].name},
                                {"fill_id", ann.fill_id},
                                {"mask", mask_rel},
                                {"refs", std::move(refs)}});
        }

        samples.push_back({{"id", rec.id},
                           {"gen_index", rec.gen_index},
                           {"video", rel("video")},
                           {"prompt", rec.prompt_text},
                           {"prompt_ids", rec.prompt_ids},
                           {"cross_paired", rec.cross_paired},
                           {"pose_enriched", rec.pose_enriched},
                           {"background",
                            background_palette()[static_cast<size_t>(rec.spec.background_id)].name},
                           {"subjects", std::move(subjects)},
                           {"scene", detail::scene_to_json(rec.spec)}});
    }

    if (stats.accepted * 2 < stats.generated) {
        std::string detail = "accepted " + std::to_string(stats.accepted) + " of " +
                             std::to_string(stats.generated) + "; rejections:";
        for (const auto& [k, v] : stats.rejected) detail += " " + k + "=" + std::to_string(v);
        throw std::runtime_error("build_corpus: filter rejection rate above 50% (" + detail + ")");
    }

    Json rejected = Json::object();
    for (const auto& [k, v] : stats.rejected) rejected[k] = v;
    Json manifest = {
        {"schema_version", kDatasetSchemaVersion},
        {"kind", "s2v_dataset"},
        {"config",
         {{"count", cfg.count},
          {"mix",
           {{"cross_paired", cfg.frac_cross_paired},
            {"pose_enriched", cfg.frac_pose_enriched},
            {"naive", cfg.frac_naive}}},
          {"seed", cfg.seed},
          {"frames", cfg.frames},
          {"height", cfg.height},
          {"width", cfg.width},
          {"ref_size", cfg.ref_size},
          {"max_subjects", cfg.max_subjects},
          {"filters",
           {{"min_area_fraction", cfg.filters.min_area_fraction},
            {"max_area_fraction", cfg.filters.max_area_fraction},
            {"max_pairwise_iou", cfg.filters.max_pairwise_iou},
            {"min_brightness", cfg.filters.min_brightness},
            {"max_brightness", cfg.filters.max_brightness},
            {"blur_threshold", cfg.filters.blur_threshold}}}}},
        {"vocabulary", prompt_vocabulary()},
        {"filter_stats",
         {{"generated", stats.generated}, {"accepted", stats.accepted}, {"rejected", rejected}}},
        {"samples", std::move(samples)},
    };
    std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
    return stats;
}

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

struct Corpus {
    Json manifest;
    std::vector<SampleRecord> samples;
};

inline Corpus load_corpus(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json", std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + dir + "/manifest.json");
    Json manifest = Json::parse(in);
    if (manifest.value("schema_version", -1) != kDatasetSchemaVersion ||
        manifest.value("kind", "") != "s2v_dataset") {
        throw std::runtime_error(dir + ": not a dataset manifest of schema version " +
                                 std::to_string(kDatasetSchemaVersion));
    }
    Corpus corpus;
    for (const auto& js : manifest.at("samples")) {
        SampleRecord rec;
        rec.id = js.at("id").get<int64_t>();
        rec.gen_index = js.at("gen_index").get<uint64_t>();
        rec.video = read_tensor_file<float>(dir + "/" + js.at("video").get<std::string>());
        rec.prompt_text = js.at("prompt").get<std::string>();
        rec.prompt_ids = js.at("prompt_ids").get<std::vector<int64_t>>();
        rec.cross_paired = js.at("cross_paired").get<bool>();
        rec.pose_enriched = js.at("pose_enriched").get<bool>();
        rec.spec = detail::scene_from_json(js.at("scene"));
        int64_t frames = rec.video.extent(0), h = rec.video.extent(2), w = rec.video.extent(3);
        for (const auto& jsub : js.at("subjects")) {
            SubjectAnnotation ann;
            std::string sh = jsub.at("shape").get<std::string>();
            ann.shape = sh == "circle" ? ShapeKind::Circle
                        : sh == "square" ? ShapeKind::Square
                                         : ShapeKind::Triangle;
            ann.fill_id = jsub.at("fill_id").get<int>();
            ann.mask = read_mask_file(dir + "/" + jsub.at("mask").get<std::string>());
            for (int64_t f = 0; f < frames; ++f) {
                Tensor<float> m({h, w});
                std::copy(ann.mask.data() + f * h * w, ann.mask.data() + (f + 1) * h * w, m.data());
                ann.boxes.push_back(mask_bbox(m));
            }
            for (const auto& jr : jsub.at("refs")) {
                ReferenceImage r;
                r.image = read_tensor_file<float>(dir + "/" + jr.at("image").get<std::string>());
                r.mask = read_mask_file(dir + "/" + jr.at("mask").get<std::string>());
                r.background_id = jr.at("background_id").get<int>();
                r.cross_paired = jr.at("cross_paired").get<bool>();
                r.pose_enriched = jr.at("pose_enriched").get<bool>();
                r.box = mask_bbox(r.mask);
                ann.refs.push_back(std::move(r));
            }
            rec.subjects.push_back(std::move(ann));
        }
        corpus.samples.push_back(std::move(rec));
    }
    corpus.manifest = std::move(manifest);
    return corpus;
}

} // namespace s2v
