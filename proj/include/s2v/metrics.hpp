#pragma once

// Subject-to-video evaluation metrics over region features. Consistency is
// the frame-wise maximum subject similarity to any reference, averaged over
// frames; decoupling is one minus the mean background similarity across all
// frame/reference pairs. The region-feature extractor and the mask source
// are both pluggable, and every report records which were used — scores are
// only comparable within one extractor.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2v/filters.hpp"
#include "s2v/tensor.hpp"

namespace s2v {

// Unit-normalized region feature vector.
struct RegionEmbedding {
    std::vector<double> v;

    double norm() const {
        double s = 0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    }
};

inline double cosine_similarity(const RegionEmbedding& a, const RegionEmbedding& b) {
    if (a.v.size() != b.v.size()) {
        throw std::invalid_argument("cosine_similarity: dimension mismatch");
    }
    double d = 0;
    for (size_t i = 0; i < a.v.size(); ++i) d += a.v[i] * b.v[i];
    return d;
}

// ---------------------------------------------------------------------------
// extractors
// ---------------------------------------------------------------------------

using RegionExtractor =
    std::function<RegionEmbedding(const Tensor<float>& image, const Tensor<float>& mask)>;

// Default extractor: 4x4x4 RGB histogram concatenated with an 8-bin
// gradient-orientation histogram over the masked pixels, L2-normalized.
// Features are non-negative, so cosine similarities land in [0, 1].
inline RegionEmbedding histogram_embedding(const Tensor<float>& image, const Tensor<float>& mask) {
    if (image.rank() != 3 || image.extent(0) != 3) {
        throw std::invalid_argument("embed_region: image must be [3, H, W]");
    }
    int64_t h = image.extent(1), w = image.extent(2);
    if (mask.numel() != h * w) {
        throw std::invalid_argument("embed_region: mask extent mismatch");
    }
    constexpr int kColorBins = 4;
    constexpr int kOrientBins = 8;
    RegionEmbedding emb;
    emb.v.assign(kColorBins * kColorBins * kColorBins + kOrientBins, 0.0);

    auto gray = to_gray(image);
    int64_t count = 0;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (mask[y * w + x] == 0.0f) continue;
            ++count;
            auto bin = [](float v) {
                int b = static_cast<int>(v * kColorBins);
                return std::clamp(b, 0, kColorBins - 1);
            };
            int br = bin(image[(0 * h + y) * w + x]);
            int bg = bin(image[(1 * h + y) * w + x]);
            int bb = bin(image[(2 * h + y) * w + x]);
            emb.v[static_cast<size_t>((br * kColorBins + bg) * kColorBins + bb)] += 1.0;

            // gradients only where the whole stencil stays inside the region,
            // so the embedding never reads pixels outside its mask
            if (y > 0 && y + 1 < h && x > 0 && x + 1 < w && mask[(y - 1) * w + x] != 0.0f &&
                mask[(y + 1) * w + x] != 0.0f && mask[y * w + x - 1] != 0.0f &&
                mask[y * w + x + 1] != 0.0f) {
                double gx = 0.5 * (gray[y * w + x + 1] - gray[y * w + x - 1]);
                double gy = 0.5 * (gray[(y + 1) * w + x] - gray[(y - 1) * w + x]);
                double mag = std::sqrt(gx * gx + gy * gy);
                if (mag > 1e-8) {
                    double ang = std::atan2(gy, gx); // [-pi, pi]
                    int ob = static_cast<int>((ang + 3.14159265358979323846) /
                                              (2 * 3.14159265358979323846) * kOrientBins);
                    ob = std::clamp(ob, 0, kOrientBins - 1);
                    emb.v[static_cast<size_t>(kColorBins * kColorBins * kColorBins + ob)] += mag;
                }
            }
        }
    }
    if (count == 0) {
        throw std::invalid_argument("embed_region: empty region");
    }
    double n = emb.norm();
    for (double& x : emb.v) x /= n;
    return emb;
}

inline RegionExtractor extractor_by_id(const std::string& id) {
    if (id == "hist72/v1") return histogram_embedding;
    throw std::invalid_argument("unknown extractor id '" + id + "'");
}

// ---------------------------------------------------------------------------
// mask sources
// ---------------------------------------------------------------------------

// Threshold segmenter for videos without ground truth: the background color
// is taken as the median of the frame border, the subject mask is every
// pixel further than the threshold in mean absolute RGB difference.
inline Tensor<float> color_segment_mask(const Tensor<float>& image, double threshold = 0.18) {
    int64_t h = image.extent(1), w = image.extent(2);
    std::vector<float> border_r, border_g, border_b;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (y == 0 || y == h - 1 || x == 0 || x == w - 1) {
                border_r.push_back(image[(0 * h + y) * w + x]);
                border_g.push_back(image[(1 * h + y) * w + x]);
                border_b.push_back(image[(2 * h + y) * w + x]);
            }
        }
    }
    auto median = [](std::vector<float>& v) {
        std::nth_element(v.begin(), v.begin() + static_cast<int64_t>(v.size()) / 2, v.end());
        return v[v.size() / 2];
    };
    float mr = median(border_r), mg = median(border_g), mb = median(border_b);
    Tensor<float> mask({h, w});
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            double d = (std::abs(image[(0 * h + y) * w + x] - mr) +
                        std::abs(image[(1 * h + y) * w + x] - mg) +
                        std::abs(image[(2 * h + y) * w + x] - mb)) /
                       3.0;
            mask[y * w + x] = d > threshold ? 1.0f : 0.0f;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// metric cores
// ---------------------------------------------------------------------------

struct RegionPair {
    Tensor<float> image; // [3, H, W]
    Tensor<float> mask;  // [H, W], subject = 1
};

namespace detail {

inline Tensor<float> frame_of(const Tensor<float>& video, int64_t f) {
    int64_t c = video.extent(1), h = video.extent(2), w = video.extent(3);
    Tensor<float> out({c, h, w});
    std::copy(video.data() + f * c * h * w, video.data() + (f + 1) * c * h * w, out.data());
    return out;
}

inline Tensor<float> mask_of(const Tensor<float>& masks, int64_t f) {
    int64_t h = masks.extent(1), w = masks.extent(2);
    Tensor<float> out({h, w});
    std::copy(masks.data() + f * h * w, masks.data() + (f + 1) * h * w, out.data());
    return out;
}

inline Tensor<float> complement(const Tensor<float>& mask) {
    Tensor<float> out(mask.shape());
    for (int64_t i = 0; i < mask.numel(); ++i) out[i] = mask[i] == 0.0f ? 1.0f : 0.0f;
    return out;
}

} // namespace detail

// Mean over frames (with a non-empty subject mask) of the maximum cosine
// similarity between the frame's subject embedding and any reference's
// subject embedding.
inline double s2v_consistency(const Tensor<float>& video, const Tensor<float>& subject_masks,
                              const std::vector<RegionPair>& refs,
                              const RegionExtractor& extract = histogram_embedding) {
    if (refs.empty()) throw std::invalid_argument("s2v_consistency: need at least one reference");
    std::vector<RegionEmbedding> ref_embs;
    for (const auto& r : refs) ref_embs.push_back(extract(r.image, r.mask));

    int64_t frames = video.extent(0);
    double acc = 0;
    int64_t used = 0;
    for (int64_t f = 0; f < frames; ++f) {
        Tensor<float> mask = detail::mask_of(subject_masks, f);
        if (mask_area(mask) == 0) continue;
        RegionEmbedding emb = extract(detail::frame_of(video, f), mask);
        double best = -1.0;
        for (const auto& re : ref_embs) best = std::max(best, cosine_similarity(emb, re));
        acc += best;
        ++used;
    }
    if (used == 0) {
        throw std::invalid_argument("s2v_consistency: subject absent from every frame");
    }
    return acc / static_cast<double>(used);
}

// One minus the mean cosine similarity between frame backgrounds and
// reference backgrounds over all (frame, reference) pairs, clamped to [0, 1]
// for the non-negative default extractor.
inline double s2v_decoupling(const Tensor<float>& video, const Tensor<float>& subject_masks,
                             const std::vector<RegionPair>& refs,
                             const RegionExtractor& extract = histogram_embedding) {
    if (refs.empty()) throw std::invalid_argument("s2v_decoupling: need at least one reference");
    std::vector<RegionEmbedding> ref_embs;
    for (const auto& r : refs) {
        Tensor<float> bg = detail::complement(r.mask);
        if (mask_area(bg) == 0) {
            throw std::invalid_argument("s2v_decoupling: reference background empty");
        }
        ref_embs.push_back(extract(r.image, bg));
    }
    int64_t frames = video.extent(0);
    double acc = 0;
    int64_t pairs = 0;
    for (int64_t f = 0; f < frames; ++f) {
        Tensor<float> bg = detail::complement(detail::mask_of(subject_masks, f));
        if (mask_area(bg) == 0) {
            throw std::invalid_argument("s2v_decoupling: frame background empty");
        }
        RegionEmbedding emb = extract(detail::frame_of(video, f), bg);
        for (const auto& re : ref_embs) {
            acc += cosine_similarity(emb, re);
            ++pairs;
        }
    }
    double score = 1.0 - acc / static_cast<double>(pairs);
    return std::clamp(score, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// per-sample evaluation and reports
// ---------------------------------------------------------------------------

// One evaluated subject: its per-frame masks in the (generated) video plus
// its references.
struct SubjectEval {
    Tensor<float> masks; // [F, H, W]
    std::vector<RegionPair> refs;
};

struct SampleScores {
    int64_t id = 0;
    double consistency = 0;
    double decoupling = 0;
};

// Multi-subject aggregation: consistency per subject against its own
// references, averaged; decoupling over the union background against every
// reference background.
inline SampleScores evaluate_sample(int64_t id, const Tensor<float>& video,
                                    const std::vector<SubjectEval>& subjects,
                                    const RegionExtractor& extract = histogram_embedding) {
    if (subjects.empty()) throw std::invalid_argument("evaluate_sample: no subjects");
    SampleScores out;
    out.id = id;
    for (const auto& s : subjects) {
        out.consistency += s2v_consistency(video, s.masks, s.refs, extract);
    }
    out.consistency /= static_cast<double>(subjects.size());

    Tensor<float> union_masks = subjects[0].masks;
    for (size_t si = 1; si < subjects.size(); ++si) {
        for (int64_t i = 0; i < union_masks.numel(); ++i) {
            if (subjects[si].masks[i] != 0.0f) union_masks[i] = 1.0f;
        }
    }
    std::vector<RegionPair> all_refs;
    for (const auto& s : subjects) {
        all_refs.insert(all_refs.end(), s.refs.begin(), s.refs.end());
    }
    out.decoupling = s2v_decoupling(video, union_masks, all_refs, extract);
    return out;
}

struct MetricReport {
    std::string extractor_id = "hist72/v1";
    std::string mask_source_id = "oracle";
    std::string similarity = "cosine";
    std::string decoupling_aggregation = "mean_over_frame_reference_pairs";
    std::vector<SampleScores> per_sample;

    double mean_consistency() const {
        double a = 0;
        for (const auto& s : per_sample) a += s.consistency;
        return per_sample.empty() ? 0 : a / static_cast<double>(per_sample.size());
    }
    double mean_decoupling() const {
        double a = 0;
        for (const auto& s : per_sample) a += s.decoupling;
        return per_sample.empty() ? 0 : a / static_cast<double>(per_sample.size());
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json samples = nlohmann::ordered_json::array();
        for (const auto& s : per_sample) {
            samples.push_back(
                {{"id", s.id}, {"consistency", s.consistency}, {"decoupling", s.decoupling}});
        }
        return {{"schema_version", 1},
                {"kind", "s2v_metric_report"},
                {"extractor", extractor_id},
                {"mask_source", mask_source_id},
                {"similarity", similarity},
                {"decoupling_aggregation", decoupling_aggregation},
                {"corpus",
                 {{"consistency_mean", mean_consistency()},
                  {"decoupling_mean", mean_decoupling()},
                  {"count", per_sample.size()}}},
                {"samples", std::move(samples)}};
    }

    // Fixed-order console table: sample id, consistency, decoupling.
    std::string table() const {
        char line[128];
        std::string out = "sample  consistency  decoupling\n";
        for (const auto& s : per_sample) {
            std::snprintf(line, sizeof(line), "%6lld  %11.6f  %10.6f\n",
                          static_cast<long long>(s.id), s.consistency, s.decoupling);
            out += line;
        }
        std::snprintf(line, sizeof(line), "%6s  %11.6f  %10.6f\n", "mean", mean_consistency(),
                      mean_decoupling());
        out += line;
        return out;
    }
};

} // namespace s2v
