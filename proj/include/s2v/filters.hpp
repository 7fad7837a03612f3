#pragma once

// Quality filters for generated samples: size bounds, pairwise box overlap,
// brightness and blur checks, plus the caption-to-taxonomy matcher. Filters
// return verdicts, not errors.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2v/tensor.hpp"

namespace s2v {

// Axis-aligned box, half-open pixel convention: [x0, x1) x [y0, y1).
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
    bool operator==(const Box&) const = default;
};

inline double iou(const Box& a, const Box& b) {
    if (a.x1 < a.x0 || a.y1 < a.y0 || b.x1 < b.x0 || b.y1 < b.y0) {
        throw std::invalid_argument("iou: box with negative extent");
    }
    double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// Tight bounding box of a binary mask [H, W]; zero box when empty.
inline Box mask_bbox(const Tensor<float>& mask) {
    int64_t h = mask.extent(mask.rank() - 2), w = mask.extent(mask.rank() - 1);
    int64_t xmin = w, xmax = -1, ymin = h, ymax = -1;
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            if (mask[y * w + x] != 0.0f) {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
    }
    if (xmax < 0) return {};
    return {static_cast<double>(xmin), static_cast<double>(ymin), static_cast<double>(xmax + 1),
            static_cast<double>(ymax + 1)};
}

inline double mask_area(const Tensor<float>& mask) {
    double a = 0;
    for (int64_t i = 0; i < mask.numel(); ++i) a += mask[i] != 0.0f ? 1.0 : 0.0;
    return a;
}

// ---------------------------------------------------------------------------
// image statistics
// ---------------------------------------------------------------------------

// Rec.601 luma of an RGB image [3, H, W].
inline Tensor<float> to_gray(const Tensor<float>& image) {
    int64_t h = image.extent(1), w = image.extent(2);
    Tensor<float> g({h, w});
    const float* r = image.data();
    const float* gg = image.data() + h * w;
    const float* b = image.data() + 2 * h * w;
    for (int64_t i = 0; i < h * w; ++i) {
        g[i] = 0.299f * r[i] + 0.587f * gg[i] + 0.114f * b[i];
    }
    return g;
}

// Mean luma over a whole video [F, 3, H, W].
inline double mean_luminance(const Tensor<float>& video) {
    int64_t frames = video.extent(0), h = video.extent(2), w = video.extent(3);
    double acc = 0;
    for (int64_t f = 0; f < frames; ++f) {
        Tensor<float> frame({3, h, w});
        std::copy(video.data() + f * 3 * h * w, video.data() + (f + 1) * 3 * h * w, frame.data());
        auto g = to_gray(frame);
        for (int64_t i = 0; i < g.numel(); ++i) acc += g[i];
    }
    return acc / static_cast<double>(frames * h * w);
}

// Temporal-mean grayscale frame of a video.
inline Tensor<float> mean_gray_frame(const Tensor<float>& video) {
    int64_t frames = video.extent(0), h = video.extent(2), w = video.extent(3);
    Tensor<float> acc({h, w});
    for (int64_t f = 0; f < frames; ++f) {
        Tensor<float> frame({3, h, w});
        std::copy(video.data() + f * 3 * h * w, video.data() + (f + 1) * 3 * h * w, frame.data());
        auto g = to_gray(frame);
        for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] / static_cast<float>(frames);
    }
    return acc;
}

// Variance of the 3x3 Laplacian response over interior pixels; the sharpness
// score used by the blur filter.
inline double laplacian_variance(const Tensor<float>& gray) {
    int64_t h = gray.extent(0), w = gray.extent(1);
    if (h < 3 || w < 3) return 0.0;
    std::vector<double> resp;
    resp.reserve(static_cast<size_t>((h - 2) * (w - 2)));
    for (int64_t y = 1; y + 1 < h; ++y) {
        for (int64_t x = 1; x + 1 < w; ++x) {
            double v = gray[(y - 1) * w + x] + gray[(y + 1) * w + x] + gray[y * w + x - 1] +
                       gray[y * w + x + 1] - 4.0 * gray[y * w + x];
            resp.push_back(v);
        }
    }
    double mean = 0;
    for (double v : resp) mean += v;
    mean /= static_cast<double>(resp.size());
    double var = 0;
    for (double v : resp) var += (v - mean) * (v - mean);
    return var / static_cast<double>(resp.size());
}

// Separable Gaussian blur with reflected borders, applied per channel.
inline Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma) {
    if (sigma <= 0) return image;
    int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0;
    for (int64_t i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    int64_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
    auto reflect = [](int64_t i, int64_t n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - i - 1;
        }
        return i;
    };
    Tensor<float> tmp({c, h, w}), out({c, h, w});
    for (int64_t ch = 0; ch < c; ++ch) {
        const float* src = image.data() + ch * h * w;
        float* mid = tmp.data() + ch * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0;
                for (int64_t k = -radius; k <= radius; ++k) {
                    acc += kernel[static_cast<size_t>(k + radius)] * src[y * w + reflect(x + k, w)];
                }
                mid[y * w + x] = static_cast<float>(acc);
            }
        float* dst = out.data() + ch * h * w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double acc = 0;
                for (int64_t k = -radius; k <= radius; ++k) {
                    acc += kernel[static_cast<size_t>(k + radius)] * mid[reflect(y + k, h) * w + x];
                }
                dst[y * w + x] = static_cast<float>(acc);
            }
    }
    return out;
}

inline Tensor<float> gaussian_blur_video(const Tensor<float>& video, double sigma) {
    int64_t frames = video.extent(0), c = video.extent(1), h = video.extent(2),
            w = video.extent(3);
    Tensor<float> out(video.shape());
    for (int64_t f = 0; f < frames; ++f) {
        Tensor<float> frame({c, h, w});
        std::copy(video.data() + f * c * h * w, video.data() + (f + 1) * c * h * w, frame.data());
        auto blurred = gaussian_blur(frame, sigma);
        std::copy(blurred.data(), blurred.data() + blurred.numel(), out.data() + f * c * h * w);
    }
    return out;
}

// ---------------------------------------------------------------------------
// filter battery
// ---------------------------------------------------------------------------

struct FilterConfig {
    double min_area_fraction = 0.01;
    double max_area_fraction = 0.50;
    double max_pairwise_iou = 0.10;
    double min_brightness = 0.05;
    double max_brightness = 0.95;
    double blur_threshold = 1e-4; // minimum Laplacian variance

    void validate() const {
        if (!(0.0 <= min_area_fraction && min_area_fraction < max_area_fraction &&
              max_area_fraction <= 1.0)) {
            throw std::invalid_argument("filters: area fraction bounds must satisfy 0 <= min < max <= 1");
        }
        if (max_pairwise_iou < 0 || blur_threshold < 0) {
            throw std::invalid_argument("filters: thresholds must be non-negative");
        }
        if (!(0.0 <= min_brightness && min_brightness < max_brightness && max_brightness <= 1.0)) {
            throw std::invalid_argument("filters: brightness bounds must satisfy 0 <= min < max <= 1");
        }
    }
};

struct FilterVerdict {
    bool accept = true;
    std::string reason; // first failing check: size | iou | brightness | blur

    static FilterVerdict rejected(std::string why) { return {false, std::move(why)}; }
};

// Checks run in fixed order (size, iou, brightness, blur); the verdict names
// the first failure.
inline FilterVerdict filter_sample(const Tensor<float>& video,
                                   const std::vector<Tensor<float>>& subject_masks,
                                   const std::vector<std::vector<Box>>& subject_boxes,
                                   const FilterConfig& cfg) {
    cfg.validate();
    if (subject_masks.empty()) {
        throw std::invalid_argument("filter_sample: masks must be present");
    }
    int64_t frames = video.extent(0), h = video.extent(2), w = video.extent(3);
    double frame_px = static_cast<double>(h * w);

    for (const auto& mask : subject_masks) {
        for (int64_t f = 0; f < frames; ++f) {
            Tensor<float> m({h, w});
            std::copy(mask.data() + f * h * w, mask.data() + (f + 1) * h * w, m.data());
            double frac = mask_area(m) / frame_px;
            if (frac < cfg.min_area_fraction || frac > cfg.max_area_fraction) {
                return FilterVerdict::rejected("size");
            }
        }
    }
    for (int64_t f = 0; f < frames; ++f) {
        for (size_t a = 0; a < subject_boxes.size(); ++a) {
            for (size_t b = a + 1; b < subject_boxes.size(); ++b) {
                if (iou(subject_boxes[a][static_cast<size_t>(f)],
                        subject_boxes[b][static_cast<size_t>(f)]) > cfg.max_pairwise_iou) {
                    return FilterVerdict::rejected("iou");
                }
            }
        }
    }
    double lum = mean_luminance(video);
    if (lum < cfg.min_brightness || lum > cfg.max_brightness) {
        return FilterVerdict::rejected("brightness");
    }
    if (laplacian_variance(mean_gray_frame(video)) < cfg.blur_threshold) {
        return FilterVerdict::rejected("blur");
    }
    return {};
}

// ---------------------------------------------------------------------------
// taxonomy matching
// ---------------------------------------------------------------------------

struct Taxonomy {
    // category name -> synonym strings (normalized to lower case on load)
    std::map<std::string, std::vector<std::string>> categories;

    void validate() const {
        std::set<std::string> seen;
        for (const auto& [cat, syns] : categories) {
            for (const auto& s : syns) {
                std::string norm = s;
                std::transform(norm.begin(), norm.end(), norm.begin(),
                               [](unsigned char c) { return std::tolower(c); });
                if (!seen.insert(norm).second) {
                    throw std::invalid_argument("taxonomy: duplicate synonym '" + norm + "'");
                }
            }
        }
    }
};

struct TaxonomyMatch {
    std::string category;
    std::string synonym;
    size_t begin = 0; // byte span in the caption
    size_t end = 0;

    bool operator==(const TaxonomyMatch&) const = default;
};

namespace detail {

inline bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace detail

// Case-insensitive, word-boundary-respecting scan; at each position the
// longest synonym wins and consumed spans are never re-matched. Matches are
// reported in span-start order.
inline std::vector<TaxonomyMatch> match_taxonomy(const std::string& caption,
                                                 const Taxonomy& taxonomy) {
    if (taxonomy.categories.empty()) {
        throw std::invalid_argument("match_taxonomy: empty taxonomy");
    }
    taxonomy.validate();
    std::string text = detail::lower(caption);

    // synonym -> category, synonyms sorted by descending length for the scan
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& [cat, syns] : taxonomy.categories) {
        for (const auto& s : syns) entries.emplace_back(detail::lower(s), cat);
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.first.size() != b.first.size()) return a.first.size() > b.first.size();
        return a.first < b.first;
    });

    std::vector<TaxonomyMatch> out;
    size_t i = 0;
    while (i < text.size()) {
        if (!detail::word_char(text[i]) || (i > 0 && detail::word_char(text[i - 1]))) {
            ++i;
            continue;
        }
        bool matched = false;
        for (const auto& [syn, cat] : entries) {
            if (syn.empty() || i + syn.size() > text.size()) continue;
            if (text.compare(i, syn.size(), syn) != 0) continue;
            size_t end = i + syn.size();
            if (end < text.size() && detail::word_char(text[end])) continue;
            out.push_back({cat, syn, i, end});
            i = end;
            matched = true;
            break;
        }
        if (!matched) ++i;
    }
    return out;
}

} // namespace s2v
