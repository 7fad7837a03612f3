#include <gtest/gtest.h>

#include "s2v/filters.hpp"
#include "s2v/rng.hpp"
#include "s2v/sprites.hpp"
#include "testutil.hpp"

using s2v::Box;
using s2v::Rng;
using s2v::Taxonomy;
using s2v::TaxonomyMatch;
using s2v::Tensor;

namespace {

// Counting oracle: rasterize integer boxes onto unit cells.
double iou_raster_oracle(const Box& a, const Box& b) {
    auto cells = [](const Box& box) {
        std::set<std::pair<int64_t, int64_t>> s;
        for (int64_t y = static_cast<int64_t>(box.y0); y < static_cast<int64_t>(box.y1); ++y)
            for (int64_t x = static_cast<int64_t>(box.x0); x < static_cast<int64_t>(box.x1); ++x)
                s.insert({x, y});
        return s;
    };
    auto ca = cells(a), cb = cells(b);
    size_t inter = 0;
    for (const auto& c : ca) inter += cb.count(c);
    size_t uni = ca.size() + cb.size() - inter;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Brute-force taxonomy oracle: enumerate every boundary-respecting substring
// match, then select leftmost-longest non-overlapping spans.
std::vector<TaxonomyMatch> taxonomy_oracle(const std::string& caption, const Taxonomy& tax) {
    std::string text = caption;
    std::transform(text.begin(), text.end(), text.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    auto word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
    std::vector<TaxonomyMatch> candidates;
    for (size_t i = 0; i < text.size(); ++i) {
        for (size_t j = i + 1; j <= text.size(); ++j) {
            if (i > 0 && word(text[i - 1])) continue;
            if (j < text.size() && word(text[j])) continue;
            std::string sub = text.substr(i, j - i);
            for (const auto& [cat, syns] : tax.categories) {
                for (const auto& s : syns) {
                    std::string ls = s;
                    std::transform(ls.begin(), ls.end(), ls.begin(), [](unsigned char c) {
                        return static_cast<char>(std::tolower(c));
                    });
                    if (sub == ls) candidates.push_back({cat, ls, i, j});
                }
            }
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.begin != b.begin) return a.begin < b.begin;
        return a.end > b.end;
    });
    std::vector<TaxonomyMatch> out;
    size_t cursor = 0;
    for (const auto& c : candidates) {
        if (c.begin >= cursor) {
            out.push_back(c);
            cursor = c.end;
        }
    }
    return out;
}

} // namespace

TEST(Iou, TrivialCases) {
    Box a{0, 0, 2, 2};
    EXPECT_DOUBLE_EQ(s2v::iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(s2v::iou(a, Box{5, 5, 7, 7}), 0.0);
    EXPECT_NEAR(s2v::iou(a, Box{1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
    EXPECT_NEAR(s2v::iou(a, Box{1, 1, 3, 3}), iou_raster_oracle(a, {1, 1, 3, 3}), 1e-12);
}

TEST(Iou, DegenerateUnionIsZero) {
    Box z{1, 1, 1, 1};
    EXPECT_DOUBLE_EQ(s2v::iou(z, z), 0.0);
}

TEST(Iou, NegativeExtentRejected) {
    EXPECT_THROW(s2v::iou(Box{2, 0, 0, 2}, Box{0, 0, 1, 1}), std::invalid_argument);
}

TEST(Iou, RandomIntegerBoxesAgainstRasterOracle) {
    Rng rng(201);
    auto rs = rng.stream("boxes");
    for (int round = 0; round < 300; ++round) {
        auto draw = [&]() {
            int64_t x0 = rs.uniform_int(0, 12), y0 = rs.uniform_int(0, 12);
            return Box{static_cast<double>(x0), static_cast<double>(y0),
                       static_cast<double>(x0 + rs.uniform_int(0, 6)),
                       static_cast<double>(y0 + rs.uniform_int(0, 6))};
        };
        Box a = draw(), b = draw();
        double got = s2v::iou(a, b);
        EXPECT_NEAR(got, iou_raster_oracle(a, b), 1e-9);
        EXPECT_NEAR(got, s2v::iou(b, a), 0.0);
        EXPECT_GE(got, 0.0);
        EXPECT_LE(got, 1.0);
        if (a.area() > 0 && got == 1.0) EXPECT_EQ(a, b);
    }
}

TEST(MaskBbox, TightBound) {
    Tensor<float> m({4, 5});
    m[1 * 5 + 2] = 1;
    m[2 * 5 + 4] = 1;
    Box b = s2v::mask_bbox(m);
    EXPECT_EQ(b, (Box{2, 1, 5, 3}));
    EXPECT_EQ(s2v::mask_bbox(Tensor<float>({3, 3})), Box{});
}

// --- filter battery --------------------------------------------------------

namespace {

s2v::SceneSpec basic_scene() {
    s2v::SceneSpec spec;
    spec.frames = 4;
    spec.height = 32;
    spec.width = 32;
    s2v::SubjectSpec s;
    s.shape = s2v::ShapeKind::Circle;
    s.fill_id = 0;
    s.size = 10;
    s.start_x = 16;
    s.start_y = 16;
    spec.subjects.push_back(s);
    return spec;
}

} // namespace

TEST(FilterSample, AcceptsCleanScene) {
    auto spec = basic_scene();
    auto r = s2v::render_scene(spec);
    auto v = s2v::filter_sample(r.video, r.masks, r.boxes, s2v::FilterConfig{});
    EXPECT_TRUE(v.accept) << v.reason;
}

TEST(FilterSample, OversizedSubjectRejectedAsSize) {
    auto spec = basic_scene();
    auto r = s2v::render_scene(spec);
    s2v::FilterConfig cfg;
    cfg.max_area_fraction = 0.05; // circle covers ~7.7% of 32x32
    auto v = s2v::filter_sample(r.video, r.masks, r.boxes, cfg);
    EXPECT_FALSE(v.accept);
    EXPECT_EQ(v.reason, "size");
}

TEST(FilterSample, AllBlackVideoRejectedAsBrightness) {
    auto spec = basic_scene();
    auto r = s2v::render_scene(spec);
    Tensor<float> black(r.video.shape());
    auto v = s2v::filter_sample(black, r.masks, r.boxes, s2v::FilterConfig{});
    EXPECT_FALSE(v.accept);
    EXPECT_EQ(v.reason, "brightness");
}

TEST(FilterSample, OverlapRejectedAsIou) {
    auto spec = basic_scene();
    s2v::SubjectSpec s2 = spec.subjects[0];
    s2.fill_id = 2;
    s2.start_x = 18; // heavy overlap with the first subject
    spec.subjects.push_back(s2);
    auto r = s2v::render_scene(spec);
    auto v = s2v::filter_sample(r.video, r.masks, r.boxes, s2v::FilterConfig{});
    EXPECT_FALSE(v.accept);
    EXPECT_EQ(v.reason, "iou");
}

TEST(FilterSample, BlurSweepMonotoneAndCrossesThreshold) {
    auto spec = basic_scene();
    auto r = s2v::render_scene(spec);
    double prev = std::numeric_limits<double>::infinity();
    bool crossed = false;
    s2v::FilterConfig cfg;
    cfg.blur_threshold = 2e-4;
    for (double sigma : {0.5, 1.0, 1.5, 2.0, 2.5}) {
        auto blurred = s2v::gaussian_blur_video(r.video, sigma);
        double score = s2v::laplacian_variance(s2v::mean_gray_frame(blurred));
        EXPECT_LT(score, prev) << "sigma " << sigma;
        prev = score;
        auto v = s2v::filter_sample(blurred, r.masks, r.boxes, cfg);
        if (!v.accept) {
            EXPECT_EQ(v.reason, "blur");
            crossed = true;
        }
    }
    EXPECT_TRUE(crossed);
}

TEST(FilterSample, ChecksRunInFixedOrder) {
    // a sample failing both size and brightness must report size first
    auto spec = basic_scene();
    auto r = s2v::render_scene(spec);
    Tensor<float> black(r.video.shape());
    s2v::FilterConfig cfg;
    cfg.max_area_fraction = 0.05;
    auto v = s2v::filter_sample(black, r.masks, r.boxes, cfg);
    EXPECT_EQ(v.reason, "size");
}

TEST(FilterConfig, BoundsValidated) {
    s2v::FilterConfig cfg;
    cfg.min_area_fraction = 0.7;
    cfg.max_area_fraction = 0.3;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

// --- taxonomy --------------------------------------------------------------

TEST(Taxonomy, SingleHitWithSpan) {
    Taxonomy tax;
    tax.categories["animal"] = {"fox"};
    auto m = s2v::match_taxonomy("a red fox jumps", tax);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].category, "animal");
    EXPECT_EQ(m[0].synonym, "fox");
    EXPECT_EQ(m[0].begin, 6u);
    EXPECT_EQ(m[0].end, 9u);
}

TEST(Taxonomy, WordBoundaryBlocksSubstring) {
    Taxonomy tax;
    tax.categories["animal"] = {"fox"};
    EXPECT_TRUE(s2v::match_taxonomy("foxglove blooms", tax).empty());
}

TEST(Taxonomy, LongestMatchWins) {
    Taxonomy tax;
    tax.categories["vehicle"] = {"sports car", "car"};
    auto m = s2v::match_taxonomy("a shiny sports car drives", tax);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].synonym, "sports car");
    EXPECT_EQ(m, taxonomy_oracle("a shiny sports car drives", tax));
}

TEST(Taxonomy, CaseInsensitive) {
    Taxonomy tax;
    tax.categories["animal"] = {"Fox"};
    auto m = s2v::match_taxonomy("A RED FOX", tax);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].synonym, "fox");
}

TEST(Taxonomy, DuplicateSynonymRejected) {
    Taxonomy tax;
    tax.categories["a"] = {"fox"};
    tax.categories["b"] = {"FOX"};
    EXPECT_THROW(s2v::match_taxonomy("text", tax), std::invalid_argument);
}

TEST(Taxonomy, EmptyTaxonomyRejected) {
    EXPECT_THROW(s2v::match_taxonomy("text", Taxonomy{}), std::invalid_argument);
}

TEST(Taxonomy, RandomCaptionsAgainstBruteForceOracle) {
    Taxonomy tax;
    tax.categories["vehicle"] = {"sports car", "car", "truck"};
    tax.categories["animal"] = {"fox", "red fox", "owl"};
    tax.categories["plant"] = {"foxglove", "fern"};
    std::vector<std::string> lexicon = {"sports", "car",  "truck", "fox",  "red",
                                        "owl",    "fern", "glove", "a",    "the",
                                        "foxglove", "carpet", "jumps", "owls"};
    Rng rng(202);
    for (int round = 0; round < 300; ++round) {
        auto rs = rng.stream("caption", static_cast<uint64_t>(round));
        std::string caption;
        int words = static_cast<int>(rs.uniform_int(1, 10));
        for (int wi = 0; wi < words; ++wi) {
            if (wi) caption += ' ';
            caption += lexicon[static_cast<size_t>(
                rs.uniform_int(0, static_cast<int64_t>(lexicon.size()) - 1))];
        }
        EXPECT_EQ(s2v::match_taxonomy(caption, tax), taxonomy_oracle(caption, tax)) << caption;
    }
}
