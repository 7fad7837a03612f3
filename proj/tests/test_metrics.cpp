#include <gtest/gtest.h>

#include "s2v/metrics.hpp"
#include "s2v/sprites.hpp"
#include "testutil.hpp"

using s2v::RegionPair;
using s2v::Tensor;

namespace {

// uniform-color image with a centered square mask
struct Region {
    Tensor<float> image;
    Tensor<float> mask;
};

Region uniform_region(float r, float g, float b, int64_t n = 16, float bg_r = 0.5f,
                      float bg_g = 0.5f, float bg_b = 0.5f) {
    Region out;
    out.image = Tensor<float>({3, n, n});
    out.mask = Tensor<float>({n, n});
    for (int64_t y = 0; y < n; ++y) {
        for (int64_t x = 0; x < n; ++x) {
            bool inside = x >= n / 4 && x < 3 * n / 4 && y >= n / 4 && y < 3 * n / 4;
            out.image[(0 * n + y) * n + x] = inside ? r : bg_r;
            out.image[(1 * n + y) * n + x] = inside ? g : bg_g;
            out.image[(2 * n + y) * n + x] = inside ? b : bg_b;
            out.mask[y * n + x] = inside ? 1.0f : 0.0f;
        }
    }
    return out;
}

Tensor<float> repeat_frames(const Tensor<float>& image, int64_t frames) {
    int64_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
    Tensor<float> video({frames, c, h, w});
    for (int64_t f = 0; f < frames; ++f) {
        std::copy(image.data(), image.data() + image.numel(), video.data() + f * image.numel());
    }
    return video;
}

Tensor<float> repeat_masks(const Tensor<float>& mask, int64_t frames) {
    int64_t h = mask.extent(0), w = mask.extent(1);
    Tensor<float> masks({frames, h, w});
    for (int64_t f = 0; f < frames; ++f) {
        std::copy(mask.data(), mask.data() + mask.numel(), masks.data() + f * mask.numel());
    }
    return masks;
}

} // namespace

TEST(EmbedRegion, DeterministicAndUnitNorm) {
    auto reg = uniform_region(0.9f, 0.1f, 0.1f);
    auto a = s2v::histogram_embedding(reg.image, reg.mask);
    auto b = s2v::histogram_embedding(reg.image, reg.mask);
    EXPECT_EQ(a.v, b.v);
    EXPECT_NEAR(a.norm(), 1.0, 1e-6);
}

TEST(EmbedRegion, IdenticalImagesFullSimilarity) {
    auto reg = uniform_region(0.2f, 0.7f, 0.3f);
    auto a = s2v::histogram_embedding(reg.image, reg.mask);
    Tensor<float> copy = reg.image;
    auto b = s2v::histogram_embedding(copy, reg.mask);
    EXPECT_NEAR(s2v::cosine_similarity(a, b), 1.0, 1e-9);
}

TEST(EmbedRegion, RedVsBlueWellSeparated) {
    auto red = uniform_region(0.9f, 0.05f, 0.05f);
    auto blue = uniform_region(0.05f, 0.05f, 0.9f);
    auto a = s2v::histogram_embedding(red.image, red.mask);
    auto b = s2v::histogram_embedding(blue.image, blue.mask);
    EXPECT_LT(s2v::cosine_similarity(a, b), 0.5);
}

TEST(EmbedRegion, EmptyRegionRejected) {
    auto reg = uniform_region(0.5f, 0.5f, 0.5f);
    Tensor<float> empty(reg.mask.shape());
    EXPECT_THROW(s2v::histogram_embedding(reg.image, empty), std::invalid_argument);
}

TEST(Consistency, SelfSimilarityIsOne) {
    auto reg = uniform_region(0.9f, 0.2f, 0.1f);
    auto video = repeat_frames(reg.image, 4);
    auto masks = repeat_masks(reg.mask, 4);
    std::vector<RegionPair> refs = {{reg.image, reg.mask}};
    EXPECT_NEAR(s2v::s2v_consistency(video, masks, refs), 1.0, 1e-6);
}

TEST(Consistency, MaxPicksIdenticalReference) {
    auto reg = uniform_region(0.9f, 0.2f, 0.1f);
    auto other = uniform_region(0.1f, 0.2f, 0.9f);
    auto video = repeat_frames(reg.image, 3);
    auto masks = repeat_masks(reg.mask, 3);
    std::vector<RegionPair> refs = {{other.image, other.mask}, {reg.image, reg.mask}};
    EXPECT_NEAR(s2v::s2v_consistency(video, masks, refs), 1.0, 1e-6);
}

TEST(Consistency, HandBuiltMeanOfMax) {
    // 3 frames x 2 refs: expected value computed by direct embedding calls
    auto f0 = uniform_region(0.9f, 0.1f, 0.1f);
    auto f1 = uniform_region(0.1f, 0.9f, 0.1f);
    auto f2 = uniform_region(0.6f, 0.6f, 0.1f);
    auto r0 = uniform_region(0.85f, 0.15f, 0.1f);
    auto r1 = uniform_region(0.1f, 0.85f, 0.15f);

    int64_t n = 16;
    Tensor<float> video({3, 3, n, n});
    for (int64_t f = 0; f < 3; ++f) {
        const auto& src = f == 0 ? f0.image : f == 1 ? f1.image : f2.image;
        std::copy(src.data(), src.data() + src.numel(), video.data() + f * src.numel());
    }
    auto masks = repeat_masks(f0.mask, 3);
    std::vector<RegionPair> refs = {{r0.image, r0.mask}, {r1.image, r1.mask}};

    double expected = 0;
    for (const auto* frame : {&f0, &f1, &f2}) {
        auto fe = s2v::histogram_embedding(frame->image, frame->mask);
        double best = -1;
        for (const auto* ref : {&r0, &r1}) {
            auto re = s2v::histogram_embedding(ref->image, ref->mask);
            best = std::max(best, s2v::cosine_similarity(fe, re));
        }
        expected += best / 3.0;
    }
    EXPECT_NEAR(s2v::s2v_consistency(video, masks, refs), expected, 1e-12);
}

TEST(Consistency, MonotoneWhenAddingIdenticalReference) {
    auto reg = uniform_region(0.8f, 0.3f, 0.2f);
    auto far = uniform_region(0.1f, 0.3f, 0.9f);
    auto video = repeat_frames(reg.image, 2);
    auto masks = repeat_masks(reg.mask, 2);
    std::vector<RegionPair> weak = {{far.image, far.mask}};
    std::vector<RegionPair> strong = {{far.image, far.mask}, {reg.image, reg.mask}};
    EXPECT_GE(s2v::s2v_consistency(video, masks, strong),
              s2v::s2v_consistency(video, masks, weak));
}

TEST(Consistency, SubjectAbsentSignalled) {
    auto reg = uniform_region(0.8f, 0.3f, 0.2f);
    auto video = repeat_frames(reg.image, 2);
    Tensor<float> empty({2, 16, 16});
    std::vector<RegionPair> refs = {{reg.image, reg.mask}};
    try {
        s2v::s2v_consistency(video, empty, refs);
        FAIL() << "expected subject-absent error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("subject absent"), std::string::npos);
    }
}

TEST(Consistency, FrameOrderInvariant) {
    auto a = uniform_region(0.9f, 0.1f, 0.1f);
    auto b = uniform_region(0.1f, 0.9f, 0.1f);
    int64_t n = 16;
    Tensor<float> video({2, 3, n, n});
    std::copy(a.image.data(), a.image.data() + a.image.numel(), video.data());
    std::copy(b.image.data(), b.image.data() + b.image.numel(), video.data() + a.image.numel());
    Tensor<float> reversed({2, 3, n, n});
    std::copy(b.image.data(), b.image.data() + b.image.numel(), reversed.data());
    std::copy(a.image.data(), a.image.data() + a.image.numel(),
              reversed.data() + a.image.numel());
    auto masks = repeat_masks(a.mask, 2);
    std::vector<RegionPair> refs = {{a.image, a.mask}};
    EXPECT_NEAR(s2v::s2v_consistency(video, masks, refs),
                s2v::s2v_consistency(reversed, masks, refs), 1e-12);
    EXPECT_NEAR(s2v::s2v_decoupling(video, masks, refs),
                s2v::s2v_decoupling(reversed, masks, refs), 1e-12);
}

TEST(Consistency, IgnoresBackgroundEdits) {
    auto reg = uniform_region(0.9f, 0.2f, 0.1f);
    auto video = repeat_frames(reg.image, 2);
    auto masks = repeat_masks(reg.mask, 2);
    std::vector<RegionPair> refs = {{reg.image, reg.mask}};
    double before = s2v::s2v_consistency(video, masks, refs);

    Tensor<float> edited = video;
    int64_t n = 16;
    for (int64_t f = 0; f < 2; ++f)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < n * n; ++i)
                if (reg.mask[i] == 0.0f) edited[(f * 3 + c) * n * n + i] = 0.05f * (float)(c + 1);
    EXPECT_NEAR(s2v::s2v_consistency(edited, masks, refs), before, 1e-12);
}

TEST(Decoupling, IdenticalBackgroundsScoreZero) {
    auto reg = uniform_region(0.9f, 0.2f, 0.1f);
    auto video = repeat_frames(reg.image, 3);
    auto masks = repeat_masks(reg.mask, 3);
    std::vector<RegionPair> refs = {{reg.image, reg.mask}};
    EXPECT_NEAR(s2v::s2v_decoupling(video, masks, refs), 0.0, 1e-6);
}

TEST(Decoupling, OrthogonalBackgroundsScoreOne) {
    // uniform backgrounds in different histogram bins produce orthogonal
    // non-negative embeddings
    auto a = uniform_region(0.9f, 0.2f, 0.1f, 16, 0.05f, 0.05f, 0.05f);
    auto b = uniform_region(0.9f, 0.2f, 0.1f, 16, 0.95f, 0.95f, 0.95f);
    auto video = repeat_frames(a.image, 2);
    auto masks = repeat_masks(a.mask, 2);
    std::vector<RegionPair> refs = {{b.image, b.mask}};
    EXPECT_NEAR(s2v::s2v_decoupling(video, masks, refs), 1.0, 1e-6);
}

TEST(Decoupling, MonotoneTriplet) {
    // fixed video; reference backgrounds at increasing histogram distance
    auto vid_reg = uniform_region(0.9f, 0.2f, 0.1f, 16, 0.1f, 0.1f, 0.1f);
    auto video = repeat_frames(vid_reg.image, 2);
    auto masks = repeat_masks(vid_reg.mask, 2);

    // same background, half-mixed background, fully different background
    auto ref_same = uniform_region(0.9f, 0.2f, 0.1f, 16, 0.1f, 0.1f, 0.1f);
    auto ref_mid = uniform_region(0.9f, 0.2f, 0.1f, 16, 0.1f, 0.1f, 0.1f);
    {
        int64_t n = 16;
        for (int64_t y = 0; y < n; ++y)
            for (int64_t x = 0; x < n; ++x)
                if (ref_mid.mask[y * n + x] == 0.0f && x % 2 == 0) {
                    ref_mid.image[(0 * n + y) * n + x] = 0.9f;
                    ref_mid.image[(1 * n + y) * n + x] = 0.9f;
                    ref_mid.image[(2 * n + y) * n + x] = 0.9f;
                }
    }
    auto ref_far = uniform_region(0.9f, 0.2f, 0.1f, 16, 0.9f, 0.9f, 0.9f);

    double d0 = s2v::s2v_decoupling(video, masks, {{ref_same.image, ref_same.mask}});
    double d1 = s2v::s2v_decoupling(video, masks, {{ref_mid.image, ref_mid.mask}});
    double d2 = s2v::s2v_decoupling(video, masks, {{ref_far.image, ref_far.mask}});
    EXPECT_LT(d0, d1);
    EXPECT_LT(d1, d2);
}

TEST(Decoupling, IgnoresSubjectEdits) {
    auto reg = uniform_region(0.9f, 0.2f, 0.1f);
    auto video = repeat_frames(reg.image, 2);
    auto masks = repeat_masks(reg.mask, 2);
    std::vector<RegionPair> refs = {{reg.image, reg.mask}};
    double before = s2v::s2v_decoupling(video, masks, refs);
    Tensor<float> edited = video;
    int64_t n = 16;
    for (int64_t f = 0; f < 2; ++f)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < n * n; ++i)
                if (reg.mask[i] != 0.0f) edited[(f * 3 + c) * n * n + i] = 0.33f;
    EXPECT_NEAR(s2v::s2v_decoupling(edited, masks, refs), before, 1e-12);
}

TEST(Decoupling, EmptyBackgroundRejected) {
    auto reg = uniform_region(0.9f, 0.2f, 0.1f);
    Tensor<float> full({2, 16, 16});
    for (int64_t i = 0; i < full.numel(); ++i) full[i] = 1.0f;
    auto video = repeat_frames(reg.image, 2);
    std::vector<RegionPair> refs = {{reg.image, reg.mask}};
    EXPECT_THROW(s2v::s2v_decoupling(video, full, refs), std::invalid_argument);
}

// --- multi-subject aggregation and report -----------------------------------

TEST(EvaluateSample, AveragesPerSubjectConsistency) {
    auto a = uniform_region(0.9f, 0.1f, 0.1f);
    auto b = uniform_region(0.1f, 0.1f, 0.9f);
    auto video = repeat_frames(a.image, 2);
    std::vector<s2v::SubjectEval> subjects(2);
    subjects[0].masks = repeat_masks(a.mask, 2);
    subjects[0].refs = {{a.image, a.mask}};
    subjects[1].masks = repeat_masks(a.mask, 2);
    subjects[1].refs = {{b.image, b.mask}};
    auto scores = s2v::evaluate_sample(1, video, subjects);
    double c0 = s2v::s2v_consistency(video, subjects[0].masks, subjects[0].refs);
    double c1 = s2v::s2v_consistency(video, subjects[1].masks, subjects[1].refs);
    EXPECT_NEAR(scores.consistency, (c0 + c1) / 2, 1e-12);
}

TEST(MetricReport, TableAndJsonCarryIds) {
    s2v::MetricReport report;
    report.per_sample = {{0, 0.9, 0.2}, {1, 0.8, 0.4}};
    auto j = report.to_json();
    EXPECT_EQ(j.at("extractor"), "hist72/v1");
    EXPECT_EQ(j.at("mask_source"), "oracle");
    EXPECT_NEAR(j.at("corpus").at("consistency_mean").get<double>(), 0.85, 1e-12);
    auto table = report.table();
    EXPECT_NE(table.find("consistency"), std::string::npos);
    EXPECT_NE(table.find("mean"), std::string::npos);
}

TEST(ColorSegmenter, RecoversSpriteMask) {
    s2v::SceneSpec spec;
    spec.frames = 1;
    spec.height = spec.width = 32;
    spec.background_id = 0;
    s2v::SubjectSpec s;
    s.shape = s2v::ShapeKind::Circle;
    s.fill_id = 2;
    s.size = 12;
    s.start_x = 16;
    s.start_y = 16;
    spec.subjects.push_back(s);
    auto r = s2v::render_scene(spec);
    Tensor<float> frame({3, 32, 32});
    std::copy(r.video.data(), r.video.data() + frame.numel(), frame.data());
    auto seg = s2v::color_segment_mask(frame);
    Tensor<float> gt({32, 32});
    std::copy(r.masks[0].data(), r.masks[0].data() + gt.numel(), gt.data());
    // IoU of segmented vs ground truth
    double inter = 0, uni = 0;
    for (int64_t i = 0; i < gt.numel(); ++i) {
        inter += (gt[i] != 0 && seg[i] != 0) ? 1 : 0;
        uni += (gt[i] != 0 || seg[i] != 0) ? 1 : 0;
    }
    EXPECT_GT(inter / uni, 0.9);
}
