#include <gtest/gtest.h>

#include "s2v/dit.hpp"
#include "s2v/flowmatch.hpp"
#include "testutil.hpp"

#include <numeric>

using s2v::DiTConfig;
using s2v::ParamStore;
using s2v::PatchSize;
using s2v::Rng;
using s2v::RopeConfig;
using s2v::RopeVariant;
using s2v::Tensor;
using s2v::VideoTokens;

namespace {

DiTConfig tiny_config() {
    DiTConfig cfg;
    cfg.model_dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.patch = {1, 2};
    cfg.channels = 1;
    cfg.text_vocab_size = 6;
    cfg.text_dim = 4;
    cfg.max_refs = 3;
    cfg.rope = RopeConfig::proportional(4);
    cfg.variant = RopeVariant::ShiftWH;
    return cfg;
}

template <class S>
VideoTokens<S> random_video_tokens(Rng& rng, const char* label, int64_t frames, int64_t rows,
                                   int64_t cols, int64_t dim) {
    auto rs = rng.stream(label);
    VideoTokens<S> v;
    v.frames = frames;
    v.rows = rows;
    v.cols = cols;
    v.tokens = testutil::random_tensor<S>(rs, {frames * rows * cols, dim});
    return v;
}

template <class S>
void perturb_params(ParamStore<S>& ps, uint64_t seed, double stddev) {
    Rng rng(seed);
    for (auto& [name, t] : ps.params) {
        auto rs = rng.stream("perturb", s2v::detail::fnv1a64(name));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] += static_cast<S>(rs.normal() * stddev);
    }
}

} // namespace

// --- patchify / unpatchify -------------------------------------------------

TEST(Patchify, CountsTokenGrid) {
    Tensor<double> px({4, 3, 8, 8});
    auto tok = s2v::patchify(px, PatchSize{1, 4});
    EXPECT_EQ(tok.frames, 4);
    EXPECT_EQ(tok.rows, 2);
    EXPECT_EQ(tok.cols, 2);
    EXPECT_EQ(tok.count(), 16);
    EXPECT_EQ(tok.dim(), 3 * 1 * 4 * 4);
}

TEST(Patchify, UnitPatchEqualsPixelGrid) {
    Rng rng(1);
    auto rs = rng.stream("px");
    auto px = testutil::random_tensor<double>(rs, {2, 3, 4, 5});
    auto tok = s2v::patchify(px, PatchSize{1, 1});
    EXPECT_EQ(tok.frames, 2);
    EXPECT_EQ(tok.rows, 4);
    EXPECT_EQ(tok.cols, 5);
    EXPECT_EQ(tok.dim(), 3);
    // token (t, h, w) carries the pixel's channel triple
    for (int64_t f = 0; f < 2; ++f)
        for (int64_t y = 0; y < 4; ++y)
            for (int64_t x = 0; x < 5; ++x)
                for (int64_t c = 0; c < 3; ++c) {
                    int64_t n = (f * 4 + y) * 5 + x;
                    EXPECT_EQ(tok.tokens[n * 3 + c], px[((f * 3 + c) * 4 + y) * 5 + x]);
                }
}

TEST(Patchify, RoundTripExact) {
    Rng rng(2);
    for (int round = 0; round < 10; ++round) {
        auto rs = rng.stream("rt", static_cast<uint64_t>(round));
        int64_t pt = rs.uniform_int(1, 2), ps = rs.uniform_int(1, 3);
        int64_t f = pt * rs.uniform_int(1, 3);
        int64_t c = rs.uniform_int(1, 3);
        int64_t h = ps * rs.uniform_int(1, 3);
        int64_t w = ps * rs.uniform_int(1, 3);
        auto px = testutil::random_tensor<float>(rs, {f, c, h, w});
        auto tok = s2v::patchify(px, PatchSize{pt, ps});
        auto back = s2v::unpatchify(tok, PatchSize{pt, ps}, c);
        ASSERT_EQ(back.shape(), px.shape());
        EXPECT_EQ(testutil::max_abs_diff(back, px), 0.0);
    }
}

TEST(Patchify, RoundTripWithIdentityProjection) {
    Rng rng(3);
    auto rs = rng.stream("proj");
    auto px = testutil::random_tensor<double>(rs, {2, 2, 4, 4});
    int64_t pdim = 2 * 1 * 2 * 2;
    Tensor<double> eye({pdim, pdim});
    for (int64_t i = 0; i < pdim; ++i) eye[i * pdim + i] = 1.0;
    auto tok = s2v::patchify(px, PatchSize{1, 2}, &eye);
    auto back = s2v::unpatchify(tok, PatchSize{1, 2}, 2);
    EXPECT_LT(testutil::max_abs_diff(back, px), 1e-15);
}

TEST(Patchify, SingleTokenDegenerateCase) {
    Tensor<float> px({1, 3, 4, 4});
    px[5] = 2.5f;
    auto tok = s2v::patchify(px, PatchSize{1, 4});
    EXPECT_EQ(tok.count(), 1);
    auto back = s2v::unpatchify(tok, PatchSize{1, 4}, 3);
    EXPECT_EQ(testutil::max_abs_diff(back, px), 0.0);
}

TEST(Patchify, IndivisibleExtentsReportPadding) {
    Tensor<float> px({3, 3, 9, 10});
    try {
        s2v::patchify(px, PatchSize{2, 4});
        FAIL() << "expected padding error";
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("(1, 3, 2)"), std::string::npos) << msg;
    }
}

TEST(Unpatchify, InconsistentGridRejected) {
    VideoTokens<float> tok;
    tok.frames = 2;
    tok.rows = 2;
    tok.cols = 2;
    tok.tokens = Tensor<float>({7, 12}); // wrong token count
    EXPECT_THROW(s2v::unpatchify(tok, PatchSize{1, 2}, 3), std::invalid_argument);
}

// --- init ------------------------------------------------------------------

TEST(InitParams, DeterministicAndSeedSensitive) {
    auto cfg = tiny_config();
    auto a = s2v::dit_init_params<float>(cfg, 11);
    auto b = s2v::dit_init_params<float>(cfg, 11);
    auto c = s2v::dit_init_params<float>(cfg, 12);
    ASSERT_EQ(a.params.size(), b.params.size());
    bool any_diff_c = false;
    for (const auto& [name, t] : a.params) {
        EXPECT_EQ(testutil::max_abs_diff(t, b.at(name)), 0.0) << name;
        if (testutil::max_abs_diff(t, c.at(name)) > 0) any_diff_c = true;
    }
    EXPECT_TRUE(any_diff_c);
}

TEST(InitParams, FreshForwardIsZeroBias) {
    auto cfg = tiny_config();
    auto params = s2v::dit_init_params<double>(cfg, 5);
    Rng rng(7);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    auto ref = random_video_tokens<double>(rng, "r", 1, 1, 2, cfg.patch_dim());
    auto out = s2v::dit_predict(params, cfg, video, {ref}, {0, 1, 2}, 0.5);
    EXPECT_TRUE(out.tokens.all_finite());
    for (int64_t i = 0; i < out.tokens.numel(); ++i) {
        EXPECT_LT(std::abs(out.tokens[i]), 10.0);
    }
}

// --- forward ---------------------------------------------------------------

TEST(Forward, OutputShapeMatchesVideoForAllRefCounts) {
    auto cfg = tiny_config();
    auto params = s2v::dit_init_params<double>(cfg, 3);
    perturb_params(params, 99, 0.05);
    Rng rng(9);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    for (int n = 0; n <= 3; ++n) {
        std::vector<VideoTokens<double>> refs;
        for (int i = 0; i < n; ++i) {
            refs.push_back(random_video_tokens<double>(rng, "r", 1, 2, 2, cfg.patch_dim()));
        }
        auto out = s2v::dit_predict(params, cfg, video, refs, {1, 2}, 0.25);
        EXPECT_EQ(out.tokens.shape(), video.tokens.shape()) << "refs = " << n;
    }
}

TEST(Forward, PreconditionsRejected) {
    auto cfg = tiny_config();
    cfg.max_refs = 1;
    auto params = s2v::dit_init_params<double>(cfg, 3);
    Rng rng(10);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    auto ref = random_video_tokens<double>(rng, "r", 1, 1, 1, cfg.patch_dim());
    EXPECT_THROW(s2v::dit_predict(params, cfg, video, {ref, ref}, {0}, 0.5),
                 std::invalid_argument);
    EXPECT_THROW(s2v::dit_predict(params, cfg, video, {ref}, {0}, 1.5), std::invalid_argument);
    EXPECT_THROW(s2v::dit_predict(params, cfg, video, {ref}, {0}, -0.01), std::invalid_argument);
    EXPECT_THROW(s2v::dit_predict(params, cfg, video, {ref}, {}, 0.5), std::invalid_argument);
}

TEST(Forward, DeterministicGivenInputs) {
    auto cfg = tiny_config();
    auto params = s2v::dit_init_params<double>(cfg, 21);
    perturb_params(params, 22, 0.05);
    Rng rng(23);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    auto ref = random_video_tokens<double>(rng, "r", 1, 2, 2, cfg.patch_dim());
    auto a = s2v::dit_predict(params, cfg, video, {ref}, {3, 4}, 0.7);
    auto b = s2v::dit_predict(params, cfg, video, {ref}, {3, 4}, 0.7);
    EXPECT_EQ(testutil::max_abs_diff(a.tokens, b.tokens), 0.0);
}

TEST(Forward, RefOrderMattersOnlyThroughPositions) {
    auto cfg = tiny_config();
    auto params = s2v::dit_init_params<double>(cfg, 31);
    perturb_params(params, 32, 0.05);
    Rng rng(33);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    auto ra = random_video_tokens<double>(rng, "ra", 1, 2, 2, cfg.patch_dim());
    auto rb = random_video_tokens<double>(rng, "rb", 1, 2, 2, cfg.patch_dim());

    // distinct images, default temporal rule: swapping reassigns positions
    auto ab = s2v::dit_predict(params, cfg, video, {ra, rb}, {1}, 0.5);
    auto ba = s2v::dit_predict(params, cfg, video, {rb, ra}, {1}, 0.5);
    EXPECT_GT(testutil::max_abs_diff(ab.tokens, ba.tokens), 1e-12);

    // experimental flag gives both images identical positions; the swap is
    // then a pure permutation of equal-position tokens
    s2v::ForwardOptions opt;
    opt.ref_time_zero = true;
    auto ab2 = s2v::dit_predict(params, cfg, video, {ra, rb}, {1}, 0.5, opt);
    auto ba2 = s2v::dit_predict(params, cfg, video, {rb, ra}, {1}, 0.5, opt);
    EXPECT_LT(testutil::max_abs_diff(ab2.tokens, ba2.tokens), 1e-12);

    // identical images with identical positions: bit-identical outputs
    auto aa = s2v::dit_predict(params, cfg, video, {ra, ra}, {1}, 0.5, opt);
    auto aa_sw = s2v::dit_predict(params, cfg, video, {ra, ra}, {1}, 0.5, opt);
    EXPECT_EQ(testutil::max_abs_diff(aa.tokens, aa_sw.tokens), 0.0);
}

TEST(Forward, ZeroAnglePermutationInvariance) {
    // with every rotary angle forced to zero, all position information is
    // gone and the output must not depend on sequence order
    auto cfg = tiny_config();
    auto params = s2v::dit_init_params<double>(cfg, 41);
    perturb_params(params, 42, 0.05);
    Rng rng(43);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    auto ref = random_video_tokens<double>(rng, "r", 1, 2, 2, cfg.patch_dim());

    s2v::ForwardOptions base;
    base.zero_rope_angles = true;
    auto plain = s2v::dit_predict(params, cfg, video, {ref}, {2, 3}, 0.5, base);

    auto perm_rs = rng.stream("perm");
    std::vector<int64_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[static_cast<size_t>(perm_rs.uniform_int(0, i - 1))]);
    }
    s2v::ForwardOptions permuted = base;
    permuted.sequence_permutation = perm;
    auto shuffled = s2v::dit_predict(params, cfg, video, {ref}, {2, 3}, 0.5, permuted);
    EXPECT_LT(testutil::max_abs_diff(plain.tokens, shuffled.tokens), 1e-10);

    // with angles on, the same permutation must NOT be invariant for a
    // position-sensitive model (sanity check of the diagnostic itself)
    s2v::ForwardOptions on;
    on.sequence_permutation = perm;
    auto with_pos = s2v::dit_predict(params, cfg, video, {ref}, {2, 3}, 0.5);
    auto with_pos_perm = s2v::dit_predict(params, cfg, video, {ref}, {2, 3}, 0.5, on);
    EXPECT_EQ(testutil::max_abs_diff(with_pos.tokens, with_pos_perm.tokens), 0.0)
        << "permuting tokens together with their positions is exact";
}

TEST(Forward, GradientReachesReferencePathway) {
    auto cfg = tiny_config();
    auto params = s2v::dit_init_params<double>(cfg, 51);
    perturb_params(params, 52, 0.05);
    Rng rng(53);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    auto ref = random_video_tokens<double>(rng, "r", 1, 2, 2, cfg.patch_dim());
    auto rs = rng.stream("target");
    auto target = testutil::random_tensor<double>(rs, video.tokens.shape());

    s2v::Tape<double> tape;
    auto pb = s2v::bind_params(tape, params);
    s2v::ForwardOptions opt;
    opt.track_input_grads = true;
    auto fwd = s2v::dit_forward(tape, pb, cfg, video, {ref}, {1, 2}, 0.5, opt);
    int loss = tape.mse(fwd.output, tape.constant(target));
    tape.backward(loss);
    ASSERT_EQ(fwd.ref_nodes.size(), 1u);
    ASSERT_TRUE(tape.has_grad(fwd.ref_nodes[0]));
    EXPECT_GT(s2v::norm2(tape.grad(fwd.ref_nodes[0])), 0.0);
}

TEST(Forward, GradCheckWholeModel) {
    auto cfg = tiny_config();
    auto params64 = s2v::dit_init_params<double>(cfg, 61);
    perturb_params(params64, 62, 0.05);
    Rng rng(63);
    auto video = random_video_tokens<double>(rng, "v", 2, 2, 2, cfg.patch_dim());
    auto ref = random_video_tokens<double>(rng, "r", 1, 2, 2, cfg.patch_dim());
    auto rs = rng.stream("target");
    auto target = testutil::random_tensor<double>(rs, video.tokens.shape());

    auto f = [&](ParamStore<double>& p, s2v::GradMap<double>* grads) {
        s2v::Tape<double> tape;
        auto pb = s2v::bind_params(tape, p, grads != nullptr);
        auto fwd = s2v::dit_forward(tape, pb, cfg, video, {ref}, {1, 2}, 0.5);
        int loss = tape.mse(fwd.output, tape.constant(target));
        if (grads) {
            tape.backward(loss);
            grads->clear();
            for (const auto& [name, id] : pb) {
                grads->emplace(name, tape.has_grad(id) ? tape.grad(id)
                                                       : s2v::Tensor<double>(p.at(name).shape()));
            }
        }
        return tape.value(loss)[0];
    };
    auto report = s2v::grad_check(f, params64, 1e-5, 1e-4);
    EXPECT_TRUE(report.ok(1e-4)) << "max rel err " << report.max_rel_err;
}
