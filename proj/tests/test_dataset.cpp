#include <gtest/gtest.h>

#include "s2v/dataset.hpp"
#include "testutil.hpp"

#include <filesystem>
#include <fstream>

using s2v::CorpusConfig;
using s2v::Tensor;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "s2v_dataset_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

CorpusConfig small_config(uint64_t seed = 1) {
    CorpusConfig cfg;
    cfg.count = 16;
    cfg.seed = seed;
    cfg.frames = 6;
    cfg.height = 16;
    cfg.width = 16;
    cfg.ref_size = 16;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST(Corpus, BuildLoadRoundTrip) {
    auto dir = fresh_dir("roundtrip");
    auto stats = s2v::build_corpus(small_config(), dir);
    EXPECT_EQ(stats.generated, 16);
    EXPECT_GT(stats.accepted, 0);

    auto corpus = s2v::load_corpus(dir);
    EXPECT_EQ(static_cast<int64_t>(corpus.samples.size()), stats.accepted);
    for (const auto& rec : corpus.samples) {
        EXPECT_EQ(rec.video.shape(), (s2v::Shape{6, 3, 16, 16}));
        EXPECT_FALSE(rec.subjects.empty());
        EXPECT_FALSE(rec.prompt_ids.empty());
        // boxes always equal the tight bbox of the mask
        for (const auto& sub : rec.subjects) {
            for (int64_t f = 0; f < 6; ++f) {
                Tensor<float> m({16, 16});
                std::copy(sub.mask.data() + f * 256, sub.mask.data() + (f + 1) * 256, m.data());
                EXPECT_EQ(sub.boxes[static_cast<size_t>(f)], s2v::mask_bbox(m));
            }
        }
    }
}

TEST(Corpus, ByteIdenticalRebuild) {
    auto dir_a = fresh_dir("det_a");
    auto dir_b = fresh_dir("det_b");
    s2v::build_corpus(small_config(7), dir_a);
    s2v::build_corpus(small_config(7), dir_b);

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir_a)) {
        names.push_back(e.path().filename().string());
    }
    ASSERT_FALSE(names.empty());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) {
        EXPECT_EQ(slurp(dir_a + "/" + n), slurp(dir_b + "/" + n)) << n;
    }
}

TEST(Corpus, DifferentSeedDiffers) {
    auto dir_a = fresh_dir("seed_a");
    auto dir_b = fresh_dir("seed_b");
    s2v::build_corpus(small_config(1), dir_a);
    s2v::build_corpus(small_config(2), dir_b);
    EXPECT_NE(slurp(dir_a + "/manifest.json"), slurp(dir_b + "/manifest.json"));
}

TEST(Corpus, PureCrossPairedMix) {
    auto dir = fresh_dir("cross");
    auto cfg = small_config(3);
    cfg.frac_cross_paired = 1.0;
    cfg.frac_pose_enriched = 0.0;
    cfg.frac_naive = 0.0;
    s2v::build_corpus(cfg, dir);
    auto corpus = s2v::load_corpus(dir);
    for (const auto& rec : corpus.samples) {
        EXPECT_TRUE(rec.cross_paired);
        for (const auto& sub : rec.subjects) {
            for (const auto& ref : sub.refs) {
                EXPECT_TRUE(ref.cross_paired);
                EXPECT_NE(ref.background_id, rec.spec.background_id);
            }
        }
    }
}

TEST(Corpus, PureNaiveMix) {
    auto dir = fresh_dir("naive");
    auto cfg = small_config(4);
    cfg.frac_cross_paired = 0.0;
    cfg.frac_pose_enriched = 0.0;
    cfg.frac_naive = 1.0;
    s2v::build_corpus(cfg, dir);
    auto corpus = s2v::load_corpus(dir);
    for (const auto& rec : corpus.samples) {
        EXPECT_FALSE(rec.cross_paired);
        EXPECT_FALSE(rec.pose_enriched);
    }
}

TEST(Corpus, CrossPairedPixelGuarantee) {
    auto dir = fresh_dir("pixel_guarantee");
    auto cfg = small_config(5);
    s2v::build_corpus(cfg, dir);
    auto corpus = s2v::load_corpus(dir);
    for (const auto& rec : corpus.samples) {
        for (const auto& sub : rec.subjects) {
            for (const auto& ref : sub.refs) {
                int64_t r = ref.image.extent(1);
                double diff = 0;
                int64_t cnt = 0;
                for (int64_t y = 0; y < r; ++y) {
                    for (int64_t x = 0; x < r; ++x) {
                        if (ref.mask[y * r + x] != 0.0f) continue;
                        auto vb = s2v::background_color(rec.spec.background_id, x, y);
                        diff += (std::abs(ref.image[(0 * r + y) * r + x] - vb.r) +
                                 std::abs(ref.image[(1 * r + y) * r + x] - vb.g) +
                                 std::abs(ref.image[(2 * r + y) * r + x] - vb.b)) /
                                3.0;
                        ++cnt;
                    }
                }
                EXPECT_GT(diff / static_cast<double>(cnt), 0.05) << "sample " << rec.id;
            }
        }
    }
}

TEST(Corpus, DefaultThresholdsAcceptMostScenes) {
    auto dir = fresh_dir("acceptance_rate");
    auto cfg = small_config(6);
    cfg.count = 64;
    auto stats = s2v::build_corpus(cfg, dir);
    EXPECT_GT(static_cast<double>(stats.accepted) / static_cast<double>(stats.generated), 0.9);
}

TEST(Corpus, HighRejectionAborts) {
    auto dir = fresh_dir("abort");
    auto cfg = small_config(7);
    cfg.filters.max_area_fraction = 0.011; // every subject is bigger than this
    cfg.filters.min_area_fraction = 0.010;
    try {
        s2v::build_corpus(cfg, dir);
        FAIL() << "expected abort";
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("rejection rate"), std::string::npos);
        EXPECT_NE(msg.find("size="), std::string::npos);
    }
}

TEST(Corpus, MixMustSumToOne) {
    auto cfg = small_config();
    cfg.frac_naive = 0.5;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Corpus, PromptMatchesTaxonomyOfScene) {
    // the shipped vocabulary doubles as a taxonomy: prompts must mention each
    // subject's shape exactly once per subject
    auto dir = fresh_dir("taxonomy");
    auto cfg = small_config(8);
    cfg.count = 8;
    s2v::build_corpus(cfg, dir);
    auto corpus = s2v::load_corpus(dir);
    s2v::Taxonomy tax;
    tax.categories["shape"] = {"circle", "square", "triangle"};
    for (const auto& rec : corpus.samples) {
        auto matches = s2v::match_taxonomy(rec.prompt_text, tax);
        EXPECT_EQ(matches.size(), rec.subjects.size()) << rec.prompt_text;
    }
}
