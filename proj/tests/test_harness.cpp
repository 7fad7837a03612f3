#include <gtest/gtest.h>

#include "s2v/harness.hpp"
#include "testutil.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

using s2v::Json;
using s2v::ParamStore;
using s2v::RunConfig;
using s2v::Tensor;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "s2v_harness_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Tiny but complete pipeline configuration.
RunConfig mini_config(const std::string& root) {
    Json j = {
        {"schema_version", 1},
        {"out_dir", root + "/run"},
        {"dataset", {{"path", root + "/data"}, {"eval_path", root + "/data_eval"}}},
        {"model",
         {{"dim", 16}, {"depth", 1}, {"heads", 2}, {"head_dim", 8}, {"patch_spatial", 4},
          {"text_vocab", 32}, {"text_dim", 16}}},
        {"synth",
         {{"count", 6}, {"seed", 5}, {"frames", 4}, {"height", 16}, {"width", 16},
          {"ref_size", 16}}},
        {"eval_synth",
         {{"count", 3}, {"seed", 99}, {"frames", 4}, {"height", 16}, {"width", 16},
          {"ref_size", 16},
          {"mix", {{"cross_paired", 1.0}, {"pose_enriched", 0.0}, {"naive", 0.0}}}}},
        {"train",
         {{"seed", 3}, {"batch_size", 2},
          {"phases", Json::array({{{"steps", 12}, {"lr", 1e-3}}, {{"steps", 6}, {"lr", 5e-4}}})}}},
        {"sampler", {{"steps", 2}, {"seed", 11}}},
        {"eval", {{"max_samples", 3}}},
    };
    return s2v::parse_run_config(j);
}

} // namespace

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(s2v::sha256_hex(""),
              "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(s2v::sha256_hex("abc"),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ThreadBudget, EnvOverride) {
    setenv("S2V_THREADS", "3", 1);
    EXPECT_EQ(s2v::thread_budget(), 3);
    unsetenv("S2V_THREADS");
    EXPECT_GE(s2v::thread_budget(), 1);
}

TEST(Checkpoint, BitExactRoundTrip) {
    auto dir = fresh_dir("ckpt");
    s2v::DiTConfig model;
    model.model_dim = 16;
    model.depth = 1;
    model.heads = 2;
    model.head_dim = 8;
    model.rope = s2v::RopeConfig::proportional(8);
    auto params = s2v::dit_init_params<float>(model, 4);
    // moments present too
    s2v::GradMap<float> grads;
    for (const auto& [name, t] : params.params) grads.emplace(name, Tensor<float>(t.shape()));
    adamw_step(params, grads, s2v::AdamWConfig{});

    std::string path = dir + "/model.ckpt";
    s2v::save_checkpoint(params, path);
    auto back = s2v::load_checkpoint(path);
    EXPECT_EQ(back.step, params.step);
    ASSERT_EQ(back.params.size(), params.params.size());
    for (const auto& [name, t] : params.params) {
        EXPECT_EQ(testutil::max_abs_diff(t, back.at(name)), 0.0) << name;
    }
    ASSERT_EQ(back.moment1.size(), params.moment1.size());

    // rewrite: byte-identical file
    std::string copy = dir + "/model2.ckpt";
    s2v::save_checkpoint(back, copy);
    EXPECT_EQ(slurp(path), slurp(copy));
}

TEST(Checkpoint, CorruptMagicRejected) {
    auto dir = fresh_dir("ckpt_bad");
    std::string path = dir + "/bad.ckpt";
    s2v::detail::write_file_bytes(path, "NOTACKPTxxxxxxxxxxxxxxxx");
    EXPECT_THROW(s2v::load_checkpoint(path), std::runtime_error);
}

TEST(Ppm, HeaderAndPayload) {
    auto dir = fresh_dir("ppm");
    Tensor<float> frame({3, 2, 2});
    frame[0] = 1.0f; // red channel of pixel (0,0)
    s2v::write_ppm(frame, dir + "/f.ppm");
    auto bytes = slurp(dir + "/f.ppm");
    EXPECT_EQ(bytes.substr(0, 11), "P6\n2 2\n255\n");
    EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 255);
    EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 0);
}

TEST(Pipeline, EndToEndArtifacts) {
    auto root = fresh_dir("e2e");
    auto cfg = mini_config(root);

    auto synth = s2v::cmd_synth(cfg);
    EXPECT_TRUE(fs::exists(cfg.dataset_path + "/manifest.json"));
    EXPECT_TRUE(fs::exists(cfg.eval_dataset_path + "/manifest.json"));
    EXPECT_GT(synth.train_stats.accepted, 0);

    auto train = s2v::cmd_train(cfg, 1);
    EXPECT_TRUE(fs::exists(train.checkpoint_path));
    EXPECT_TRUE(std::isfinite(train.final_loss));
    EXPECT_EQ(train.steps_run, 18);
    EXPECT_EQ(train.manifest.at("status"), "ok");
    EXPECT_FALSE(train.manifest.at("dataset_manifest_sha256").get<std::string>().empty());

    auto sample = s2v::cmd_sample(cfg, 1);
    EXPECT_EQ(sample.video_files.size(), 3u);
    for (const auto& f : sample.video_files) EXPECT_TRUE(fs::exists(f));

    auto report = s2v::cmd_eval(cfg);
    EXPECT_EQ(report.per_sample.size(), 3u);
    for (const auto& s : report.per_sample) {
        EXPECT_GE(s.consistency, -1.0);
        EXPECT_LE(s.consistency, 1.0);
        EXPECT_GE(s.decoupling, 0.0);
        EXPECT_LE(s.decoupling, 1.0);
    }
    EXPECT_TRUE(fs::exists(cfg.out_dir + "/metric_report.json"));
}

TEST(Pipeline, EndToEndReproducible) {
    auto root_a = fresh_dir("repro_a");
    auto root_b = fresh_dir("repro_b");
    for (const auto& root : {root_a, root_b}) {
        auto cfg = mini_config(root);
        s2v::cmd_synth(cfg);
        s2v::cmd_train(cfg, 1);
        s2v::cmd_sample(cfg, 1);
        s2v::cmd_eval(cfg);
    }
    // datasets byte-identical
    EXPECT_EQ(slurp(root_a + "/data/manifest.json"), slurp(root_b + "/data/manifest.json"));
    EXPECT_EQ(slurp(root_a + "/data/s00000_video.tns"), slurp(root_b + "/data/s00000_video.tns"));
    // checkpoints byte-identical
    EXPECT_EQ(slurp(root_a + "/run/checkpoint.ckpt"), slurp(root_b + "/run/checkpoint.ckpt"));
    // generated videos byte-identical
    EXPECT_EQ(slurp(root_a + "/run/generated/s00000_generated.tns"),
              slurp(root_b + "/run/generated/s00000_generated.tns"));
    // reports byte-identical
    EXPECT_EQ(slurp(root_a + "/run/metric_report.json"), slurp(root_b + "/run/metric_report.json"));
}

TEST(Pipeline, TrainThreadedMatchesSerial) {
    auto root_a = fresh_dir("thr_a");
    auto root_b = fresh_dir("thr_b");
    auto cfg_a = mini_config(root_a);
    auto cfg_b = mini_config(root_b);
    s2v::cmd_synth(cfg_a);
    s2v::cmd_synth(cfg_b);
    s2v::cmd_train(cfg_a, 1);
    s2v::cmd_train(cfg_b, 2);
    EXPECT_EQ(slurp(root_a + "/run/checkpoint.ckpt"), slurp(root_b + "/run/checkpoint.ckpt"));
}

TEST(Pipeline, MissingInputsReportedAsValidation) {
    auto root = fresh_dir("missing");
    auto cfg = mini_config(root);
    EXPECT_THROW(s2v::cmd_train(cfg, 1), s2v::ConfigError);
    EXPECT_THROW(s2v::cmd_sample(cfg, 1), s2v::ConfigError);
    EXPECT_THROW(s2v::cmd_eval(cfg), s2v::ConfigError);
}

TEST(Pipeline, RerunFromManifestSnapshot) {
    // a run manifest's config snapshot re-executes to the same artifacts
    auto root = fresh_dir("manifest_rerun");
    auto cfg = mini_config(root);
    s2v::cmd_synth(cfg);
    auto first = s2v::cmd_train(cfg, 1);

    Json snapshot = first.manifest.at("config");
    auto cfg2 = s2v::parse_run_config(snapshot);
    cfg2.out_dir = root + "/run2";
    auto second = s2v::cmd_train(cfg2, 1);
    EXPECT_EQ(slurp(first.checkpoint_path), slurp(second.checkpoint_path));
}
