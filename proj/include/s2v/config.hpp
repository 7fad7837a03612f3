#pragma once

// Versioned run configuration. Parsing is strict: unknown keys are errors,
// every validation failure is collected and reported at once, and referenced
// paths are checked per command before any work starts.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2v/dataset.hpp"
#include "s2v/dit.hpp"
#include "s2v/flowmatch.hpp"
#include "s2v/metrics.hpp"

namespace s2v {

inline constexpr int kRunConfigSchemaVersion = 1;

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors)
        : std::runtime_error(join(errors)), errors_(std::move(errors)) {}

    const std::vector<std::string>& errors() const { return errors_; }

private:
    static std::string join(const std::vector<std::string>& errors) {
        std::string s = "configuration invalid (" + std::to_string(errors.size()) + " error" +
                        (errors.size() == 1 ? "" : "s") + "):";
        for (const auto& e : errors) s += "\n  - " + e;
        return s;
    }
    std::vector<std::string> errors_;
};

struct TrainPhase {
    int64_t steps = 0;
    double lr = 0.0;
};

struct TrainConfig {
    uint64_t seed = 1;
    int64_t batch_size = 4;
    std::vector<TrainPhase> phases = {{2000, 1e-3}, {1000, 5e-4}};
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t log_every = 10;
    double target_loss = 0.0; // > 0 enables early stop on the smoothed loss

    int64_t total_steps() const {
        int64_t n = 0;
        for (const auto& p : phases) n += p.steps;
        return n;
    }
};

struct EvalConfig {
    std::string extractor = "hist72/v1";
    std::string mask_source = "oracle"; // oracle | colorseg
    int64_t max_samples = 24;
};

struct RunConfig {
    std::string out_dir = "runs/default";
    std::string dataset_path;
    std::string eval_dataset_path;
    DiTConfig model;
    CorpusConfig synth;
    CorpusConfig eval_synth;
    TrainConfig train;
    SamplerConfig sampler;
    EvalConfig eval;
    std::vector<uint64_t> ablate_seeds = {1, 2, 3};
    bool export_ppm = false;
};

namespace detail {

struct ConfigReader {
    std::vector<std::string> errors;

    void fail(const std::string& path, const std::string& msg) {
        errors.push_back(path + ": " + msg);
    }

    void check_keys(const Json& j, const std::string& path, const std::set<std::string>& allowed) {
        if (!j.is_object()) {
            fail(path, "expected an object");
            return;
        }
        for (const auto& [k, v] : j.items()) {
            if (!allowed.count(k)) fail(path + "." + k, "unknown key");
        }
    }

    template <class T>
    T get(const Json& j, const std::string& path, const std::string& key, T fallback) {
        if (!j.is_object() || !j.contains(key)) return fallback;
        try {
            return j.at(key).get<T>();
        } catch (const std::exception&) {
            fail(path + "." + key, "wrong type");
            return fallback;
        }
    }
};

inline void read_corpus_section(ConfigReader& r, const Json& j, const std::string& path,
                                CorpusConfig& cfg) {
    r.check_keys(j, path,
                 {"count", "mix", "seed", "frames", "height", "width", "ref_size", "max_subjects",
                  "filters"});
    if (!j.is_object()) return;
    cfg.count = r.get<int64_t>(j, path, "count", cfg.count);
    cfg.seed = r.get<uint64_t>(j, path, "seed", cfg.seed);
    cfg.frames = r.get<int64_t>(j, path, "frames", cfg.frames);
    cfg.height = r.get<int64_t>(j, path, "height", cfg.height);
    cfg.width = r.get<int64_t>(j, path, "width", cfg.width);
    cfg.ref_size = r.get<int64_t>(j, path, "ref_size", cfg.ref_size);
    cfg.max_subjects = r.get<int64_t>(j, path, "max_subjects", cfg.max_subjects);
    if (j.contains("mix")) {
        const Json& m = j.at("mix");
        r.check_keys(m, path + ".mix", {"cross_paired", "pose_enriched", "naive"});
        cfg.frac_cross_paired = r.get<double>(m, path + ".mix", "cross_paired", cfg.frac_cross_paired);
        cfg.frac_pose_enriched =
            r.get<double>(m, path + ".mix", "pose_enriched", cfg.frac_pose_enriched);
        cfg.frac_naive = r.get<double>(m, path + ".mix", "naive", cfg.frac_naive);
    }
    if (j.contains("filters")) {
        const Json& f = j.at("filters");
        r.check_keys(f, path + ".filters",
                     {"min_area_fraction", "max_area_fraction", "max_pairwise_iou",
                      "min_brightness", "max_brightness", "blur_threshold"});
        cfg.filters.min_area_fraction =
            r.get<double>(f, path + ".filters", "min_area_fraction", cfg.filters.min_area_fraction);
        cfg.filters.max_area_fraction =
            r.get<double>(f, path + ".filters", "max_area_fraction", cfg.filters.max_area_fraction);
        cfg.filters.max_pairwise_iou =
            r.get<double>(f, path + ".filters", "max_pairwise_iou", cfg.filters.max_pairwise_iou);
        cfg.filters.min_brightness =
            r.get<double>(f, path + ".filters", "min_brightness", cfg.filters.min_brightness);
        cfg.filters.max_brightness =
            r.get<double>(f, path + ".filters", "max_brightness", cfg.filters.max_brightness);
        cfg.filters.blur_threshold =
            r.get<double>(f, path + ".filters", "blur_threshold", cfg.filters.blur_threshold);
    }
}

} // namespace detail

inline Json run_config_to_json(const RunConfig& cfg);

// Parse and validate; throws ConfigError listing every problem at once.
inline RunConfig parse_run_config(const Json& j) {
    detail::ConfigReader r;
    RunConfig cfg;

    r.check_keys(j, "config",
                 {"schema_version", "out_dir", "dataset", "model", "rope_variant", "synth",
                  "eval_synth", "train", "sampler", "eval", "ablate_seeds", "export_ppm"});
    if (j.is_object()) {
        int version = r.get<int>(j, "config", "schema_version", -1);
        if (version != kRunConfigSchemaVersion) {
            r.fail("config.schema_version", "must be " + std::to_string(kRunConfigSchemaVersion));
        }
        cfg.out_dir = r.get<std::string>(j, "config", "out_dir", cfg.out_dir);
        cfg.export_ppm = r.get<bool>(j, "config", "export_ppm", cfg.export_ppm);

        if (j.contains("dataset")) {
            const Json& d = j.at("dataset");
            r.check_keys(d, "config.dataset", {"path", "eval_path"});
            cfg.dataset_path = r.get<std::string>(d, "config.dataset", "path", "");
            cfg.eval_dataset_path = r.get<std::string>(d, "config.dataset", "eval_path", "");
        }

        if (j.contains("model")) {
            const Json& m = j.at("model");
            r.check_keys(m, "config.model",
                         {"dim", "depth", "heads", "head_dim", "patch_temporal", "patch_spatial",
                          "text_vocab", "text_dim", "max_refs", "rope_base",
                          "modulate_reference_tokens"});
            cfg.model.model_dim = r.get<int64_t>(m, "config.model", "dim", cfg.model.model_dim);
            cfg.model.depth = r.get<int64_t>(m, "config.model", "depth", cfg.model.depth);
            cfg.model.heads = r.get<int64_t>(m, "config.model", "heads", cfg.model.heads);
            cfg.model.head_dim = r.get<int64_t>(m, "config.model", "head_dim", cfg.model.head_dim);
            cfg.model.patch.temporal =
                r.get<int64_t>(m, "config.model", "patch_temporal", cfg.model.patch.temporal);
            cfg.model.patch.spatial =
                r.get<int64_t>(m, "config.model", "patch_spatial", cfg.model.patch.spatial);
            cfg.model.text_vocab_size =
                r.get<int64_t>(m, "config.model", "text_vocab", cfg.model.text_vocab_size);
            cfg.model.text_dim = r.get<int64_t>(m, "config.model", "text_dim", cfg.model.text_dim);
            cfg.model.max_refs = r.get<int64_t>(m, "config.model", "max_refs", cfg.model.max_refs);
            double base = r.get<double>(m, "config.model", "rope_base", 10000.0);
            cfg.model.modulate_reference_tokens = r.get<bool>(
                m, "config.model", "modulate_reference_tokens", cfg.model.modulate_reference_tokens);
            if (cfg.model.head_dim > 0 && cfg.model.head_dim % 2 == 0) {
                cfg.model.rope = RopeConfig::proportional(cfg.model.head_dim, base);
            } else {
                r.fail("config.model.head_dim", "must be even and positive");
            }
        }

        if (j.contains("rope_variant")) {
            try {
                cfg.model.variant = rope_variant_from_name(j.at("rope_variant").get<std::string>());
            } catch (const std::exception& e) {
                r.fail("config.rope_variant", e.what());
            }
        }

        if (j.contains("synth")) detail::read_corpus_section(r, j.at("synth"), "config.synth", cfg.synth);
        cfg.eval_synth = cfg.synth;
        cfg.eval_synth.count = 24;
        cfg.eval_synth.seed = cfg.synth.seed + 1000003;
        cfg.eval_synth.frac_cross_paired = 1.0;
        cfg.eval_synth.frac_pose_enriched = 0.0;
        cfg.eval_synth.frac_naive = 0.0;
        if (j.contains("eval_synth")) {
            detail::read_corpus_section(r, j.at("eval_synth"), "config.eval_synth", cfg.eval_synth);
        }

        if (j.contains("train")) {
            const Json& t = j.at("train");
            r.check_keys(t, "config.train",
                         {"seed", "batch_size", "phases", "weight_decay", "beta1", "beta2", "eps",
                          "log_every", "target_loss"});
            cfg.train.seed = r.get<uint64_t>(t, "config.train", "seed", cfg.train.seed);
            cfg.train.batch_size = r.get<int64_t>(t, "config.train", "batch_size", cfg.train.batch_size);
            cfg.train.weight_decay =
                r.get<double>(t, "config.train", "weight_decay", cfg.train.weight_decay);
            cfg.train.beta1 = r.get<double>(t, "config.train", "beta1", cfg.train.beta1);
            cfg.train.beta2 = r.get<double>(t, "config.train", "beta2", cfg.train.beta2);
            cfg.train.eps = r.get<double>(t, "config.train", "eps", cfg.train.eps);
            cfg.train.log_every = r.get<int64_t>(t, "config.train", "log_every", cfg.train.log_every);
            cfg.train.target_loss = r.get<double>(t, "config.train", "target_loss", cfg.train.target_loss);
            if (t.contains("phases")) {
                if (!t.at("phases").is_array() || t.at("phases").empty()) {
                    r.fail("config.train.phases", "must be a non-empty array");
                } else {
                    cfg.train.phases.clear();
                    int i = 0;
                    for (const auto& p : t.at("phases")) {
                        std::string path = "config.train.phases[" + std::to_string(i++) + "]";
                        r.check_keys(p, path, {"steps", "lr"});
                        TrainPhase phase;
                        phase.steps = r.get<int64_t>(p, path, "steps", 0);
                        phase.lr = r.get<double>(p, path, "lr", 0.0);
                        if (phase.steps < 1) r.fail(path + ".steps", "must be >= 1");
                        if (phase.lr <= 0) r.fail(path + ".lr", "must be > 0");
                        cfg.train.phases.push_back(phase);
                    }
                }
            }
        }

        if (j.contains("sampler")) {
            const Json& s = j.at("sampler");
            r.check_keys(s, "config.sampler", {"steps", "seed", "guidance_scale"});
            cfg.sampler.steps = r.get<int64_t>(s, "config.sampler", "steps", cfg.sampler.steps);
            cfg.sampler.seed = r.get<uint64_t>(s, "config.sampler", "seed", cfg.sampler.seed);
            cfg.sampler.guidance_scale =
                r.get<double>(s, "config.sampler", "guidance_scale", cfg.sampler.guidance_scale);
        }

        if (j.contains("eval")) {
            const Json& e = j.at("eval");
            r.check_keys(e, "config.eval", {"extractor", "mask_source", "max_samples"});
            cfg.eval.extractor = r.get<std::string>(e, "config.eval", "extractor", cfg.eval.extractor);
            cfg.eval.mask_source =
                r.get<std::string>(e, "config.eval", "mask_source", cfg.eval.mask_source);
            cfg.eval.max_samples =
                r.get<int64_t>(e, "config.eval", "max_samples", cfg.eval.max_samples);
        }

        if (j.contains("ablate_seeds")) {
            try {
                cfg.ablate_seeds = j.at("ablate_seeds").get<std::vector<uint64_t>>();
            } catch (const std::exception&) {
                r.fail("config.ablate_seeds", "must be an array of integers");
            }
            if (cfg.ablate_seeds.empty()) r.fail("config.ablate_seeds", "must not be empty");
        }
    } else {
        r.fail("config", "top level must be an object");
    }

    // semantic validation on top of structural parsing
    if (cfg.dataset_path.empty()) r.fail("config.dataset.path", "required");
    if (cfg.out_dir.empty()) r.fail("config.out_dir", "required");
    if (cfg.train.batch_size < 1) r.fail("config.train.batch_size", "must be >= 1");
    if (cfg.sampler.steps < 1) r.fail("config.sampler.steps", "must be >= 1");
    if (cfg.eval.max_samples < 1) r.fail("config.eval.max_samples", "must be >= 1");
    if (cfg.eval.mask_source != "oracle" && cfg.eval.mask_source != "colorseg") {
        r.fail("config.eval.mask_source", "must be 'oracle' or 'colorseg'");
    }
    try {
        extractor_by_id(cfg.eval.extractor);
    } catch (const std::exception& e) {
        r.fail("config.eval.extractor", e.what());
    }
    try {
        cfg.model.validate();
    } catch (const std::exception& e) {
        r.fail("config.model", e.what());
    }
    try {
        cfg.synth.validate();
    } catch (const std::exception& e) {
        r.fail("config.synth", e.what());
    }
    try {
        cfg.eval_synth.validate();
    } catch (const std::exception& e) {
        r.fail("config.eval_synth", e.what());
    }
    if (cfg.model.text_vocab_size < static_cast<int64_t>(prompt_vocabulary().size())) {
        r.fail("config.model.text_vocab",
               "must cover the prompt vocabulary (" +
                   std::to_string(prompt_vocabulary().size()) + " words)");
    }
    if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file " + path});
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
    }
    return parse_run_config(j);
}

// Full snapshot for run manifests; parsing this back yields the same config.
inline Json run_config_to_json(const RunConfig& cfg) {
    auto corpus_json = [](const CorpusConfig& c) {
        return Json{{"count", c.count},
                    {"mix",
                     {{"cross_paired", c.frac_cross_paired},
                      {"pose_enriched", c.frac_pose_enriched},
                      {"naive", c.frac_naive}}},
                    {"seed", c.seed},
                    {"frames", c.frames},
                    {"height", c.height},
                    {"width", c.width},
                    {"ref_size", c.ref_size},
                    {"max_subjects", c.max_subjects},
                    {"filters",
                     {{"min_area_fraction", c.filters.min_area_fraction},
                      {"max_area_fraction", c.filters.max_area_fraction},
                      {"max_pairwise_iou", c.filters.max_pairwise_iou},
                      {"min_brightness", c.filters.min_brightness},
                      {"max_brightness", c.filters.max_brightness},
                      {"blur_threshold", c.filters.blur_threshold}}}};
    };
    Json phases = Json::array();
    for (const auto& p : cfg.train.phases) phases.push_back({{"steps", p.steps}, {"lr", p.lr}});
    return Json{
        {"schema_version", kRunConfigSchemaVersion},
        {"out_dir", cfg.out_dir},
        {"dataset", {{"path", cfg.dataset_path}, {"eval_path", cfg.eval_dataset_path}}},
        {"model",
         {{"dim", cfg.model.model_dim},
          {"depth", cfg.model.depth},
          {"heads", cfg.model.heads},
          {"head_dim", cfg.model.head_dim},
          {"patch_temporal", cfg.model.patch.temporal},
          {"patch_spatial", cfg.model.patch.spatial},
          {"text_vocab", cfg.model.text_vocab_size},
          {"text_dim", cfg.model.text_dim},
          {"max_refs", cfg.model.max_refs},
          {"rope_base", cfg.model.rope.base},
          {"modulate_reference_tokens", cfg.model.modulate_reference_tokens}}},
        {"rope_variant", rope_variant_name(cfg.model.variant)},
        {"synth", corpus_json(cfg.synth)},
        {"eval_synth", corpus_json(cfg.eval_synth)},
        {"train",
         {{"seed", cfg.train.seed},
          {"batch_size", cfg.train.batch_size},
          {"phases", std::move(phases)},
          {"weight_decay", cfg.train.weight_decay},
          {"beta1", cfg.train.beta1},
          {"beta2", cfg.train.beta2},
          {"eps", cfg.train.eps},
          {"log_every", cfg.train.log_every},
          {"target_loss", cfg.train.target_loss}}},
        {"sampler",
         {{"steps", cfg.sampler.steps},
          {"seed", cfg.sampler.seed},
          {"guidance_scale", cfg.sampler.guidance_scale}}},
        {"eval",
         {{"extractor", cfg.eval.extractor},
          {"mask_source", cfg.eval.mask_source},
          {"max_samples", cfg.eval.max_samples}}},
        {"ablate_seeds", cfg.ablate_seeds},
        {"export_ppm", cfg.export_ppm},
    };
}

} // namespace s2v
