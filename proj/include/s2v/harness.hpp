#pragma once

// Batch commands tying the pipeline together: synth -> train -> sample ->
// eval, plus the two ablation protocols. Every command is idempotent for a
// fixed (config, seeds) pair; run manifests snapshot the config and hash
// every artifact they reference.

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <thread>

#include <openssl/evp.h>

#include "s2v/config.hpp"
#include "s2v/dataset.hpp"
#include "s2v/flowmatch.hpp"
#include "s2v/metrics.hpp"

namespace s2v {

// ---------------------------------------------------------------------------
// misc plumbing
// ---------------------------------------------------------------------------

inline int thread_budget() {
    if (const char* env = std::getenv("S2V_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

inline std::string sha256_file(const std::string& path) {
    return sha256_hex(detail::read_file_bytes(path));
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

// ---------------------------------------------------------------------------
// checkpoints: manifest header + raw little-endian payloads, bit-exact
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', '2', 'V', 'C', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const ParamStore<float>& store, const std::string& path) {
    Json header;
    header["precision"] = "f32";
    header["step"] = store.step;
    Json tensors = Json::array();
    auto describe = [&](const std::string& kind, const std::string& name, const Tensor<float>& t) {
        Json shape = Json::array();
        for (int64_t e : t.shape()) shape.push_back(e);
        tensors.push_back({{"kind", kind}, {"name", name}, {"shape", std::move(shape)}});
    };
    for (const auto& [name, t] : store.params) describe("param", name, t);
    for (const auto& [name, t] : store.moment1) describe("m", name, t);
    for (const auto& [name, t] : store.moment2) describe("v", name, t);
    header["tensors"] = std::move(tensors);
    std::string hdr = header.dump();

    std::string bytes;
    bytes.append(kCheckpointMagic, 8);
    detail::put_u64(bytes, hdr.size());
    bytes += hdr;
    auto payload = [&](const Tensor<float>& t) {
        size_t off = bytes.size();
        bytes.resize(off + static_cast<size_t>(t.numel()) * sizeof(float));
        std::memcpy(bytes.data() + off, t.data(), static_cast<size_t>(t.numel()) * sizeof(float));
    };
    for (const auto& [name, t] : store.params) payload(t);
    for (const auto& [name, t] : store.moment1) payload(t);
    for (const auto& [name, t] : store.moment2) payload(t);
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    detail::write_file_bytes(path, bytes);
}

inline ParamStore<float> load_checkpoint(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw std::runtime_error(path + ": not a checkpoint (bad magic)");
    }
    uint64_t hdr_len = detail::get_u64(reinterpret_cast<const unsigned char*>(bytes.data()) + 8);
    if (bytes.size() < 16 + hdr_len) throw std::runtime_error(path + ": truncated header");
    Json header = Json::parse(bytes.substr(16, hdr_len));
    if (header.value("precision", "") != "f32") {
        throw std::runtime_error(path + ": unsupported precision");
    }
    ParamStore<float> store;
    store.step = header.value("step", 0);
    size_t off = 16 + hdr_len;
    for (const auto& jt : header.at("tensors")) {
        Shape shape;
        for (const auto& e : jt.at("shape")) shape.push_back(e.get<int64_t>());
        Tensor<float> t(shape);
        size_t need = static_cast<size_t>(t.numel()) * sizeof(float);
        if (off + need > bytes.size()) {
            throw std::runtime_error(path + ": truncated payload, expected " +
                                     std::to_string(off + need) + " bytes, got " +
                                     std::to_string(bytes.size()));
        }
        std::memcpy(t.data(), bytes.data() + off, need);
        off += need;
        std::string kind = jt.at("kind").get<std::string>();
        std::string name = jt.at("name").get<std::string>();
        if (kind == "param") store.params.emplace(name, std::move(t));
        else if (kind == "m") store.moment1.emplace(name, std::move(t));
        else store.moment2.emplace(name, std::move(t));
    }
    if (off != bytes.size()) {
        throw std::runtime_error(path + ": trailing bytes after payload");
    }
    return store;
}

// ---------------------------------------------------------------------------
// pixel range mapping and training-sample conversion
// ---------------------------------------------------------------------------

// Training and sampling run in the signed range [-1, 1]; datasets and
// exports use [0, 1].
inline Tensor<float> to_signed_range(const Tensor<float>& x) {
    Tensor<float> out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = 2.0f * x[i] - 1.0f;
    return out;
}

inline Tensor<float> from_signed_range(const Tensor<float>& x) {
    Tensor<float> out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        out[i] = std::clamp(0.5f * (x[i] + 1.0f), 0.0f, 1.0f);
    }
    return out;
}

inline std::vector<VideoTokens<float>> sample_reference_tokens(const SampleRecord& rec,
                                                               const DiTConfig& model) {
    std::vector<VideoTokens<float>> refs;
    for (const auto& sub : rec.subjects) {
        for (const auto& ref : sub.refs) {
            int64_t r = ref.image.extent(1);
            Tensor<float> pixels({1, 3, r, ref.image.extent(2)});
            std::copy(ref.image.data(), ref.image.data() + ref.image.numel(), pixels.data());
            refs.push_back(patchify(to_signed_range(pixels), model.patch));
        }
    }
    return refs;
}

inline FlowSample<float> to_flow_sample(const SampleRecord& rec, const DiTConfig& model) {
    FlowSample<float> fs;
    fs.sample_id = rec.id;
    fs.video = patchify(to_signed_range(rec.video), model.patch);
    fs.refs = sample_reference_tokens(rec, model);
    fs.prompt_ids = rec.prompt_ids;
    return fs;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthResult {
    CorpusStats train_stats;
    CorpusStats eval_stats;
    Json manifest;
};

inline SynthResult cmd_synth(const RunConfig& cfg) {
    SynthResult res;
    res.train_stats = build_corpus(cfg.synth, cfg.dataset_path);
    if (!cfg.eval_dataset_path.empty()) {
        res.eval_stats = build_corpus(cfg.eval_synth, cfg.eval_dataset_path);
    }
    auto stats_json = [](const CorpusStats& s) {
        Json rejected = Json::object();
        for (const auto& [k, v] : s.rejected) rejected[k] = v;
        return Json{{"generated", s.generated}, {"accepted", s.accepted}, {"rejected", rejected}};
    };
    res.manifest = {{"schema_version", 1},
                    {"kind", "s2v_run_manifest"},
                    {"command", "synth"},
                    {"config", run_config_to_json(cfg)},
                    {"train_corpus",
                     {{"path", cfg.dataset_path},
                      {"manifest_sha256", sha256_file(cfg.dataset_path + "/manifest.json")},
                      {"stats", stats_json(res.train_stats)}}}};
    if (!cfg.eval_dataset_path.empty()) {
        res.manifest["eval_corpus"] = {
            {"path", cfg.eval_dataset_path},
            {"manifest_sha256", sha256_file(cfg.eval_dataset_path + "/manifest.json")},
            {"stats", stats_json(res.eval_stats)}};
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/synth_manifest.json", res.manifest.dump(2) + "\n");
    return res;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainResult {
    Json manifest;
    std::string checkpoint_path;
    double final_loss = 0.0;
    int64_t steps_run = 0;
    bool reached_target = false;
};

class TrainFailure : public std::runtime_error {
public:
    TrainFailure(const std::string& msg, int64_t step)
        : std::runtime_error(msg + " (step " + std::to_string(step) + ")"), step_(step) {}
    int64_t step() const { return step_; }

private:
    int64_t step_;
};

inline TrainResult cmd_train(const RunConfig& cfg, int threads = 0) {
    if (!std::filesystem::exists(cfg.dataset_path + "/manifest.json")) {
        throw ConfigError({"config.dataset.path: no dataset manifest at " + cfg.dataset_path});
    }
    if (threads <= 0) threads = thread_budget();
    auto t_start = std::chrono::steady_clock::now();

    Corpus corpus = load_corpus(cfg.dataset_path);
    if (corpus.samples.empty()) throw std::runtime_error("cmd_train: dataset is empty");
    std::string dataset_sha = sha256_file(cfg.dataset_path + "/manifest.json");

    std::vector<FlowSample<float>> flow;
    flow.reserve(corpus.samples.size());
    for (const auto& rec : corpus.samples) flow.push_back(to_flow_sample(rec, cfg.model));

    ParamStore<float> params = dit_init_params<float>(cfg.model, cfg.train.seed);
    Rng rng(cfg.train.seed);

    Json curve = Json::array();
    std::deque<double> window;
    double smoothed = std::numeric_limits<double>::infinity();
    int64_t global_step = 0;
    bool reached = false;
    std::optional<std::pair<int64_t, std::string>> failure;

    FmLossOptions<float> loss_opt;
    loss_opt.threads = threads;

    for (const auto& phase : cfg.train.phases) {
        AdamWConfig adamw;
        adamw.lr = phase.lr;
        adamw.beta1 = cfg.train.beta1;
        adamw.beta2 = cfg.train.beta2;
        adamw.eps = cfg.train.eps;
        adamw.weight_decay = cfg.train.weight_decay;
        for (int64_t s = 0; s < phase.steps && !reached && !failure; ++s, ++global_step) {
            // batch: distinct sample indices drawn per step
            int64_t bsz = std::min<int64_t>(cfg.train.batch_size,
                                            static_cast<int64_t>(flow.size()));
            RngStream bs = rng.stream("batch", static_cast<uint64_t>(global_step));
            std::vector<int64_t> pool(flow.size());
            for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int64_t>(i);
            for (int64_t i = 0; i < bsz; ++i) {
                int64_t j = bs.uniform_int(i, static_cast<int64_t>(pool.size()) - 1);
                std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            }
            std::vector<FlowSample<float>> batch;
            for (int64_t i = 0; i < bsz; ++i) batch.push_back(flow[static_cast<size_t>(pool[i])]);

            double loss;
            try {
                auto res = fm_loss(params, cfg.model, batch, rng, global_step, loss_opt);
                loss = res.loss;
                adamw_step(params, res.grads, adamw);
            } catch (const std::runtime_error& e) {
                failure = {global_step, e.what()};
                break;
            }

            if (global_step % cfg.train.log_every == 0 ||
                global_step + 1 == cfg.train.total_steps()) {
                curve.push_back(Json::array({global_step, loss}));
            }
            window.push_back(loss);
            if (window.size() > 50) window.pop_front();
            if (window.size() == 50) {
                double acc = 0;
                for (double v : window) acc += v;
                smoothed = acc / 50.0;
                if (cfg.train.target_loss > 0 && smoothed < cfg.train.target_loss) reached = true;
            }
        }
    }

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    TrainResult out;
    out.checkpoint_path = cfg.out_dir + "/checkpoint.ckpt";
    out.steps_run = global_step;
    out.reached_target = reached;
    out.final_loss = window.empty() ? std::numeric_limits<double>::quiet_NaN() : window.back();

    Json manifest = {{"schema_version", 1},
                     {"kind", "s2v_run_manifest"},
                     {"command", "train"},
                     {"config", run_config_to_json(cfg)},
                     {"dataset_manifest_sha256", dataset_sha},
                     {"steps_run", global_step},
                     {"final_loss", out.final_loss},
                     {"smoothed_loss", smoothed},
                     {"reached_target", reached},
                     {"loss_curve", std::move(curve)},
                     {"wall_seconds", wall}};
    if (failure) {
        manifest["status"] = "failed";
        manifest["failure_step"] = failure->first;
        manifest["failure"] = failure->second;
        write_text_file(cfg.out_dir + "/train_manifest.json", manifest.dump(2) + "\n");
        throw TrainFailure("cmd_train: " + failure->second, failure->first);
    }
    manifest["status"] = "ok";
    save_checkpoint(params, out.checkpoint_path);
    manifest["checkpoint"] = {{"path", out.checkpoint_path},
                              {"sha256", sha256_file(out.checkpoint_path)}};
    write_text_file(cfg.out_dir + "/train_manifest.json", manifest.dump(2) + "\n");
    out.manifest = std::move(manifest);
    return out;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

// Portable pixmap export of one frame (binary P6, 8-bit).
inline void write_ppm(const Tensor<float>& frame, const std::string& path) {
    int64_t h = frame.extent(1), w = frame.extent(2);
    std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t c = 0; c < 3; ++c) {
                float v = std::clamp(frame[(c * h + y) * w + x], 0.0f, 1.0f);
                bytes.push_back(static_cast<char>(std::lround(v * 255.0f)));
            }
        }
    }
    detail::write_file_bytes(path, bytes);
}

struct SampleResult {
    Json manifest;
    std::vector<std::string> video_files;
};

// Generate videos conditioned on the eval corpus's references and prompts.
inline SampleResult cmd_sample(const RunConfig& cfg, int threads = 0) {
    std::string src = cfg.eval_dataset_path.empty() ? cfg.dataset_path : cfg.eval_dataset_path;
    if (!std::filesystem::exists(src + "/manifest.json")) {
        throw ConfigError({"config.dataset: no dataset manifest at " + src});
    }
    if (!std::filesystem::exists(cfg.out_dir + "/checkpoint.ckpt")) {
        throw ConfigError({"config.out_dir: no checkpoint at " + cfg.out_dir +
                           "/checkpoint.ckpt (run train first)"});
    }
    if (threads <= 0) threads = thread_budget();

    ParamStore<float> params = load_checkpoint(cfg.out_dir + "/checkpoint.ckpt");
    Corpus corpus = load_corpus(src);
    int64_t n = std::min<int64_t>(cfg.eval.max_samples,
                                  static_cast<int64_t>(corpus.samples.size()));

    std::string gen_dir = cfg.out_dir + "/generated";
    std::filesystem::create_directories(gen_dir);

    Rng rng(cfg.sampler.seed);
    std::vector<Json> entries(static_cast<size_t>(n));
    std::vector<std::string> files(static_cast<size_t>(n));

    std::atomic<int64_t> cursor{0};
    auto worker = [&]() {
        for (;;) {
            int64_t i = cursor.fetch_add(1);
            if (i >= n) return;
            const SampleRecord& rec = corpus.samples[static_cast<size_t>(i)];
            auto refs = sample_reference_tokens(rec, cfg.model);
            VideoTokens<float> grid = patchify(to_signed_range(rec.video), cfg.model.patch);

            SamplerConfig sc = cfg.sampler;
            sc.seed = rng.stream("sample.seed", static_cast<uint64_t>(rec.id)).next_u64();
            Tensor<float> pixels = from_signed_range(
                fm_sample(params, cfg.model, refs, rec.prompt_ids, grid.frames, grid.rows,
                          grid.cols, sc));

            std::string rel = detail::sample_stem(rec.id) + "_generated.tns";
            write_tensor_file(pixels, gen_dir + "/" + rel);
            files[static_cast<size_t>(i)] = gen_dir + "/" + rel;
            if (cfg.export_ppm) {
                for (int64_t f = 0; f < pixels.extent(0); ++f) {
                    Tensor<float> frame({3, pixels.extent(2), pixels.extent(3)});
                    std::copy(pixels.data() + f * frame.numel(),
                              pixels.data() + (f + 1) * frame.numel(), frame.data());
                    write_ppm(frame, gen_dir + "/" + detail::sample_stem(rec.id) + "_f" +
                                         std::to_string(f) + ".ppm");
                }
            }
            entries[static_cast<size_t>(i)] = {{"id", rec.id},
                                               {"video", rel},
                                               {"source_prompt", rec.prompt_text},
                                               {"sampler_seed", sc.seed}};
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min<int>(threads, static_cast<int>(n)); ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    Json samples = Json::array();
    for (auto& e : entries) samples.push_back(std::move(e));
    SampleResult out;
    out.video_files = std::move(files);
    out.manifest = {{"schema_version", 1},
                    {"kind", "s2v_generated_set"},
                    {"command", "sample"},
                    {"config", run_config_to_json(cfg)},
                    {"source_dataset", src},
                    {"source_manifest_sha256", sha256_file(src + "/manifest.json")},
                    {"checkpoint_sha256", sha256_file(cfg.out_dir + "/checkpoint.ckpt")},
                    {"samples", std::move(samples)}};
    write_text_file(gen_dir + "/manifest.json", out.manifest.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline MetricReport cmd_eval(const RunConfig& cfg) {
    std::string src = cfg.eval_dataset_path.empty() ? cfg.dataset_path : cfg.eval_dataset_path;
    std::string gen_dir = cfg.out_dir + "/generated";
    if (!std::filesystem::exists(gen_dir + "/manifest.json")) {
        throw ConfigError({"config.out_dir: no generated set at " + gen_dir + " (run sample first)"});
    }
    Corpus corpus = load_corpus(src);
    std::map<int64_t, const SampleRecord*> by_id;
    for (const auto& rec : corpus.samples) by_id[rec.id] = &rec;

    std::ifstream gin(gen_dir + "/manifest.json");
    Json gen = Json::parse(gin);
    RegionExtractor extract = extractor_by_id(cfg.eval.extractor);

    MetricReport report;
    report.extractor_id = cfg.eval.extractor;
    report.mask_source_id = cfg.eval.mask_source;

    for (const auto& je : gen.at("samples")) {
        int64_t id = je.at("id").get<int64_t>();
        const SampleRecord* rec = by_id.at(id);
        Tensor<float> video =
            read_tensor_file<float>(gen_dir + "/" + je.at("video").get<std::string>());

        std::vector<SubjectEval> subjects;
        for (const auto& sub : rec->subjects) {
            SubjectEval ev;
            if (cfg.eval.mask_source == "oracle") {
                ev.masks = sub.mask;
            } else {
                // threshold segmenter on the generated frames, restricted to
                // the subject's ground-truth box region
                int64_t frames = video.extent(0), h = video.extent(2), w = video.extent(3);
                ev.masks = Tensor<float>({frames, h, w});
                for (int64_t f = 0; f < frames; ++f) {
                    Tensor<float> frame({3, h, w});
                    std::copy(video.data() + f * 3 * h * w, video.data() + (f + 1) * 3 * h * w,
                              frame.data());
                    Tensor<float> seg = color_segment_mask(frame);
                    const Box& box = sub.boxes[static_cast<size_t>(f)];
                    for (int64_t y = 0; y < h; ++y) {
                        for (int64_t x = 0; x < w; ++x) {
                            bool inside = x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1;
                            ev.masks[(f * h + y) * w + x] =
                                inside && seg[y * w + x] != 0.0f ? 1.0f : 0.0f;
                        }
                    }
                    // fall back to the box itself when the segmenter finds nothing
                    Tensor<float> fm({h, w});
                    std::copy(ev.masks.data() + f * h * w, ev.masks.data() + (f + 1) * h * w,
                              fm.data());
                    if (mask_area(fm) == 0) {
                        for (int64_t y = static_cast<int64_t>(box.y0); y < box.y1; ++y)
                            for (int64_t x = static_cast<int64_t>(box.x0); x < box.x1; ++x)
                                ev.masks[(f * h + y) * w + x] = 1.0f;
                    }
                }
            }
            for (const auto& ref : sub.refs) ev.refs.push_back({ref.image, ref.mask});
            subjects.push_back(std::move(ev));
        }
        report.per_sample.push_back(evaluate_sample(id, video, subjects, extract));
    }
    write_text_file(cfg.out_dir + "/metric_report.json", report.to_json().dump(2) + "\n");
    return report;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    std::vector<std::pair<uint64_t, SampleScores>> per_seed; // seed -> corpus means
    double median_consistency = 0;
    double median_decoupling = 0;
};

struct AblationTable {
    std::string axis;
    std::vector<uint64_t> seeds;
    std::vector<AblationRow> rows;
    bool trend_holds = false;
    std::string trend_note;
    Json to_json() const;
    std::string table() const;
};

inline Json AblationTable::to_json() const {
    Json rows_json = Json::array();
    for (const auto& r : rows) {
        Json per_seed = Json::array();
        for (const auto& [seed, scores] : r.per_seed) {
            per_seed.push_back({{"seed", seed},
                                {"consistency", scores.consistency},
                                {"decoupling", scores.decoupling}});
        }
        rows_json.push_back({{"name", r.name},
                             {"per_seed", std::move(per_seed)},
                             {"median_consistency", r.median_consistency},
                             {"median_decoupling", r.median_decoupling}});
    }
    return {{"schema_version", 1},
            {"kind", "s2v_ablation_table"},
            {"axis", axis},
            {"seeds", seeds},
            {"rows", std::move(rows_json)},
            {"trend_holds", trend_holds},
            {"trend_note", trend_note}};
}

inline std::string AblationTable::table() const {
    char line[160];
    std::string out = "variant        S2V Consistency  S2V Decoupling\n";
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%-14s %15.6f %15.6f\n", r.name.c_str(),
                      r.median_consistency, r.median_decoupling);
        out += line;
    }
    out += "seeds:";
    for (uint64_t s : seeds) out += " " + std::to_string(s);
    out += "\ntrend: " + trend_note + "\n";
    return out;
}

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

// One ablation member: train on the given dataset with the given variant and
// seed, then sample and evaluate. Everything lands under `member_dir`.
inline SampleScores run_ablation_member(RunConfig cfg, const std::string& member_dir,
                                        RopeVariant variant, uint64_t seed,
                                        const std::string& dataset_path, int threads) {
    cfg.out_dir = member_dir;
    cfg.dataset_path = dataset_path;
    cfg.model.variant = variant;
    cfg.train.seed = seed;
    cfg.sampler.seed = seed * 7919 + 17;
    cmd_train(cfg, threads);
    cmd_sample(cfg, threads);
    MetricReport report = cmd_eval(cfg);
    SampleScores means;
    means.consistency = report.mean_consistency();
    means.decoupling = report.mean_decoupling();
    return means;
}

// Axis "rope_variant": four variants on one corpus and one seed set.
// Axis "cross_paired": the configured variant on a cross-paired corpus vs a
// naive corpus built from the same seed.
inline AblationTable cmd_ablate(const RunConfig& cfg, const std::string& axis) {
    if (axis != "rope_variant" && axis != "cross_paired") {
        throw ConfigError({"ablate axis must be 'rope_variant' or 'cross_paired', got '" + axis +
                           "'"});
    }
    AblationTable table;
    table.axis = axis;
    table.seeds = cfg.ablate_seeds;

    // corpora
    std::vector<std::pair<std::string, std::string>> members; // (row name, dataset path)
    if (axis == "rope_variant") {
        if (!std::filesystem::exists(cfg.dataset_path + "/manifest.json")) {
            build_corpus(cfg.synth, cfg.dataset_path);
        }
        for (const char* v : {"concat", "shift_w", "shift_h", "shift_wh"}) {
            members.emplace_back(v, cfg.dataset_path);
        }
    } else {
        CorpusConfig cross = cfg.synth;
        cross.frac_cross_paired = 1.0;
        cross.frac_pose_enriched = 0.0;
        cross.frac_naive = 0.0;
        CorpusConfig naive = cfg.synth;
        naive.frac_cross_paired = 0.0;
        naive.frac_pose_enriched = 0.0;
        naive.frac_naive = 1.0;
        std::string cross_path = cfg.dataset_path + "_cross";
        std::string naive_path = cfg.dataset_path + "_naive";
        if (!std::filesystem::exists(cross_path + "/manifest.json")) build_corpus(cross, cross_path);
        if (!std::filesystem::exists(naive_path + "/manifest.json")) build_corpus(naive, naive_path);
        members.emplace_back("with_cross_paired", cross_path);
        members.emplace_back("without_cross_paired", naive_path);
    }
    if (!std::filesystem::exists(cfg.eval_dataset_path + "/manifest.json")) {
        if (cfg.eval_dataset_path.empty()) {
            throw ConfigError({"config.dataset.eval_path: required for ablation"});
        }
        build_corpus(cfg.eval_synth, cfg.eval_dataset_path);
    }

    struct Job {
        size_t row;
        uint64_t seed;
        std::string dir;
        RopeVariant variant;
        std::string dataset;
    };
    std::vector<Job> jobs;
    table.rows.resize(members.size());
    for (size_t mi = 0; mi < members.size(); ++mi) {
        table.rows[mi].name = members[mi].first;
        RopeVariant variant = axis == "rope_variant" ? rope_variant_from_name(members[mi].first)
                                                     : cfg.model.variant;
        for (uint64_t seed : cfg.ablate_seeds) {
            jobs.push_back({mi, seed,
                            cfg.out_dir + "/ablate_" + axis + "/" + members[mi].first + "/seed" +
                                std::to_string(seed),
                            variant, members[mi].second});
        }
    }

    int budget = thread_budget();
    int concurrent = std::max(1, std::min<int>(budget, static_cast<int>(jobs.size())));
    int per_member_threads = std::max(1, budget / concurrent);

    std::vector<std::optional<SampleScores>> results(jobs.size());
    std::vector<std::string> failures(jobs.size());
    std::atomic<size_t> cursor{0};
    auto worker = [&]() {
        for (;;) {
            size_t i = cursor.fetch_add(1);
            if (i >= jobs.size()) return;
            const Job& job = jobs[i];
            try {
                results[i] = run_ablation_member(cfg, job.dir, job.variant, job.seed, job.dataset,
                                                 per_member_threads);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < concurrent; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    std::string first_failure;
    for (size_t i = 0; i < jobs.size(); ++i) {
        if (results[i]) {
            SampleScores scores = *results[i];
            scores.id = static_cast<int64_t>(jobs[i].seed);
            table.rows[jobs[i].row].per_seed.emplace_back(jobs[i].seed, scores);
        } else if (first_failure.empty()) {
            first_failure = jobs[i].dir + ": " + failures[i];
        }
    }
    for (auto& row : table.rows) {
        std::vector<double> cons, dec;
        for (const auto& [seed, scores] : row.per_seed) {
            cons.push_back(scores.consistency);
            dec.push_back(scores.decoupling);
        }
        if (!cons.empty()) {
            row.median_consistency = detail::median(cons);
            row.median_decoupling = detail::median(dec);
        }
    }

    if (axis == "rope_variant" && table.rows.size() == 4) {
        const auto& concat = table.rows[0];
        const auto& shift_wh = table.rows[3];
        table.trend_holds = shift_wh.median_consistency >= concat.median_consistency &&
                            shift_wh.median_decoupling >= concat.median_decoupling;
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "shift_wh vs concat: consistency %.6f vs %.6f, decoupling %.6f vs %.6f -> %s",
                      shift_wh.median_consistency, concat.median_consistency,
                      shift_wh.median_decoupling, concat.median_decoupling,
                      table.trend_holds ? "holds" : "does NOT hold (finding)");
        table.trend_note = buf;
    } else if (table.rows.size() == 2) {
        const auto& with_cp = table.rows[0];
        const auto& without = table.rows[1];
        table.trend_holds = with_cp.median_consistency >= without.median_consistency &&
                            with_cp.median_decoupling >= without.median_decoupling;
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "with vs without cross-paired: consistency %.6f vs %.6f, decoupling %.6f vs "
                      "%.6f -> %s",
                      with_cp.median_consistency, without.median_consistency,
                      with_cp.median_decoupling, without.median_decoupling,
                      table.trend_holds ? "holds" : "does NOT hold (finding)");
        table.trend_note = buf;
    }

    std::filesystem::create_directories(cfg.out_dir);
    Json j = table.to_json();
    if (!first_failure.empty()) {
        j["status"] = "partial";
        j["failure"] = first_failure;
        write_text_file(cfg.out_dir + "/ablation_" + axis + ".json", j.dump(2) + "\n");
        throw std::runtime_error("cmd_ablate: member run failed, partial table preserved at " +
                                 cfg.out_dir + "/ablation_" + axis + ".json: " + first_failure);
    }
    j["status"] = "ok";
    write_text_file(cfg.out_dir + "/ablation_" + axis + ".json", j.dump(2) + "\n");
    return table;
}

} // namespace s2v
