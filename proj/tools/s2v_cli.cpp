// Batch CLI for the subject-to-video pipeline:
//   s2v synth  --config cfg.json            build the train/eval corpora
//   s2v train  --config cfg.json            train a model, write checkpoint
//   s2v sample --config cfg.json            generate videos from references
//   s2v eval   --config cfg.json            score generated videos
//   s2v ablate --config cfg.json --axis X   rerun the positional-variant or
//                                           cross-paired comparison
// Exit codes: 0 success, 2 configuration/validation failure, 3 runtime failure.
// S2V_THREADS overrides the worker thread budget.

#include <CLI11.hpp>

#include <iostream>

#include "s2v/harness.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct CommonArgs {
    std::string config_path;
    int64_t seed = -1;
    std::string out_dir;
    std::string variant;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration (JSON)")->required();
    cmd->add_option("--seed", args.seed, "override the command's primary seed");
    cmd->add_option("--out", args.out_dir, "override the output directory");
    cmd->add_option("--variant", args.variant,
                    "override the rope variant (concat|shift_w|shift_h|shift_wh)");
}

s2v::RunConfig load(const CommonArgs& args, const std::string& command) {
    s2v::RunConfig cfg = s2v::load_run_config(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (!args.variant.empty()) cfg.model.variant = s2v::rope_variant_from_name(args.variant);
    if (args.seed >= 0) {
        uint64_t seed = static_cast<uint64_t>(args.seed);
        if (command == "synth") {
            cfg.synth.seed = seed;
            cfg.eval_synth.seed = seed + 1000003;
        } else if (command == "train" || command == "ablate") {
            cfg.train.seed = seed;
        } else if (command == "sample") {
            cfg.sampler.seed = seed;
        }
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"subject-to-video desk-scale pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string axis = "rope_variant";

    CLI::App* synth = app.add_subcommand("synth", "generate the sprite-world corpora");
    add_common(synth, args);
    CLI::App* train = app.add_subcommand("train", "train the velocity model");
    add_common(train, args);
    CLI::App* sample = app.add_subcommand("sample", "generate videos from the eval references");
    add_common(sample, args);
    CLI::App* eval = app.add_subcommand("eval", "score generated videos");
    add_common(eval, args);
    CLI::App* ablate = app.add_subcommand("ablate", "run an ablation axis end to end");
    add_common(ablate, args);
    ablate->add_option("--axis", axis, "rope_variant | cross_paired");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (synth->parsed()) {
            auto cfg = load(args, "synth");
            auto res = s2v::cmd_synth(cfg);
            std::cout << "train corpus: " << res.train_stats.accepted << "/"
                      << res.train_stats.generated << " accepted -> " << cfg.dataset_path << "\n";
            if (!cfg.eval_dataset_path.empty()) {
                std::cout << "eval corpus:  " << res.eval_stats.accepted << "/"
                          << res.eval_stats.generated << " accepted -> " << cfg.eval_dataset_path
                          << "\n";
            }
        } else if (train->parsed()) {
            auto cfg = load(args, "train");
            auto res = s2v::cmd_train(cfg);
            std::cout << "trained " << res.steps_run << " steps, final loss " << res.final_loss
                      << ", checkpoint " << res.checkpoint_path << "\n";
        } else if (sample->parsed()) {
            auto cfg = load(args, "sample");
            auto res = s2v::cmd_sample(cfg);
            std::cout << "generated " << res.video_files.size() << " videos under " << cfg.out_dir
                      << "/generated\n";
        } else if (eval->parsed()) {
            auto cfg = load(args, "eval");
            auto report = s2v::cmd_eval(cfg);
            std::cout << report.table();
            std::cout << "report: " << cfg.out_dir << "/metric_report.json\n";
        } else if (ablate->parsed()) {
            auto cfg = load(args, "ablate");
            auto table = s2v::cmd_ablate(cfg, axis);
            std::cout << table.table();
            std::cout << "table: " << cfg.out_dir << "/ablation_" << axis << ".json\n";
        }
    } catch (const s2v::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
