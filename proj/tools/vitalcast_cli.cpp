// vitalcast: intervention-anchored forecasting of post-intervention
// physiological responses from wearable streams.
//
// Exit codes: 0 success, 2 missing upstream artifact or stage mismatch,
// 3 configuration invariant violation, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "vitalcast/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"vitalcast: post-intervention physiological response forecasting"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    std::optional<std::uint64_t> seed;
    bool force = false;

    app.add_option("--config", config_path, "key = value config file");
    app.add_option("--out", out_dir, "run directory for artifacts");
    app.add_option("--data", data_dir, "stream data root (default <out>/data)");
    app.add_option("--seed", seed, "override the config seed");
    app.add_flag("--force", force, "ignore config-hash mismatches between stages");

    const char* commands[] = {"simulate", "ingest", "featurize", "label", "split",
                              "train",    "calibrate", "evaluate", "heatmap", "all"};
    const char* help[] = {
        "generate a synthetic cohort with known effects",
        "parse and validate streams, align the minute grid",
        "derive RMSSD, slopes, and time encodings",
        "build anchored examples with baselines and sign targets",
        "assign leak-safe per-user chronological splits",
        "train the multi-horizon quantile forecaster",
        "fit isotonic maps, onset shift, and sign thresholds on train data",
        "compute windowed decision-aware metrics on test data",
        "cluster sign vectors and render heatmaps",
        "run the whole chain on a fresh synthetic cohort",
    };
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        app.add_subcommand(commands[i], help[i]);
    }

    CLI11_PARSE(app, argc, argv);
    std::string command = app.get_subcommands().front()->get_name();

    try {
        vitalcast::RunContext ctx;
        std::optional<std::filesystem::path> cfg_file;
        if (!config_path.empty()) cfg_file = config_path;
        ctx.cfg = vitalcast::load_config(cfg_file);
        if (!out_dir.empty()) ctx.cfg.out_dir = out_dir;
        if (!data_dir.empty()) ctx.cfg.data_root = data_dir;
        if (seed) {
            ctx.cfg.seed = *seed;
            ctx.cfg.apply_seed();
        }
        ctx.out = ctx.cfg.out_dir;
        ctx.force = force;

        if (!vitalcast::run_command(command, ctx)) {
            std::fprintf(stderr, "unknown command: %s\n", command.c_str());
            return 1;
        }
        std::printf("%s: done (artifacts under %s)\n", command.c_str(), ctx.out.string().c_str());
        return 0;
    } catch (const vitalcast::MissingArtifactError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const vitalcast::StageMismatchError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const vitalcast::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
