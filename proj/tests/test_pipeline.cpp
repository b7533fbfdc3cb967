#include <catch_amalgamated.hpp>

#include <cstdlib>

#include "vitalcast/pipeline.hpp"

using namespace vitalcast;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vitalcast_pipe_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

PipelineConfig tiny_pipeline_config() {
    PipelineConfig cfg;
    cfg.synth.users = 1;
    cfg.synth.days = 3;
    cfg.model.width = 16;
    cfg.model.depth = 1;
    cfg.model.heads = 2;
    cfg.model.max_epochs = 2;
    cfg.model.patience = 2;
    cfg.seed = 5;
    cfg.sync_sections();
    return cfg;
}

}  // namespace

TEST_CASE("config file parsing, defaults, and rejection of unknown keys") {
    auto dir = fresh_dir("cfg");
    write_text_file(dir / "ok.cfg",
                    "# comment\n"
                    "seed = 9\n"
                    "model.width = 24\n"
                    "labeling.epsilon_hr = 1.5\n"
                    "windows.edges = 0,15,30,60,120\n");
    PipelineConfig cfg = load_config(dir / "ok.cfg", false);
    CHECK(cfg.seed == 9);
    CHECK(cfg.model.width == 24);
    CHECK(cfg.epsilon.hr == 1.5);
    CHECK(cfg.epsilon.rmssd == 2.5);               // paper default untouched
    CHECK(cfg.model.context_len == 90);            // W default
    CHECK(cfg.labeling.baseline.window_minutes == 30);
    CHECK(cfg.labeling.baseline.min_valid == 24);
    CHECK(cfg.model.seed == 9);                    // seed propagates

    write_text_file(dir / "bad.cfg", "model.widht = 24\n");
    CHECK_THROWS_AS(load_config(dir / "bad.cfg", false), ConfigError);

    write_text_file(dir / "neg.cfg", "labeling.epsilon_bbi = -1\n");
    CHECK_THROWS_AS(load_config(dir / "neg.cfg", false), ConfigError);

    write_text_file(dir / "quant.cfg", "model.quantiles = 0.1,0.9\n");
    CHECK_THROWS_AS(load_config(dir / "quant.cfg", false), ConfigError);  // median required
}

TEST_CASE("environment variables override file settings") {
    auto dir = fresh_dir("env");
    write_text_file(dir / "base.cfg", "model.width = 24\n");
    ::setenv("VITALCAST_MODEL__WIDTH", "32", 1);
    ::setenv("VITALCAST_SEED", "77", 1);
    PipelineConfig cfg = load_config(dir / "base.cfg", true);
    ::unsetenv("VITALCAST_MODEL__WIDTH");
    ::unsetenv("VITALCAST_SEED");
    CHECK(cfg.model.width == 32);
    CHECK(cfg.seed == 77);
}

TEST_CASE("config hash covers semantics, not locations") {
    PipelineConfig a = tiny_pipeline_config();
    PipelineConfig b = a;
    b.out_dir = "/somewhere/else";
    b.data_root = "/other/data";
    CHECK(a.hash() == b.hash());
    b.model.width = a.model.width + 8;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("the full stage chain runs end to end on a tiny cohort") {
    RunContext ctx;
    ctx.cfg = tiny_pipeline_config();
    ctx.out = fresh_dir("chain");
    ctx.cfg.out_dir = ctx.out.string();

    REQUIRE(run_command("all", ctx));
    CHECK(fs::exists(ctx.out / "ingest" / "parse_report.json"));
    CHECK(fs::exists(ctx.out / "labels" / "examples.json"));
    CHECK(fs::exists(ctx.out / "model" / "params.bin"));
    CHECK(fs::exists(ctx.out / "calibration" / "bundle.json"));
    CHECK(fs::exists(ctx.out / "eval" / "report.json"));
    CHECK(fs::exists(ctx.out / "eval" / "bars_all.csv"));

    // rerunning a single stage over existing artifacts succeeds
    run_command("evaluate", ctx);

    // unknown commands are rejected
    CHECK_FALSE(run_command("bogus", ctx));
}

TEST_CASE("stages refuse to run before their upstream artifacts exist") {
    RunContext ctx;
    ctx.cfg = tiny_pipeline_config();
    ctx.out = fresh_dir("dep");
    ctx.cfg.out_dir = ctx.out.string();
    CHECK_THROWS_AS(run_command("evaluate", ctx), MissingArtifactError);
    CHECK_THROWS_AS(run_command("featurize", ctx), MissingArtifactError);
}

TEST_CASE("config hash mismatch between stages is refused unless forced") {
    RunContext ctx;
    ctx.cfg = tiny_pipeline_config();
    ctx.out = fresh_dir("mismatch");
    ctx.cfg.out_dir = ctx.out.string();
    run_command("simulate", ctx);
    run_command("ingest", ctx);

    RunContext changed = ctx;
    changed.cfg.model.width = 48;  // different semantic config
    changed.cfg.sync_sections();
    CHECK_THROWS_AS(run_command("featurize", changed), StageMismatchError);
    changed.force = true;
    run_command("featurize", changed);  // forced through
    CHECK(fs::exists(ctx.out / "features" / "stage.json"));
}

TEST_CASE("per-stage reruns with identical config produce identical artifacts") {
    RunContext ctx;
    ctx.cfg = tiny_pipeline_config();
    ctx.out = fresh_dir("rerun");
    ctx.cfg.out_dir = ctx.out.string();
    run_command("simulate", ctx);
    run_command("ingest", ctx);
    run_command("featurize", ctx);
    std::string first = read_text_file(ctx.out / "features" / "features_userA.csv");
    run_command("featurize", ctx);
    std::string second = read_text_file(ctx.out / "features" / "features_userA.csv");
    CHECK(first == second);
}
