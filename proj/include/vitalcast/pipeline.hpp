#pragma once

// Stage orchestration. Every stage reads its predecessors' persisted
// artifacts, writes its own under the run directory, and embeds the config
// hash plus a stage version. Chaining refuses on config-hash mismatch unless
// forced. Wall-clock timestamps appear only in the `generated_at` field of
// JSON artifacts; everything else is bit-deterministic given the seed.

#include <chrono>
#include <functional>
#include <set>

#include "vitalcast/config.hpp"
#include "vitalcast/evaluation.hpp"
#include "vitalcast/patterns.hpp"
#include "vitalcast/train.hpp"

namespace vitalcast {

// Chained stages found artifacts from a different configuration.
class StageMismatchError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunContext {
    PipelineConfig cfg;
    std::filesystem::path out;
    bool force = false;
};

namespace pipeline_detail {

inline constexpr const char* kStageVersion = "1";

inline std::string now_iso() {
    auto t = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(t);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
    return buf;
}

inline nlohmann::json stamp(const RunContext& ctx, const std::string& stage) {
    nlohmann::json j;
    j["stage"] = stage;
    j["stage_version"] = kStageVersion;
    j["config_hash"] = ctx.cfg.hash();
    j["generated_at"] = now_iso();
    return j;
}

inline void write_manifest(const RunContext& ctx, const std::string& stage,
                           nlohmann::json extra = {}) {
    nlohmann::json j = stamp(ctx, stage);
    if (!extra.is_null()) {
        for (auto& [k, v] : extra.items()) j[k] = v;
    }
    write_text_file(ctx.out / stage / "stage.json", j.dump(2) + "\n");
}

inline nlohmann::json require_stage(const RunContext& ctx, const std::string& stage) {
    std::filesystem::path p = ctx.out / stage / "stage.json";
    if (!std::filesystem::exists(p)) throw MissingArtifactError(p.string());
    nlohmann::json j = nlohmann::json::parse(read_text_file(p));
    std::string found = j.value("config_hash", "");
    if (found != ctx.cfg.hash() && !ctx.force) {
        throw StageMismatchError("stage '" + stage + "' was produced with config hash " + found +
                                 " but the current config hashes to " + ctx.cfg.hash() +
                                 "; rerun upstream or pass --force");
    }
    return j;
}

inline std::filesystem::path data_root(const RunContext& ctx) {
    if (!ctx.cfg.data_root.empty()) return ctx.cfg.data_root;
    return ctx.out / "data";
}

inline std::vector<std::string> list_user_dirs(const std::filesystem::path& root) {
    if (!std::filesystem::exists(root)) throw MissingArtifactError(root.string());
    std::vector<std::string> users;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory()) users.push_back(entry.path().filename().string());
    }
    std::sort(users.begin(), users.end());
    if (users.empty()) throw MissingArtifactError(root.string() + " (no user directories)");
    return users;
}

inline std::string sanitize_key(const std::string& s) {
    std::string out;
    bool dash = false;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            dash = false;
        } else if (!dash && !out.empty()) {
            out += '-';
            dash = true;
        }
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out.empty() ? "x" : out;
}

// Tags persisted by ingest, reloaded by labeling.
inline nlohmann::json tags_to_json(const std::map<std::string, std::vector<TagRecord>>& by_user) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [user, tags] : by_user) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& t : tags) {
            arr.push_back({{"name", t.name},
                           {"category", category_name(t.category)},
                           {"t0", t.t0},
                           {"t1", t.t1},
                           {"expected_effect", expected_effect_name(t.expected_effect)}});
        }
        j[user] = arr;
    }
    return j;
}

inline std::vector<TagRecord> tags_from_json(const nlohmann::json& j, const std::string& user) {
    std::vector<TagRecord> out;
    for (const auto& e : j.at(user)) {
        TagRecord t;
        t.user_id = user;
        t.name = e.at("name").get<std::string>();
        t.category = category_from_name(e.at("category").get<std::string>()).value_or(Category::Other);
        t.t0 = e.at("t0").get<std::int64_t>();
        t.t1 = e.at("t1").get<std::int64_t>();
        t.expected_effect = expected_effect_from_name(e.at("expected_effect").get<std::string>());
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<std::string> manifest_users(const nlohmann::json& manifest) {
    return manifest.at("users").get<std::vector<std::string>>();
}

inline std::vector<AnchoredExample> load_all_examples(const RunContext& ctx,
                                                      const nlohmann::json& label_manifest) {
    nlohmann::json index =
        nlohmann::json::parse(read_text_file(ctx.out / "labels" / "examples.json"));
    std::vector<AnchoredExample> all;
    for (const std::string& user : manifest_users(label_manifest)) {
        nlohmann::json user_index = nlohmann::json::array();
        for (const auto& e : index) {
            if (e.at("user_id").get<std::string>() == user) user_index.push_back(e);
        }
        if (user_index.empty()) continue;
        auto loaded = load_examples(user_index, ctx.out / "labels" / ("targets_" + user + ".csv"),
                                    ctx.out / "labels" / ("contexts_" + user + ".csv"));
        for (auto& ex : loaded) all.push_back(std::move(ex));
    }
    return all;
}

inline std::map<std::string, Split> load_split_assignment(const RunContext& ctx) {
    nlohmann::json j =
        nlohmann::json::parse(read_text_file(ctx.out / "splits" / "assignment.json"));
    std::map<std::string, Split> out;
    for (auto& [id, name] : j.at("assignment").items()) {
        std::string s = name.get<std::string>();
        out[id] = s == "test" ? Split::Test : (s == "validation" ? Split::Validation : Split::Train);
    }
    return out;
}

}  // namespace pipeline_detail

// --- stages ------------------------------------------------------------------

inline void run_simulate(RunContext& ctx) {
    using namespace pipeline_detail;
    SynthCohort cohort = generate_cohort(ctx.cfg.synth, ctx.cfg.epsilon);
    write_cohort_files(cohort, data_root(ctx), ctx.cfg.utc_offset_minutes);
    nlohmann::json extra;
    std::vector<std::string> users;
    for (const auto& b : cohort.bundles) users.push_back(b.user_id);
    extra["users"] = users;
    write_manifest(ctx, "simulate", extra);
}

inline void run_ingest(RunContext& ctx) {
    using namespace pipeline_detail;
    std::filesystem::path root = data_root(ctx);
    std::vector<std::string> users = list_user_dirs(root);

    nlohmann::json report = stamp(ctx, "ingest");
    std::map<std::string, std::vector<TagRecord>> tags_by_user;
    for (const std::string& user : users) {
        ParseReport rep;
        StreamBundle bundle = parse_streams(root / user, user, ctx.cfg.utc_offset_minutes, rep);
        tags_by_user[user] = parse_tags(root / user / "tags.csv", user, rep);
        MinuteGrid grid = align_minute_grid(bundle, ctx.cfg.align);
        write_text_file(ctx.out / "ingest" / ("grid_" + user + ".csv"), grid_to_csv(grid));
        write_text_file(ctx.out / "ingest" / ("bbi_" + user + ".csv"), bbi_to_csv(bundle.bbi));
        std::string sleep = "day,score\n";
        for (const auto& [day, score] : bundle.sleep) {
            sleep += std::to_string(day) + "," + fmt_double(score) + "\n";
        }
        write_text_file(ctx.out / "ingest" / ("sleep_" + user + ".csv"), sleep);
        report["users"][user] = rep.to_json();
    }
    write_text_file(ctx.out / "ingest" / "parse_report.json", report.dump(2) + "\n");
    write_text_file(ctx.out / "ingest" / "tags.json", tags_to_json(tags_by_user).dump(2) + "\n");
    nlohmann::json extra;
    extra["users"] = users;
    write_manifest(ctx, "ingest", extra);
}

inline void run_featurize(RunContext& ctx) {
    using namespace pipeline_detail;
    nlohmann::json ingest = require_stage(ctx, "ingest");
    std::vector<std::string> users = manifest_users(ingest);
    for (const std::string& user : users) {
        MinuteGrid grid = grid_from_csv(ctx.out / "ingest" / ("grid_" + user + ".csv"), user);
        std::vector<BbiEvent> bbi = bbi_from_csv(ctx.out / "ingest" / ("bbi_" + user + ".csv"));
        RmssdSeries rmssd = compute_rmssd(bbi, grid.start_minute, grid.size(), ctx.cfg.rmssd);
        std::map<std::int64_t, double> sleep;
        CsvTable st = read_csv(ctx.out / "ingest" / ("sleep_" + user + ".csv"));
        for (const auto& row : st.rows) sleep[*parse_int(row[0])] = *parse_double(row[1]);
        FeatureFrame frame = build_feature_frame(grid, rmssd, sleep);
        write_text_file(ctx.out / "features" / ("features_" + user + ".csv"),
                        feature_frame_to_csv(frame));
    }
    nlohmann::json meta = stamp(ctx, "features");
    meta["version"] = kFeatureVersion;
    nlohmann::json names = nlohmann::json::array();
    for (int f = 0; f < kFeatureCount; ++f) names.push_back(feature_names()[f]);
    meta["feature_names"] = names;
    write_text_file(ctx.out / "features" / "features_meta.json", meta.dump(2) + "\n");
    nlohmann::json extra;
    extra["users"] = users;
    write_manifest(ctx, "features", extra);
}

inline void run_label(RunContext& ctx) {
    using namespace pipeline_detail;
    nlohmann::json ingest = require_stage(ctx, "ingest");
    nlohmann::json features = require_stage(ctx, "features");
    std::vector<std::string> users = manifest_users(features);
    nlohmann::json tags_json =
        nlohmann::json::parse(read_text_file(ctx.out / "ingest" / "tags.json"));

    std::vector<AnchoredExample> all;
    std::string rejections;
    for (const std::string& user : users) {
        FeatureFrame frame =
            feature_frame_from_csv(ctx.out / "features" / ("features_" + user + ".csv"), user);
        std::vector<BbiEvent> bbi = bbi_from_csv(ctx.out / "ingest" / ("bbi_" + user + ".csv"));
        std::vector<TagRecord> tags = tags_from_json(tags_json, user);
        auto series = build_metric_series(frame, bbi);
        LabelingResult res = make_examples(frame, series, tags, ctx.cfg.labeling);
        write_text_file(ctx.out / "labels" / ("targets_" + user + ".csv"),
                        targets_to_csv(res.examples));
        write_text_file(ctx.out / "labels" / ("contexts_" + user + ".csv"),
                        contexts_to_csv(res.examples));
        for (const auto& r : res.rejections) {
            nlohmann::json line;
            line["user_id"] = r.user_id;
            line["tag_index"] = r.tag_index;
            line["reasons"] = r.reasons;
            rejections += line.dump() + "\n";
        }
        for (auto& ex : res.examples) all.push_back(std::move(ex));
    }
    write_text_file(ctx.out / "labels" / "examples.json",
                    example_index_json(all).dump(2) + "\n");
    write_text_file(ctx.out / "labels" / "rejections.jsonl", rejections);
    nlohmann::json extra;
    extra["users"] = users;
    extra["examples"] = all.size();
    write_manifest(ctx, "labels", extra);
    (void)ingest;
}

inline void run_split(RunContext& ctx) {
    using namespace pipeline_detail;
    nlohmann::json labels = require_stage(ctx, "labels");
    nlohmann::json index =
        nlohmann::json::parse(read_text_file(ctx.out / "labels" / "examples.json"));
    std::vector<SplitKey> keys;
    std::vector<std::string> ids;
    for (const auto& e : index) {
        keys.push_back({e.at("user_id").get<std::string>(), e.at("t1").get<std::int64_t>(),
                        e.at("t0").get<std::int64_t>()});
        ids.push_back(e.at("id").get<std::string>());
    }
    std::vector<Split> splits = split_leak_safe(keys, ctx.cfg.split);
    nlohmann::json j = stamp(ctx, "splits");
    nlohmann::json assignment = nlohmann::json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        assignment[ids[i]] = split_name(splits[i]);
    }
    j["assignment"] = assignment;
    write_text_file(ctx.out / "splits" / "assignment.json", j.dump(2) + "\n");
    write_manifest(ctx, "splits");
    (void)labels;
}

inline void run_train(RunContext& ctx) {
    using namespace pipeline_detail;
    nlohmann::json labels = require_stage(ctx, "labels");
    require_stage(ctx, "splits");
    std::vector<AnchoredExample> all = load_all_examples(ctx, labels);
    auto assignment = load_split_assignment(ctx);
    std::vector<const AnchoredExample*> train, val;
    for (const auto& ex : all) {
        Split s = assignment.at(ex.id());
        if (s == Split::Train) train.push_back(&ex);
        if (s == Split::Validation) val.push_back(&ex);
    }
    TrainedModel model = train_model(train, val, ctx.cfg.model, ctx.cfg.epsilon);
    save_model(model, ctx.out / "model", ctx.cfg.hash());
    nlohmann::json rep = stamp(ctx, "model");
    rep["report"] = model.report.to_json();
    rep["train_examples"] = train.size();
    rep["validation_examples"] = val.size();
    write_text_file(ctx.out / "model" / "train_report.json", rep.dump(2) + "\n");
    write_manifest(ctx, "model");
}

inline void run_calibrate(RunContext& ctx) {
    using namespace pipeline_detail;
    nlohmann::json labels = require_stage(ctx, "labels");
    require_stage(ctx, "splits");
    require_stage(ctx, "model");
    TrainedModel tm = load_model(ctx.out / "model");
    QuantileTransformer net = instantiate(tm);
    std::vector<AnchoredExample> all = load_all_examples(ctx, labels);
    auto assignment = load_split_assignment(ctx);

    std::vector<ScoredExample> train_scored;
    for (const auto& ex : all) {
        if (assignment.at(ex.id()) != Split::Train) continue;
        train_scored.push_back({&ex, forecast_example(tm, net, ex)});
    }
    CalibrationBundle bundle =
        fit_calibration(train_scored, tm.config.median_index(), ctx.cfg.calibration);
    nlohmann::json j = stamp(ctx, "calibration");
    j["bundle"] = bundle.to_json();
    write_text_file(ctx.out / "calibration" / "bundle.json", j.dump(2) + "\n");
    write_manifest(ctx, "calibration");
}

inline void run_evaluate(RunContext& ctx) {
    using namespace pipeline_detail;
    nlohmann::json labels = require_stage(ctx, "labels");
    require_stage(ctx, "splits");
    require_stage(ctx, "model");
    require_stage(ctx, "calibration");
    TrainedModel tm = load_model(ctx.out / "model");
    QuantileTransformer net = instantiate(tm);
    CalibrationBundle bundle = CalibrationBundle::from_json(
        nlohmann::json::parse(read_text_file(ctx.out / "calibration" / "bundle.json"))
            .at("bundle"));
    std::vector<AnchoredExample> all = load_all_examples(ctx, labels);
    auto assignment = load_split_assignment(ctx);

    std::vector<const AnchoredExample*> test;
    for (const auto& ex : all) {
        if (assignment.at(ex.id()) == Split::Test) test.push_back(&ex);
    }
    std::vector<EvaluatedExample> evaluated;
    for (const auto* ex : test) {
        QuantileForecast f = forecast_example(tm, net, *ex);
        EvaluatedExample ee;
        ee.example = ex;
        ee.signs = predict_sign(f, bundle, tm.config.median_index(), ex->horizon);
        evaluated.push_back(std::move(ee));
    }

    nlohmann::json j = stamp(ctx, "eval");
    for (Grouping g : {Grouping::All, Grouping::User, Grouping::Category}) {
        auto reports = aggregate_report(evaluated, g, ctx.cfg.windows);
        j["groupings"][grouping_name(g)] = report_to_json(reports, g);
        write_text_file(ctx.out / "eval" / ("bars_" + std::string(grouping_name(g)) + ".csv"),
                        bars_to_csv(reports, g));
        write_text_file(ctx.out / "eval" / ("confusion_" + std::string(grouping_name(g)) + ".csv"),
                        confusion_to_csv(reports, g));
        if (g == Grouping::All && !reports.empty()) {
            write_text_file(ctx.out / "eval" / "bars_all.svg", bars_to_svg(reports, "all"));
        }
    }
    j["test_examples"] = test.size();
    write_text_file(ctx.out / "eval" / "report.json", j.dump(2) + "\n");
    write_text_file(ctx.out / "eval" / "signs.csv", signs_to_csv(evaluated));
    write_manifest(ctx, "eval");
}

inline void run_heatmap(RunContext& ctx) {
    using namespace pipeline_detail;
    require_stage(ctx, "eval");
    CsvTable signs = read_csv(ctx.out / "eval" / "signs.csv");

    struct Row {
        std::string user, category;
        std::int64_t end = 0;
        std::array<std::vector<int>, kMetricCount> s_a, s_p;
        std::array<std::vector<std::uint8_t>, kMetricCount> valid, target_valid;
    };
    std::map<std::string, Row> rows;  // by example id
    const int H = ctx.cfg.windows.horizon();
    for (const auto& r : signs.rows) {
        Row& row = rows[r[0]];
        if (row.s_a[0].empty()) {
            row.user = r[1];
            row.category = r[2];
            row.end = *parse_int(r[3]);
            for (int m = 0; m < kMetricCount; ++m) {
                row.s_a[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(H), 0);
                row.s_p[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(H), 0);
                row.valid[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(H), 0);
                row.target_valid[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(H), 0);
            }
        }
        int m = static_cast<int>(*metric_from_name(r[4]));
        int k = static_cast<int>(*parse_int(r[5]));
        if (k >= H) continue;
        row.s_a[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] =
            static_cast<int>(*parse_int(r[6]));
        row.s_p[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] =
            static_cast<int>(*parse_int(r[7]));
        row.valid[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = r[9] == "1";
        row.target_valid[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = r[10] == "1";
    }

    auto build_vectors = [&](Metric metric, bool predicted,
                             const std::function<bool(const Row&)>& keep) {
        std::vector<SignVector> vecs;
        for (const auto& [id, row] : rows) {
            if (!keep(row)) continue;
            SignVector v;
            v.example_id = id;
            v.user_id = row.user;
            v.category = row.category;
            v.end_minute = row.end;
            v.metric = metric;
            int m = static_cast<int>(metric);
            const auto& signs_src = predicted ? row.s_p[static_cast<std::size_t>(m)]
                                              : row.s_a[static_cast<std::size_t>(m)];
            const auto& mask = predicted ? row.valid[static_cast<std::size_t>(m)]
                                         : row.target_valid[static_cast<std::size_t>(m)];
            for (int w = 0; w < 4; ++w) {
                v.cell[static_cast<std::size_t>(w)] = window_sign(
                    signs_src, mask, ctx.cfg.windows.windows[static_cast<std::size_t>(w)]);
            }
            vecs.push_back(std::move(v));
        }
        return vecs;
    };

    std::set<std::string> users, categories;
    for (const auto& [id, row] : rows) {
        users.insert(row.user);
        categories.insert(row.category);
    }

    auto emit = [&](const std::string& level, const std::string& key, Metric metric,
                    bool predicted, const std::function<bool(const Row&)>& keep) {
        auto vecs = build_vectors(metric, predicted, keep);
        if (vecs.empty()) return;
        auto order = cluster_rows(vecs);
        std::string base = "heatmap_" + level + "_" + sanitize_key(key) + "_" +
                           metric_name(metric) + "_" + (predicted ? "pred" : "actual");
        std::string title = std::string(metric_name(metric)) + " " + level + " " + key + " " +
                            (predicted ? "predicted" : "actual");
        write_text_file(ctx.out / "heatmaps" / (base + ".csv"),
                        heatmap_to_csv(vecs, order, ctx.cfg.windows));
        write_text_file(ctx.out / "heatmaps" / (base + ".svg"),
                        heatmap_to_svg(vecs, order, title, ctx.cfg.windows));
    };

    for (int m = 0; m < kMetricCount; ++m) {
        Metric metric = static_cast<Metric>(m);
        for (bool predicted : {true, false}) {
            emit("all", "all", metric, predicted, [](const Row&) { return true; });
            for (const std::string& u : users) {
                emit("user", u, metric, predicted,
                     [&](const Row& r) { return r.user == u; });
            }
            for (const std::string& c : categories) {
                emit("category", c, metric, predicted,
                     [&](const Row& r) { return r.category == c; });
            }
        }
    }
    write_manifest(ctx, "heatmaps");
}

// Dispatches one CLI command. Unknown commands return false.
inline bool run_command(const std::string& command, RunContext& ctx) {
    if (command == "simulate") run_simulate(ctx);
    else if (command == "ingest") run_ingest(ctx);
    else if (command == "featurize") run_featurize(ctx);
    else if (command == "label") run_label(ctx);
    else if (command == "split") run_split(ctx);
    else if (command == "train") run_train(ctx);
    else if (command == "calibrate") run_calibrate(ctx);
    else if (command == "evaluate") run_evaluate(ctx);
    else if (command == "heatmap") run_heatmap(ctx);
    else if (command == "all") {
        run_simulate(ctx);
        run_ingest(ctx);
        run_featurize(ctx);
        run_label(ctx);
        run_split(ctx);
        run_train(ctx);
        run_calibrate(ctx);
        run_evaluate(ctx);
        run_heatmap(ctx);
    } else {
        return false;
    }
    return true;
}

}  // namespace vitalcast
