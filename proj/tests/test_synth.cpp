#include <catch_amalgamated.hpp>

#include <map>
#include <tuple>

#include "vitalcast/synth.hpp"

using namespace vitalcast;

namespace {

using GtKey = std::tuple<std::string, std::size_t, int, int>;

std::map<GtKey, const GroundTruthRow*> index_ground_truth(const SynthCohort& cohort) {
    std::map<GtKey, const GroundTruthRow*> ix;
    for (const auto& r : cohort.ground_truth) {
        ix[{r.user_id, r.tag_index, static_cast<int>(r.metric), r.offset}] = &r;
    }
    return ix;
}

struct PipelineRun {
    MinuteGrid grid;
    RmssdSeries rmssd;
    FeatureFrame frame;
    std::array<MetricSeries, kMetricCount> series;
    LabelingResult labeled;
};

PipelineRun run_pipeline(const StreamBundle& bundle, const std::vector<TagRecord>& tags) {
    PipelineRun run;
    run.grid = align_minute_grid(bundle);
    run.rmssd = compute_rmssd(bundle.bbi, run.grid.start_minute, run.grid.size());
    run.frame = build_feature_frame(run.grid, run.rmssd, bundle.sleep);
    run.series = build_metric_series(run.frame, bundle.bbi);
    run.labeled = make_examples(run.frame, run.series, tags);
    return run;
}

SynthSpec small_spec() {
    SynthSpec spec = SynthSpec::defaults();
    spec.users = 2;
    spec.days = 3;
    spec.seed = 11;
    return spec;
}

}  // namespace

TEST_CASE("same seed generates identical cohorts") {
    SynthSpec spec = small_spec();
    SynthCohort a = generate_cohort(spec);
    SynthCohort b = generate_cohort(spec);
    REQUIRE(a.bundles.size() == b.bundles.size());
    for (std::size_t u = 0; u < a.bundles.size(); ++u) {
        REQUIRE(a.bundles[u].bbi.size() == b.bundles[u].bbi.size());
        for (std::size_t i = 0; i < a.bundles[u].bbi.size(); i += 997) {
            REQUIRE(a.bundles[u].bbi[i].t_ms == b.bundles[u].bbi[i].t_ms);
            REQUIRE(a.bundles[u].bbi[i].interval_ms == b.bundles[u].bbi[i].interval_ms);
        }
        REQUIRE(a.tags[u].size() == b.tags[u].size());
    }
    REQUIRE(a.ground_truth.size() == b.ground_truth.size());
    for (std::size_t i = 0; i < a.ground_truth.size(); i += 109) {
        REQUIRE(a.ground_truth[i].delta_pct == b.ground_truth[i].delta_pct);
        REQUIRE(a.ground_truth[i].sign == b.ground_truth[i].sign);
    }

    SynthSpec other = spec;
    other.seed = 12;
    SynthCohort c = generate_cohort(other);
    bool any_diff = false;
    for (std::size_t i = 0; i < std::min(c.bundles[0].bbi.size(), a.bundles[0].bbi.size());
         ++i) {
        if (c.bundles[0].bbi[i].interval_ms != a.bundles[0].bbi[i].interval_ms) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("null cohort has identically zero percent change and neutral signs") {
    SynthSpec spec = small_spec();
    spec.noise_scale = 0.0;
    spec.bbi_circadian_amp_ms = 0.0;
    for (auto& e : spec.effects) e.reset();
    SynthCohort cohort = generate_cohort(spec);
    long checked = 0;
    for (const auto& r : cohort.ground_truth) {
        if (!r.valid) continue;
        REQUIRE(r.delta_pct == 0.0);
        REQUIRE(r.sign == 0);
        ++checked;
    }
    CHECK(checked > 1000);
}

TEST_CASE("generated streams stay inside the plausibility bands") {
    SynthSpec spec = small_spec();
    SynthCohort cohort = generate_cohort(spec);
    for (const auto& b : cohort.bundles) {
        for (const auto& s : b.hr) {
            REQUIRE(s.value > 30.0);
            REQUIRE(s.value < 220.0);
        }
        for (const auto& [day, score] : b.sleep) {
            REQUIRE(score >= 0.0);
            REQUIRE(score <= 100.0);
        }
    }
    // RMSSD of the generated beats, via the pipeline path, stays in [1, 300]
    PipelineRun run = run_pipeline(cohort.bundles[0], cohort.tags[0]);
    for (std::size_t i = 0; i < run.rmssd.size(); ++i) {
        if (!run.rmssd.valid[i]) continue;
        REQUIRE(run.rmssd.rmssd[i] >= 1.0);
        REQUIRE(run.rmssd.rmssd[i] <= 300.0);
    }
}

TEST_CASE("an injected positive bbi effect is supra-threshold for its whole span") {
    SynthSpec spec;
    spec.users = 1;
    spec.days = 1;
    spec.seed = 3;
    spec.noise_scale = 0.0;
    spec.bbi_circadian_amp_ms = 0.0;
    spec.interventions_per_day = 1;
    for (auto& e : spec.effects) e.reset();
    for (int c = 0; c < kCategoryCount; ++c) {
        spec.effects[static_cast<std::size_t>(c)] = EffectTemplate{Metric::Bbi, +1, 10.0, 0, 40.0};
    }
    EpsilonBands eps;
    SynthCohort cohort = generate_cohort(spec, eps);
    auto ix = index_ground_truth(cohort);
    // 10 * exp(-k/40) >= 1 while k <= 40 ln 10 ~ 92.1
    int supra = static_cast<int>(std::floor(40.0 * std::log(10.0 / 1.0)));
    for (int k = 0; k <= supra; ++k) {
        const auto* row = ix.at({cohort.bundles[0].user_id, 0, static_cast<int>(Metric::Bbi), k});
        REQUIRE(row->valid);
        REQUIRE(row->sign == 1);
    }
    const auto* after = ix.at({cohort.bundles[0].user_id, 0, static_cast<int>(Metric::Bbi), 110});
    CHECK(after->sign == 0);
}

TEST_CASE("labeling reproduces the ground-truth sign table exactly on a noise-free cohort") {
    for (bool strong : {false, true}) {
        SynthSpec spec = small_spec();
        spec.noise_scale = 0.0;
        spec.bbi_circadian_amp_ms = 0.0;
        if (!strong) {
            for (auto& e : spec.effects) e.reset();
        }
        EpsilonBands eps;
        SynthCohort cohort = generate_cohort(spec, eps);
        auto ix = index_ground_truth(cohort);

        long minutes_checked = 0, examples_checked = 0;
        for (std::size_t u = 0; u < cohort.bundles.size(); ++u) {
            PipelineRun run = run_pipeline(cohort.bundles[u], cohort.tags[u]);
            REQUIRE_FALSE(run.labeled.examples.empty());
            for (const auto& ex : run.labeled.examples) {
                ++examples_checked;
                for (int m = 0; m < kMetricCount; ++m) {
                    for (int k = 0; k < ex.horizon; ++k) {
                        if (!ex.tvalid[m][static_cast<std::size_t>(k)]) continue;
                        const auto* row = ix.at({ex.user_id, ex.tag_index, m, k});
                        REQUIRE(row->valid);
                        REQUIRE(static_cast<int>(ex.sign[m][static_cast<std::size_t>(k)]) ==
                                row->sign);
                        ++minutes_checked;
                    }
                }
            }
        }
        INFO((strong ? "strong" : "null") << " cohort");
        CHECK(minutes_checked > 5000);
        CHECK(examples_checked >= 10);
    }
}

TEST_CASE("cohort files round-trip through the ingest parser") {
    SynthSpec spec;
    spec.users = 1;
    spec.days = 1;
    spec.seed = 21;
    SynthCohort cohort = generate_cohort(spec);
    auto root = std::filesystem::temp_directory_path() / "vitalcast_synth_rt";
    std::filesystem::remove_all(root);
    const int offset = -300;
    write_cohort_files(cohort, root, offset);

    const std::string user = cohort.bundles[0].user_id;
    ParseReport rep;
    StreamBundle parsed = parse_streams(root / user, user, offset, rep);
    REQUIRE(parsed.bbi.size() == cohort.bundles[0].bbi.size());
    for (std::size_t i = 0; i < parsed.bbi.size(); i += 101) {
        REQUIRE(parsed.bbi[i].t_ms == cohort.bundles[0].bbi[i].t_ms);
        REQUIRE(parsed.bbi[i].interval_ms == cohort.bundles[0].bbi[i].interval_ms);
    }
    REQUIRE(parsed.hr.size() == cohort.bundles[0].hr.size());
    for (std::size_t i = 0; i < parsed.hr.size(); i += 97) {
        REQUIRE(parsed.hr[i].minute == cohort.bundles[0].hr[i].minute);
        REQUIRE(parsed.hr[i].value == cohort.bundles[0].hr[i].value);
    }
    for (const auto& [day, score] : cohort.bundles[0].sleep) {
        REQUIRE(parsed.sleep.at(day) == score);
    }
    // zero drops anywhere
    for (const auto& [name, st] : rep.streams) {
        INFO(name);
        REQUIRE(st.rows_kept == st.rows_total);
    }

    auto tags = parse_tags(root / user / "tags.csv", user, rep);
    REQUIRE(tags.size() == cohort.tags[0].size());
    for (std::size_t i = 0; i < tags.size(); ++i) {
        REQUIRE(tags[i].t0 == cohort.tags[0][i].t0);
        REQUIRE(tags[i].t1 == cohort.tags[0][i].t1);
        REQUIRE(tags[i].category == cohort.tags[0][i].category);
    }
    std::filesystem::remove_all(root);
}

TEST_CASE("injected gaps create rejected candidates") {
    SynthSpec spec = small_spec();
    spec.gap_rate_per_day = 3.0;
    spec.seed = 5;
    SynthCohort cohort = generate_cohort(spec);
    long rejected = 0;
    for (std::size_t u = 0; u < cohort.bundles.size(); ++u) {
        PipelineRun run = run_pipeline(cohort.bundles[u], cohort.tags[u]);
        rejected += static_cast<long>(run.labeled.rejections.size());
    }
    CHECK(rejected > 0);
}
