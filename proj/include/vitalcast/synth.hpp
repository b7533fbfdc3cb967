#pragma once

// Synthetic cohort generator with known injected intervention effects. Streams
// are emitted in exactly the formats ingest consumes, and the ground-truth
// table is computed from the emitted data by direct, definitional code paths
// (naive per-minute means, brute-force RMSSD windows, plain medians) that are
// deliberately independent of the production implementations they verify.
//
// Beat construction: every minute carries beats_per_minute events at fixed
// spacing; intervals alternate around the minute's BBI level with the RSA
// oscillation, so the per-minute mean reconstructs the level exactly and the
// successive differences carry a controlled RMSSD. Injected effects are
// multiplicative ramps with exponential decay anchored at the intervention
// end; HR moves inversely through the 60000/BBI link.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vitalcast/labeling.hpp"
#include "vitalcast/streams.hpp"

namespace vitalcast {

struct EffectTemplate {
    Metric target = Metric::Bbi;
    int sign = 1;
    double peak_pct = 5.0;
    int onset_min = 0;
    double decay_min = 40.0;
};

struct SynthSpec {
    int users = 8;
    int days = 28;
    double bbi_mean_ms = 900.0;
    double bbi_circadian_amp_ms = 40.0;
    double rsa_amp_ms = 20.0;      // alternation amplitude; RMSSD of clean beats = 2x this
    double rsa_period_s = 10.0;
    double noise_scale = 0.003;    // relative AR(1) noise on stream levels
    double gap_rate_per_day = 0.0; // injected recording gaps (ingest robustness)
    int interventions_per_day = 3;
    int beats_per_minute = 12;     // 5-second event spacing keeps pairs adjacent
    std::uint64_t seed = 0;
    std::array<std::optional<EffectTemplate>, kCategoryCount> effects;

    // Strong templates: every peak exceeds 3x the metric's neutrality band.
    static SynthSpec defaults() {
        SynthSpec s;
        auto set = [&](Category c, Metric m, int sign, double peak, int onset, double decay) {
            s.effects[static_cast<std::size_t>(c)] = EffectTemplate{m, sign, peak, onset, decay};
        };
        set(Category::PhysicalActivityCardio, Metric::Bbi, -1, 8.0, 0, 40.0);
        set(Category::PhysicalActivityNonCardio, Metric::Bbi, -1, 4.0, 0, 40.0);
        set(Category::RestRecovery, Metric::Bbi, +1, 6.0, 0, 40.0);
        set(Category::FoodDrinkNutrition, Metric::Bbi, -1, 3.5, 5, 40.0);
        set(Category::HealthcareTherapy, Metric::Rmssd, +1, 12.0, 0, 40.0);
        set(Category::SocializingSocialInteraction, Metric::Hr, +1, 4.0, 0, 40.0);
        set(Category::SpiritualityMindfulActivities, Metric::Rmssd, +1, 15.0, 0, 40.0);
        set(Category::AcademicEducational, Metric::Hr, +1, 3.5, 0, 40.0);
        set(Category::Other, Metric::Bbi, +1, 3.5, 0, 40.0);
        return s;
    }

    void validate() const {
        for (const auto& e : effects) {
            if (e && e->decay_min <= 0.0) throw ConfigError("effect decay constants must be positive");
            if (e && e->peak_pct < 0.0) throw ConfigError("effect peaks must be non-negative");
        }
        if (users < 1 || days < 1) throw ConfigError("synthetic cohort needs users and days");
        if (beats_per_minute < 2 || 60000 % beats_per_minute != 0)
            throw ConfigError("beats_per_minute must divide the minute evenly");
    }
};

struct GroundTruthRow {
    std::string user_id;
    std::size_t tag_index = 0;
    Metric metric = Metric::Rmssd;
    int offset = 0;
    double delta_pct = 0.0;
    int sign = 0;
    bool valid = false;
};

struct SynthCohort {
    std::vector<StreamBundle> bundles;           // local-time semantics, per user
    std::vector<std::vector<TagRecord>> tags;    // per user, sorted by end
    std::vector<GroundTruthRow> ground_truth;
};

namespace synth_detail {

// Effect response at minute offset x past the anchor: linear ramp to the
// onset, then exponential decay.
inline double effect_response(double x, const EffectTemplate& e) {
    if (x < 0.0) return 0.0;
    if (x < static_cast<double>(e.onset_min)) {
        return (x + 1.0) / (static_cast<double>(e.onset_min) + 1.0);
    }
    return std::exp(-(x - static_cast<double>(e.onset_min)) / e.decay_min);
}

// --- definitional oracle pieces (independent of the pipeline modules) -------

inline double oracle_percent_change(double x, double base) {
    return 100.0 * (x - base) / std::max(std::abs(base), 1e-6);
}

inline int oracle_sign(double d, double eps) { return d >= eps ? 1 : (d <= -eps ? -1 : 0); }

// Naive per-minute mean of beat intervals, chronological accumulation.
inline void oracle_bbi_minutes(const std::vector<BbiEvent>& bbi, std::int64_t minutes,
                               std::vector<double>& value, std::vector<std::uint8_t>& valid) {
    value.assign(static_cast<std::size_t>(minutes), 0.0);
    valid.assign(static_cast<std::size_t>(minutes), 0);
    std::vector<double> sum(static_cast<std::size_t>(minutes), 0.0);
    std::vector<long> cnt(static_cast<std::size_t>(minutes), 0);
    for (const auto& e : bbi) {
        std::int64_t m = floor_div(e.t_ms, kMsPerMinute);
        if (m < 0 || m >= minutes) continue;
        sum[static_cast<std::size_t>(m)] += e.interval_ms;
        ++cnt[static_cast<std::size_t>(m)];
    }
    for (std::int64_t m = 0; m < minutes; ++m) {
        if (cnt[static_cast<std::size_t>(m)] > 0) {
            value[static_cast<std::size_t>(m)] =
                sum[static_cast<std::size_t>(m)] / static_cast<double>(cnt[static_cast<std::size_t>(m)]);
            valid[static_cast<std::size_t>(m)] = 1;
        }
    }
}

// Brute-force RMSSD by the documented definition: one pass per 30-second
// window end, successive differences of adjacent beats inside the window.
inline void oracle_rmssd_minutes(const std::vector<BbiEvent>& bbi, std::int64_t minutes,
                                 std::vector<double>& value, std::vector<std::uint8_t>& valid) {
    value.assign(static_cast<std::size_t>(minutes), 0.0);
    valid.assign(static_cast<std::size_t>(minutes), 0);
    const std::int64_t W = 15 * kMsPerMinute;
    std::vector<std::int64_t> times;
    times.reserve(bbi.size());
    for (const auto& e : bbi) times.push_back(e.t_ms);

    auto gap_over = [&](std::size_t i, std::int64_t lo, std::int64_t end) {
        // pair (i-1, i) forms a >30 min recording gap overlapping (lo, end]?
        if (i == 0 || i >= bbi.size()) return false;
        return times[i] - times[i - 1] > 30 * kMsPerMinute && times[i - 1] < end && times[i] > lo;
    };

    auto window_rmssd = [&](std::int64_t end_ms, double& out) -> bool {
        std::int64_t lo = end_ms - W;
        std::size_t i0 = static_cast<std::size_t>(
            std::upper_bound(times.begin(), times.end(), lo) - times.begin());
        std::size_t i1 = static_cast<std::size_t>(
            std::upper_bound(times.begin(), times.end(), end_ms) - times.begin());
        // a >30 min gap can only straddle the window edges
        if (gap_over(i0, lo, end_ms) || (i1 < times.size() && gap_over(i1, lo, end_ms)))
            return false;
        double ss = 0.0;
        long n = 0;
        for (std::size_t i = std::max<std::size_t>(i0, 1); i < i1; ++i) {
            if (times[i - 1] <= lo) continue;
            std::int64_t dt = times[i] - times[i - 1];
            if (dt <= 0 || dt > 5000) continue;
            double d = bbi[i].interval_ms - bbi[i - 1].interval_ms;
            ss += d * d;
            ++n;
        }
        if (n < 20) return false;
        out = std::sqrt(ss / static_cast<double>(n));
        return true;
    };

    for (std::int64_t m = 0; m < minutes; ++m) {
        double acc = 0.0;
        int nv = 0;
        for (std::int64_t end : {m * kMsPerMinute + 30000, (m + 1) * kMsPerMinute}) {
            double v = 0.0;
            if (window_rmssd(end, v)) {
                acc += v;
                ++nv;
            }
        }
        if (nv > 0) {
            value[static_cast<std::size_t>(m)] = acc / static_cast<double>(nv);
            valid[static_cast<std::size_t>(m)] = 1;
        }
    }
}

inline std::optional<double> oracle_median30(const std::vector<double>& value,
                                             const std::vector<std::uint8_t>& valid,
                                             std::int64_t t0) {
    std::vector<double> window;
    for (std::int64_t m = t0 - 30; m < t0; ++m) {
        if (m < 0 || m >= static_cast<std::int64_t>(value.size())) continue;
        if (!valid[static_cast<std::size_t>(m)]) continue;
        window.push_back(value[static_cast<std::size_t>(m)]);
    }
    if (window.size() < 24) return std::nullopt;
    std::sort(window.begin(), window.end());
    std::size_t n = window.size();
    if (n % 2 == 1) return window[n / 2];
    return 0.5 * (window[n / 2 - 1] + window[n / 2]);
}

}  // namespace synth_detail

inline SynthCohort generate_cohort(const SynthSpec& spec, const EpsilonBands& eps = {}) {
    spec.validate();
    SynthCohort cohort;
    Rng root(spec.seed ^ 0x73796e7468ull);
    const std::int64_t total_minutes = static_cast<std::int64_t>(spec.days) * kMinutesPerDay;
    const std::int64_t spacing_ms = 60000 / spec.beats_per_minute;

    for (int u = 0; u < spec.users; ++u) {
        Rng rng = root.fork(static_cast<std::uint64_t>(u) + 1);
        std::string user_id = "user" + std::string(1, static_cast<char>('A' + (u % 26))) +
                              (u >= 26 ? std::to_string(u / 26) : "");
        double phase = rng.uniform(0.0, 2.0 * M_PI);

        // intervention schedule: fixed daily slots with jitter, disjoint by
        // construction so end times are unique per user
        std::vector<TagRecord> tags;
        const int slots = std::max(1, spec.interventions_per_day);
        const int slot_width = 720 / slots;  // within 08:00-20:00
        for (int d = 0; d < spec.days; ++d) {
            for (int s = 0; s < slots; ++s) {
                Category cat = static_cast<Category>(rng.below(kCategoryCount));
                int jitter = static_cast<int>(rng.below(40));
                int duration = 20 + static_cast<int>(rng.below(31));
                TagRecord tag;
                tag.user_id = user_id;
                tag.category = cat;
                tag.name = std::string(category_name(cat)) + " #" + std::to_string(d * slots + s);
                tag.t0 = static_cast<std::int64_t>(d) * kMinutesPerDay + 480 + s * slot_width + jitter;
                tag.t1 = tag.t0 + duration;
                const auto& tpl = spec.effects[static_cast<std::size_t>(cat)];
                tag.expected_effect = !tpl ? ExpectedEffect::Neutral
                                     : (tpl->sign > 0 ? ExpectedEffect::Positive
                                                      : ExpectedEffect::Negative);
                tags.push_back(tag);
            }
        }
        std::stable_sort(tags.begin(), tags.end(),
                         [](const TagRecord& a, const TagRecord& b) { return a.t1 < b.t1; });

        // per-minute effect multipliers per metric
        std::array<std::vector<double>, kMetricCount> effect;
        for (auto& e : effect) e.assign(static_cast<std::size_t>(total_minutes), 0.0);
        for (const auto& tag : tags) {
            const auto& tpl = spec.effects[static_cast<std::size_t>(tag.category)];
            if (!tpl) continue;
            int m = static_cast<int>(tpl->target);
            for (std::int64_t t = tag.t1; t < total_minutes; ++t) {
                double r = synth_detail::effect_response(static_cast<double>(t - tag.t1), *tpl);
                if (r < 1e-4 && t > tag.t1 + tpl->onset_min) break;
                effect[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)] +=
                    tpl->sign * tpl->peak_pct * r;
            }
        }

        // injected recording gaps
        std::vector<std::pair<std::int64_t, std::int64_t>> gaps;
        int n_gaps = static_cast<int>(std::floor(spec.gap_rate_per_day * spec.days));
        for (int g = 0; g < n_gaps; ++g) {
            std::int64_t len = 15 + static_cast<std::int64_t>(rng.below(106));
            std::int64_t start = static_cast<std::int64_t>(rng.below(
                static_cast<std::uint64_t>(std::max<std::int64_t>(1, total_minutes - len))));
            gaps.emplace_back(start, start + len);
        }
        auto in_gap = [&](std::int64_t minute) {
            for (const auto& g : gaps) {
                if (minute >= g.first && minute < g.second) return true;
            }
            return false;
        };

        StreamBundle b;
        b.user_id = user_id;
        double noise_b = 0.0, noise_a = 0.0, noise_h = 0.0;
        const double rho = 0.95;
        const double innov = spec.noise_scale * std::sqrt(1.0 - rho * rho);
        for (std::int64_t t = 0; t < total_minutes; ++t) {
            noise_b = rho * noise_b + innov * rng.normal();
            noise_a = rho * noise_a + innov * rng.normal();
            noise_h = rho * noise_h + innov * rng.normal();
            if (in_gap(t)) continue;
            double tod = static_cast<double>(t % kMinutesPerDay);
            double circ = std::sin(2.0 * M_PI * tod / 1440.0 + phase);
            double level = (spec.bbi_mean_ms + spec.bbi_circadian_amp_ms * circ) *
                           (1.0 + effect[static_cast<int>(Metric::Bbi)][static_cast<std::size_t>(t)] / 100.0) *
                           (1.0 + noise_b);
            double rsa = spec.rsa_amp_ms *
                         (1.0 + effect[static_cast<int>(Metric::Rmssd)][static_cast<std::size_t>(t)] / 100.0) *
                         (1.0 + noise_a);
            for (int j = 1; j <= spec.beats_per_minute; ++j) {
                double osc = std::cos(2.0 * M_PI * (static_cast<double>(j) * spacing_ms / 1000.0) /
                                      spec.rsa_period_s);
                b.bbi.push_back({t * kMsPerMinute + j * spacing_ms, level + rsa * osc});
            }
            double hr = (60000.0 / level) *
                        (1.0 + effect[static_cast<int>(Metric::Hr)][static_cast<std::size_t>(t)] / 100.0) *
                        (1.0 + noise_h);
            b.hr.push_back({t, hr});

            bool cardio_now = false;
            for (const auto& tag : tags) {
                if (tag.category == Category::PhysicalActivityCardio && t >= tag.t0 && t < tag.t1)
                    cardio_now = true;
            }
            b.steps.push_back({t, cardio_now ? 100.0 + std::floor(40.0 * rng.uniform()) : 0.0});
            if (t % 3 == 0) {
                b.respiration.push_back({t, 14.0 + 1.5 * circ + 0.3 * rng.normal()});
                double stress = 35.0 + 25.0 * std::sin(2.0 * M_PI * tod / 1440.0 + phase + 1.0) +
                                5.0 * rng.normal();
                b.stress.push_back({t, std::min(100.0, std::max(0.0, stress))});
            }
        }
        for (int d = 0; d < spec.days; ++d) {
            double score = 70.0 + 10.0 * std::sin(2.0 * M_PI * d / 7.0 + phase) + 3.0 * rng.normal();
            b.sleep[d] = std::min(100.0, std::max(0.0, score));
        }

        // --- ground truth from the emitted data, by definition ---
        std::array<std::vector<double>, kMetricCount> mval;
        std::array<std::vector<std::uint8_t>, kMetricCount> mok;
        synth_detail::oracle_rmssd_minutes(b.bbi, total_minutes,
                                           mval[static_cast<int>(Metric::Rmssd)],
                                           mok[static_cast<int>(Metric::Rmssd)]);
        synth_detail::oracle_bbi_minutes(b.bbi, total_minutes,
                                         mval[static_cast<int>(Metric::Bbi)],
                                         mok[static_cast<int>(Metric::Bbi)]);
        {
            auto& hv = mval[static_cast<int>(Metric::Hr)];
            auto& ho = mok[static_cast<int>(Metric::Hr)];
            hv.assign(static_cast<std::size_t>(total_minutes), 0.0);
            ho.assign(static_cast<std::size_t>(total_minutes), 0);
            for (const auto& s : b.hr) {
                hv[static_cast<std::size_t>(s.minute)] = s.value;
                ho[static_cast<std::size_t>(s.minute)] = 1;
            }
            for (std::int64_t t = 0; t < total_minutes; ++t) {
                if (ho[static_cast<std::size_t>(t)] &&
                    (hv[static_cast<std::size_t>(t)] < 30.0 || hv[static_cast<std::size_t>(t)] > 220.0)) {
                    ho[static_cast<std::size_t>(t)] = 0;
                }
            }
        }
        {
            auto& rv = mval[static_cast<int>(Metric::Rmssd)];
            for (auto& v : rv) v = std::min(std::max(v, 1.0), 300.0);
        }

        for (std::size_t ti = 0; ti < tags.size(); ++ti) {
            const TagRecord& tag = tags[ti];
            for (int m = 0; m < kMetricCount; ++m) {
                auto base = synth_detail::oracle_median30(mval[static_cast<std::size_t>(m)],
                                                          mok[static_cast<std::size_t>(m)], tag.t0);
                double eband = eps.of(static_cast<Metric>(m));
                for (int k = 0; k < 120; ++k) {
                    GroundTruthRow row;
                    row.user_id = user_id;
                    row.tag_index = ti;
                    row.metric = static_cast<Metric>(m);
                    row.offset = k;
                    std::int64_t t = tag.t1 + k;
                    if (base && t < total_minutes && mok[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)]) {
                        row.delta_pct = synth_detail::oracle_percent_change(
                            mval[static_cast<std::size_t>(m)][static_cast<std::size_t>(t)], *base);
                        row.sign = synth_detail::oracle_sign(row.delta_pct, eband);
                        row.valid = true;
                    }
                    cohort.ground_truth.push_back(std::move(row));
                }
            }
        }

        cohort.bundles.push_back(std::move(b));
        cohort.tags.push_back(std::move(tags));
    }
    return cohort;
}

// Writes the cohort in the exact per-user file layout ingest consumes, plus
// ground_truth.csv at the root.
inline void write_cohort_files(const SynthCohort& cohort, const std::filesystem::path& root,
                               int utc_offset_minutes) {
    for (std::size_t u = 0; u < cohort.bundles.size(); ++u) {
        const StreamBundle& b = cohort.bundles[u];
        std::filesystem::path dir = root / b.user_id;
        std::filesystem::create_directories(dir);

        std::string bbi = "timestamp,interval_ms\n";
        for (const auto& e : b.bbi) {
            bbi += std::to_string(e.t_ms - static_cast<std::int64_t>(utc_offset_minutes) * kMsPerMinute);
            bbi += ',';
            bbi += fmt_double(e.interval_ms);
            bbi += '\n';
        }
        write_text_file(dir / "bbi.csv", bbi);

        auto minute_stream = [&](const std::vector<MinuteSample>& v) {
            std::string out;
            for (const auto& s : v) {
                out += format_iso_minute(s.minute);
                out += ',';
                out += fmt_double(s.value);
                out += '\n';
            }
            return out;
        };
        write_text_file(dir / "hr.csv", "timestamp,bpm\n" + minute_stream(b.hr));
        write_text_file(dir / "steps.csv", "timestamp,count\n" + minute_stream(b.steps));
        write_text_file(dir / "respiration.csv", "timestamp,brpm\n" + minute_stream(b.respiration));
        write_text_file(dir / "stress.csv", "timestamp,score\n" + minute_stream(b.stress));

        std::string sleep = "timestamp,score\n";
        for (const auto& [day, score] : b.sleep) {
            sleep += format_iso_date(day);
            sleep += ',';
            sleep += fmt_double(score);
            sleep += '\n';
        }
        write_text_file(dir / "sleep.csv", sleep);

        std::string tags = "name,category,start,end,expected_effect\n";
        for (const auto& t : cohort.tags[u]) {
            tags += csv_escape(t.name);
            tags += ',';
            tags += csv_escape(category_name(t.category));
            tags += ',';
            tags += format_iso_minute(t.t0);
            tags += ',';
            tags += format_iso_minute(t.t1);
            tags += ',';
            tags += expected_effect_name(t.expected_effect);
            tags += '\n';
        }
        write_text_file(dir / "tags.csv", tags);
    }

    std::string gt = "user_id,tag_index,metric,offset,delta_pct,sign,valid\n";
    for (const auto& r : cohort.ground_truth) {
        gt += csv_escape(r.user_id);
        gt += ',';
        gt += std::to_string(r.tag_index);
        gt += ',';
        gt += metric_name(r.metric);
        gt += ',';
        gt += std::to_string(r.offset);
        gt += ',';
        if (r.valid) gt += fmt_double(r.delta_pct);
        gt += ',';
        gt += std::to_string(r.sign);
        gt += ',';
        gt += r.valid ? '1' : '0';
        gt += '\n';
    }
    write_text_file(root / "ground_truth.csv", gt);
}

}  // namespace vitalcast
