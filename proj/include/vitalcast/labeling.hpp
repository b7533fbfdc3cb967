#pragma once

// Intervention-end-anchored examples: pre-intervention baselines, per-minute
// percent-change targets with neutrality-band signs, plausibility screening,
// window coverage checks, and the anchored context slice.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vitalcast/features.hpp"
#include "vitalcast/streams.hpp"

namespace vitalcast {

enum class Metric : int { Rmssd = 0, Hr = 1, Bbi = 2 };
inline constexpr int kMetricCount = 3;

inline const char* metric_name(Metric m) {
    static const char* names[kMetricCount] = {"RMSSD", "HR", "BBI"};
    return names[static_cast<int>(m)];
}

inline std::optional<Metric> metric_from_name(std::string_view s) {
    for (int i = 0; i < kMetricCount; ++i) {
        if (s == metric_name(static_cast<Metric>(i))) return static_cast<Metric>(i);
    }
    return std::nullopt;
}

// Metric-specific neutrality half-widths, percentage points.
struct EpsilonBands {
    double rmssd = 2.5;
    double hr = 1.0;
    double bbi = 1.0;

    double of(Metric m) const {
        switch (m) {
            case Metric::Rmssd: return rmssd;
            case Metric::Hr: return hr;
            case Metric::Bbi: return bbi;
        }
        return 0.0;
    }
};

// Post-end evaluation windows, minute offsets [lo, hi) from the anchor.
struct Window {
    int lo = 0;
    int hi = 0;
    std::string label() const { return std::to_string(lo) + "-" + std::to_string(hi); }
    int length() const { return hi - lo; }
};

struct WindowSet {
    std::array<Window, 4> windows = {Window{0, 15}, Window{15, 30}, Window{30, 60},
                                     Window{60, 120}};
    Window overall{0, 120};

    int horizon() const { return overall.hi; }
    int window_of(int offset) const {
        for (int w = 0; w < 4; ++w) {
            if (offset >= windows[w].lo && offset < windows[w].hi) return w;
        }
        return -1;
    }
};

// A metric series on the minute grid after plausibility screening.
struct MetricSeries {
    std::int64_t start_minute = 0;
    std::vector<double> value;
    std::vector<std::uint8_t> valid;

    std::optional<double> at(std::int64_t minute) const {
        std::int64_t i = minute - start_minute;
        if (i < 0 || i >= static_cast<std::int64_t>(value.size()) || !valid[i])
            return std::nullopt;
        return value[i];
    }
};

struct PlausibilityRules {
    double hr_min = 30.0, hr_max = 220.0;       // outside: minute invalid
    double rmssd_min = 1.0, rmssd_max = 300.0;  // outside: clipped
};

// Per-minute BBI is the chronological mean of beat intervals stamped in the
// minute; minutes without beats are invalid.
inline MetricSeries bbi_minute_series(const std::vector<BbiEvent>& bbi, std::int64_t start_minute,
                                      std::size_t len) {
    MetricSeries s;
    s.start_minute = start_minute;
    s.value.assign(len, 0.0);
    s.valid.assign(len, 0);
    std::vector<double> sum(len, 0.0);
    std::vector<std::int64_t> cnt(len, 0);
    for (const auto& e : bbi) {
        std::int64_t m = floor_div(e.t_ms, kMsPerMinute) - start_minute;
        if (m < 0 || m >= static_cast<std::int64_t>(len)) continue;
        sum[m] += e.interval_ms;
        ++cnt[m];
    }
    for (std::size_t i = 0; i < len; ++i) {
        if (cnt[i] > 0) {
            s.value[i] = sum[i] / static_cast<double>(cnt[i]);
            s.valid[i] = 1;
        }
    }
    return s;
}

// Builds the three screened metric series used for baselines and targets.
inline std::array<MetricSeries, kMetricCount> build_metric_series(
    const FeatureFrame& frame, const std::vector<BbiEvent>& bbi,
    const PlausibilityRules& rules = {}) {
    std::array<MetricSeries, kMetricCount> out;
    std::size_t n = frame.rows;

    MetricSeries& rm = out[static_cast<int>(Metric::Rmssd)];
    rm.start_minute = frame.start_minute;
    rm.value.assign(n, 0.0);
    rm.valid.assign(n, 0);
    int f_rmssd = 1;
    for (std::size_t i = 0; i < n; ++i) {
        if (!frame.valid[f_rmssd][i]) continue;
        double v = frame.col[f_rmssd][i];
        v = std::min(std::max(v, rules.rmssd_min), rules.rmssd_max);
        rm.value[i] = v;
        rm.valid[i] = 1;
    }

    MetricSeries& hr = out[static_cast<int>(Metric::Hr)];
    hr.start_minute = frame.start_minute;
    hr.value.assign(n, 0.0);
    hr.valid.assign(n, 0);
    int f_hr = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!frame.valid[f_hr][i]) continue;
        double v = frame.col[f_hr][i];
        if (v < rules.hr_min || v > rules.hr_max) continue;
        hr.value[i] = v;
        hr.valid[i] = 1;
    }

    out[static_cast<int>(Metric::Bbi)] = bbi_minute_series(bbi, frame.start_minute, n);
    return out;
}

struct BaselineRule {
    int window_minutes = 30;
    int min_valid = 24;
};

// Median of valid values in [t0 - window, t0); even counts take the mean of
// the middle two. Fewer than min_valid usable minutes excludes the example.
inline std::optional<double> compute_baseline(const MetricSeries& s, std::int64_t t0,
                                              const BaselineRule& rule = {}) {
    std::vector<double> vals;
    vals.reserve(rule.window_minutes);
    for (int k = rule.window_minutes; k >= 1; --k) {
        if (auto v = s.at(t0 - k)) vals.push_back(*v);
    }
    if (static_cast<int>(vals.size()) < rule.min_valid) return std::nullopt;
    std::sort(vals.begin(), vals.end());
    std::size_t n = vals.size();
    if (n % 2 == 1) return vals[n / 2];
    return 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

inline double percent_change(double x, double base) {
    return 100.0 * (x - base) / std::max(std::abs(base), 1e-6);
}

// Ground-truth sign with inclusive band edges.
inline int actual_sign(double delta_pct, double epsilon) {
    if (delta_pct >= epsilon) return 1;
    if (delta_pct <= -epsilon) return -1;
    return 0;
}

struct AnchoredExample {
    std::string user_id;
    std::size_t tag_index = 0;  // position in the user's sorted tag list
    std::string tag_name;
    Category category = Category::Other;
    std::int64_t t0 = 0;
    std::int64_t t1 = 0;  // anchor

    std::array<double, kMetricCount> baseline{};

    // Context: rows x features, minutes [t1 - W, t1).
    int context_len = 0;
    std::vector<std::array<double, kFeatureCount>> ctx;
    std::vector<std::array<std::uint8_t, kFeatureCount>> ctx_valid;

    // Targets: per metric, per offset k in [0, horizon).
    int horizon = 0;
    std::array<std::vector<double>, kMetricCount> delta;
    std::array<std::vector<std::uint8_t>, kMetricCount> tvalid;
    std::array<std::vector<std::int8_t>, kMetricCount> sign;

    std::string id() const { return user_id + "#" + std::to_string(tag_index); }
};

struct RejectionRecord {
    std::string user_id;
    std::size_t tag_index = 0;
    std::vector<std::string> reasons;
};

struct LabelingOptions {
    int context_minutes = 90;
    WindowSet windows;
    EpsilonBands epsilon;
    BaselineRule baseline;
    int max_window_gap = 10;  // longest tolerated invalid run inside a window
};

namespace detail {

// Coverage screen for one (metric, window): windows with no valid minutes are
// skipped (they surface as missing downstream); evaluated windows need >= 50%
// valid minutes and no invalid run longer than max_gap.
inline std::optional<std::string> check_window(const std::vector<std::uint8_t>& tv,
                                               const Window& w, int max_gap, Metric m) {
    int valid = 0, run = 0, worst = 0;
    for (int k = w.lo; k < w.hi; ++k) {
        if (tv[k]) {
            valid++;
            run = 0;
        } else {
            run++;
            worst = std::max(worst, run);
        }
    }
    if (valid == 0) return std::nullopt;  // not evaluated
    int need = (w.length() + 1) / 2;
    if (valid < need) {
        return "window_coverage:" + std::string(metric_name(m)) + ":" + w.label();
    }
    if (worst > max_gap) {
        return "window_gap:" + std::string(metric_name(m)) + ":" + w.label();
    }
    return std::nullopt;
}

}  // namespace detail

// Screens an assembled candidate. Reasons are machine-readable codes; an empty
// vector means accepted.
inline std::vector<std::string> inclusion_check(const AnchoredExample& ex,
                                                const std::array<bool, kMetricCount>& has_baseline,
                                                const LabelingOptions& opt) {
    std::vector<std::string> reasons;
    for (int m = 0; m < kMetricCount; ++m) {
        if (!has_baseline[m]) {
            reasons.push_back("baseline_insufficient:" +
                              std::string(metric_name(static_cast<Metric>(m))));
        }
    }
    bool any_target = false;
    for (int m = 0; m < kMetricCount; ++m) {
        for (int k = 0; k < ex.horizon; ++k) {
            if (ex.tvalid[m][k]) {
                any_target = true;
                break;
            }
        }
        for (const auto& w : opt.windows.windows) {
            if (auto r = detail::check_window(ex.tvalid[m], w, opt.max_window_gap,
                                              static_cast<Metric>(m))) {
                reasons.push_back(*r);
            }
        }
    }
    if (!any_target) reasons.push_back("no_post_data");
    return reasons;
}

struct LabelingResult {
    std::vector<AnchoredExample> examples;
    std::vector<RejectionRecord> rejections;
};

// One candidate per tag; candidates failing the baseline or coverage rules
// are dropped with logged reasons.
inline LabelingResult make_examples(const FeatureFrame& frame,
                                    const std::array<MetricSeries, kMetricCount>& series,
                                    const std::vector<TagRecord>& tags,
                                    const LabelingOptions& opt = {}) {
    LabelingResult out;
    const int H = opt.windows.horizon();
    const int W = opt.context_minutes;

    for (std::size_t ti = 0; ti < tags.size(); ++ti) {
        const TagRecord& tag = tags[ti];
        AnchoredExample ex;
        ex.user_id = tag.user_id;
        ex.tag_index = ti;
        ex.tag_name = tag.name;
        ex.category = tag.category;
        ex.t0 = tag.t0;
        ex.t1 = tag.t1;
        ex.context_len = W;
        ex.horizon = H;

        std::array<bool, kMetricCount> has_baseline{};
        for (int m = 0; m < kMetricCount; ++m) {
            auto base = compute_baseline(series[m], tag.t0, opt.baseline);
            has_baseline[m] = base.has_value();
            ex.baseline[m] = base.value_or(0.0);
            ex.delta[m].assign(H, 0.0);
            ex.tvalid[m].assign(H, 0);
            ex.sign[m].assign(H, 0);
            if (!base) continue;
            double eps = opt.epsilon.of(static_cast<Metric>(m));
            for (int k = 0; k < H; ++k) {
                auto x = series[m].at(tag.t1 + k);
                if (!x) continue;
                double d = percent_change(*x, *base);
                ex.delta[m][k] = d;
                ex.tvalid[m][k] = 1;
                ex.sign[m][k] = static_cast<std::int8_t>(actual_sign(d, eps));
            }
        }

        // Context slice [t1 - W, t1); minutes outside the frame stay invalid.
        ex.ctx.assign(W, {});
        ex.ctx_valid.assign(W, {});
        for (int r = 0; r < W; ++r) {
            std::int64_t minute = tag.t1 - W + r;
            std::int64_t i = minute - frame.start_minute;
            if (i < 0 || i >= static_cast<std::int64_t>(frame.rows)) continue;
            for (int f = 0; f < kFeatureCount; ++f) {
                ex.ctx[r][f] = frame.col[f][i];
                ex.ctx_valid[r][f] = frame.valid[f][i];
            }
        }

        auto reasons = inclusion_check(ex, has_baseline, opt);
        if (reasons.empty()) {
            out.examples.push_back(std::move(ex));
        } else {
            out.rejections.push_back({tag.user_id, ti, std::move(reasons)});
        }
    }
    return out;
}

// --- Persistence -------------------------------------------------------------

inline nlohmann::json example_index_json(const std::vector<AnchoredExample>& examples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& ex : examples) {
        nlohmann::json j;
        j["id"] = ex.id();
        j["user_id"] = ex.user_id;
        j["tag_index"] = ex.tag_index;
        j["name"] = ex.tag_name;
        j["category"] = category_name(ex.category);
        j["t0"] = ex.t0;
        j["t1"] = ex.t1;
        j["context_len"] = ex.context_len;
        j["horizon"] = ex.horizon;
        for (int m = 0; m < kMetricCount; ++m) {
            j["baseline"][metric_name(static_cast<Metric>(m))] = ex.baseline[m];
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::string targets_to_csv(const std::vector<AnchoredExample>& examples) {
    std::string out = "example_id,metric,offset,delta_pct,valid,sign\n";
    for (const auto& ex : examples) {
        for (int m = 0; m < kMetricCount; ++m) {
            for (int k = 0; k < ex.horizon; ++k) {
                out += csv_escape(ex.id());
                out += ',';
                out += metric_name(static_cast<Metric>(m));
                out += ',';
                out += std::to_string(k);
                out += ',';
                if (ex.tvalid[m][k]) out += fmt_double(ex.delta[m][k]);
                out += ',';
                out += ex.tvalid[m][k] ? '1' : '0';
                out += ',';
                out += std::to_string(static_cast<int>(ex.sign[m][k]));
                out += '\n';
            }
        }
    }
    return out;
}

inline std::string contexts_to_csv(const std::vector<AnchoredExample>& examples) {
    std::string out = "example_id,row";
    for (int f = 0; f < kFeatureCount; ++f) {
        out += ',';
        out += feature_names()[f];
    }
    for (int f = 0; f < kFeatureCount; ++f) {
        out += ',';
        out += feature_names()[f];
        out += "_valid";
    }
    out += '\n';
    for (const auto& ex : examples) {
        for (int r = 0; r < ex.context_len; ++r) {
            out += csv_escape(ex.id());
            out += ',';
            out += std::to_string(r);
            for (int f = 0; f < kFeatureCount; ++f) {
                out += ',';
                if (ex.ctx_valid[r][f]) out += fmt_double(ex.ctx[r][f]);
            }
            for (int f = 0; f < kFeatureCount; ++f) {
                out += ',';
                out += ex.ctx_valid[r][f] ? '1' : '0';
            }
            out += '\n';
        }
    }
    return out;
}

// Loads examples back from the index plus the two columnar files.
inline std::vector<AnchoredExample> load_examples(const nlohmann::json& index,
                                                  const std::filesystem::path& targets_csv,
                                                  const std::filesystem::path& contexts_csv) {
    std::vector<AnchoredExample> out;
    std::map<std::string, std::size_t> by_id;
    for (const auto& j : index) {
        AnchoredExample ex;
        ex.user_id = j.at("user_id").get<std::string>();
        ex.tag_index = j.at("tag_index").get<std::size_t>();
        ex.tag_name = j.at("name").get<std::string>();
        auto cat = category_from_name(j.at("category").get<std::string>());
        ex.category = cat.value_or(Category::Other);
        ex.t0 = j.at("t0").get<std::int64_t>();
        ex.t1 = j.at("t1").get<std::int64_t>();
        ex.context_len = j.at("context_len").get<int>();
        ex.horizon = j.at("horizon").get<int>();
        for (int m = 0; m < kMetricCount; ++m) {
            ex.baseline[m] = j.at("baseline").at(metric_name(static_cast<Metric>(m))).get<double>();
            ex.delta[m].assign(ex.horizon, 0.0);
            ex.tvalid[m].assign(ex.horizon, 0);
            ex.sign[m].assign(ex.horizon, 0);
        }
        ex.ctx.assign(ex.context_len, {});
        ex.ctx_valid.assign(ex.context_len, {});
        by_id[ex.id()] = out.size();
        out.push_back(std::move(ex));
    }

    CsvTable tg = read_csv(targets_csv);
    for (const auto& row : tg.rows) {
        auto it = by_id.find(row[0]);
        if (it == by_id.end()) continue;
        AnchoredExample& ex = out[it->second];
        int m = static_cast<int>(*metric_from_name(row[1]));
        int k = static_cast<int>(*parse_int(row[2]));
        if (row[4] == "1") {
            ex.tvalid[m][k] = 1;
            ex.delta[m][k] = *parse_double(row[3]);
        }
        ex.sign[m][k] = static_cast<std::int8_t>(*parse_int(row[5]));
    }

    CsvTable cx = read_csv(contexts_csv);
    for (const auto& row : cx.rows) {
        auto it = by_id.find(row[0]);
        if (it == by_id.end()) continue;
        AnchoredExample& ex = out[it->second];
        int r = static_cast<int>(*parse_int(row[1]));
        for (int f = 0; f < kFeatureCount; ++f) {
            if (row[2 + kFeatureCount + f] == "1") {
                ex.ctx_valid[r][f] = 1;
                ex.ctx[r][f] = *parse_double(row[2 + f]);
            }
        }
    }
    return out;
}

}  // namespace vitalcast
