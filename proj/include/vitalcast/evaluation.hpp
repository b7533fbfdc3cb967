#pragma once

// Decision-aware windowed metrics. Eligible accuracy scores every minute whose
// true sign is non-neutral (abstention counts as wrong); called-only accuracy
// restricts the denominator to minutes the model also called. Naive always-up
// and always-down baselines and called-normalized confusion matrices round out
// the report. Group metrics pool minutes before dividing.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vitalcast/calibration.hpp"
#include "vitalcast/labeling.hpp"

namespace vitalcast {

// Pooled per-minute tallies for one (group, metric, window) cell.
struct SignCounts {
    long eligible = 0;
    long eligible_correct = 0;
    long called = 0;
    long called_correct = 0;
    long tp = 0, fn = 0, fp = 0, tn = 0;  // over called minutes
    long up_correct = 0;                  // always-up baseline numerator
    long valid_minutes = 0;

    void add(int s_a, int s_p, bool minute_valid) {
        if (!minute_valid) return;
        ++valid_minutes;
        if (s_a == 0) return;
        ++eligible;
        if (s_a > 0) ++up_correct;
        if (s_p == s_a) ++eligible_correct;
        if (s_p == 0) return;
        ++called;
        if (s_p == s_a) ++called_correct;
        if (s_a > 0 && s_p > 0) ++tp;
        if (s_a > 0 && s_p < 0) ++fn;
        if (s_a < 0 && s_p > 0) ++fp;
        if (s_a < 0 && s_p < 0) ++tn;
    }

    void merge(const SignCounts& o) {
        eligible += o.eligible;
        eligible_correct += o.eligible_correct;
        called += o.called;
        called_correct += o.called_correct;
        tp += o.tp;
        fn += o.fn;
        fp += o.fp;
        tn += o.tn;
        up_correct += o.up_correct;
        valid_minutes += o.valid_minutes;
    }

    std::optional<double> eligible_accuracy() const {
        if (eligible == 0) return std::nullopt;
        return static_cast<double>(eligible_correct) / static_cast<double>(eligible);
    }
    std::optional<double> called_only_accuracy() const {
        if (called == 0) return std::nullopt;
        return static_cast<double>(called_correct) / static_cast<double>(called);
    }
    // Fraction of eligible minutes on which the model makes a call.
    std::optional<double> call_rate() const {
        if (eligible == 0) return std::nullopt;
        return static_cast<double>(called) / static_cast<double>(eligible);
    }
    std::optional<double> always_up() const {
        if (eligible == 0) return std::nullopt;
        return static_cast<double>(up_correct) / static_cast<double>(eligible);
    }
    std::optional<double> always_down() const {
        if (eligible == 0) return std::nullopt;
        return static_cast<double>(eligible - up_correct) / static_cast<double>(eligible);
    }
};

// Free functions over aligned minute series, the unit-test surface for the
// metric definitions. `valid` marks minutes that enter evaluation at all.
namespace metrics {

inline SignCounts tally(const std::vector<int>& s_a, const std::vector<int>& s_p,
                        const std::vector<std::uint8_t>& valid, const Window& w) {
    SignCounts c;
    for (int k = w.lo; k < w.hi && k < static_cast<int>(s_a.size()); ++k) {
        c.add(s_a[static_cast<std::size_t>(k)], s_p[static_cast<std::size_t>(k)],
              valid[static_cast<std::size_t>(k)] != 0);
    }
    return c;
}

inline std::optional<double> eligible_accuracy(const std::vector<int>& s_a,
                                               const std::vector<int>& s_p,
                                               const std::vector<std::uint8_t>& valid,
                                               const Window& w) {
    return tally(s_a, s_p, valid, w).eligible_accuracy();
}

inline std::optional<double> called_only_accuracy(const std::vector<int>& s_a,
                                                  const std::vector<int>& s_p,
                                                  const std::vector<std::uint8_t>& valid,
                                                  const Window& w) {
    return tally(s_a, s_p, valid, w).called_only_accuracy();
}

inline std::optional<double> baseline_accuracy(const std::vector<int>& s_a,
                                               const std::vector<std::uint8_t>& valid,
                                               const Window& w, int direction) {
    std::vector<int> constant(s_a.size(), direction);
    SignCounts c = tally(s_a, constant, valid, w);
    return c.eligible_accuracy();
}

struct ConfusionMatrix {
    long called = 0;
    long tp = 0, fn = 0, fp = 0, tn = 0;
    // called-normalized percentages
    double tp_pct = 0.0, fn_pct = 0.0, fp_pct = 0.0, tn_pct = 0.0;
    bool empty = true;
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& s_a, const std::vector<int>& s_p,
                                        const std::vector<std::uint8_t>& valid, const Window& w) {
    SignCounts c = tally(s_a, s_p, valid, w);
    ConfusionMatrix m;
    m.called = c.called;
    m.tp = c.tp;
    m.fn = c.fn;
    m.fp = c.fp;
    m.tn = c.tn;
    if (c.called > 0) {
        m.empty = false;
        double n = static_cast<double>(c.called);
        m.tp_pct = 100.0 * static_cast<double>(c.tp) / n;
        m.fn_pct = 100.0 * static_cast<double>(c.fn) / n;
        m.fp_pct = 100.0 * static_cast<double>(c.fp) / n;
        m.tn_pct = 100.0 * static_cast<double>(c.tn) / n;
    }
    return m;
}

}  // namespace metrics

// One evaluated intervention: actual signs vs calibrated predicted signs.
// A minute enters evaluation when its target is valid and the prediction
// series covers it (offsets before the onset shift do not).
struct EvaluatedExample {
    const AnchoredExample* example = nullptr;
    SignSeries signs;

    int s_a(int metric, int k) const { return example->sign[metric][static_cast<std::size_t>(k)]; }
    int s_p(int metric, int k) const {
        return signs.sign[static_cast<std::size_t>(metric)][static_cast<std::size_t>(k)];
    }
    bool minute_valid(int metric, int k) const {
        return example->tvalid[metric][static_cast<std::size_t>(k)] != 0 &&
               signs.valid[static_cast<std::size_t>(metric)][static_cast<std::size_t>(k)] != 0;
    }
};

enum class Grouping { All, User, Category };

inline const char* grouping_name(Grouping g) {
    static const char* names[3] = {"all", "user", "category"};
    return names[static_cast<int>(g)];
}

struct WindowReport {
    std::string group;
    Metric metric = Metric::Rmssd;
    std::string window_label;
    int window_order = 0;  // 0..3 per-window, 5 overall (4 is the divider slot)
    SignCounts counts;
};

// Pools minutes within each group and emits one report per
// (group, metric, window) plus the overall 0-120 column.
inline std::vector<WindowReport> aggregate_report(const std::vector<EvaluatedExample>& evaluated,
                                                  Grouping grouping,
                                                  const WindowSet& ws = {}) {
    auto group_key = [&](const EvaluatedExample& e) -> std::string {
        switch (grouping) {
            case Grouping::All: return "all";
            case Grouping::User: return e.example->user_id;
            case Grouping::Category: return category_name(e.example->category);
        }
        return "all";
    };

    std::map<std::string, std::array<std::array<SignCounts, 5>, kMetricCount>> pools;
    for (const auto& ee : evaluated) {
        auto& pool = pools[group_key(ee)];
        for (int m = 0; m < kMetricCount; ++m) {
            for (int k = 0; k < ee.example->horizon; ++k) {
                bool v = ee.minute_valid(m, k);
                if (!v) continue;
                int w = ws.window_of(k);
                if (w < 0) continue;
                pool[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)].add(
                    ee.s_a(m, k), ee.s_p(m, k), true);
                pool[static_cast<std::size_t>(m)][4].add(ee.s_a(m, k), ee.s_p(m, k), true);
            }
        }
    }

    std::vector<WindowReport> out;
    for (const auto& [group, pool] : pools) {
        for (int m = 0; m < kMetricCount; ++m) {
            for (int w = 0; w < 4; ++w) {
                WindowReport r;
                r.group = group;
                r.metric = static_cast<Metric>(m);
                r.window_label = ws.windows[static_cast<std::size_t>(w)].label();
                r.window_order = w;
                r.counts = pool[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)];
                out.push_back(std::move(r));
            }
            WindowReport overall;
            overall.group = group;
            overall.metric = static_cast<Metric>(m);
            overall.window_label = ws.overall.label();
            overall.window_order = 5;
            overall.counts = pool[static_cast<std::size_t>(m)][4];
            out.push_back(std::move(overall));
        }
    }
    return out;
}

// --- Emission ----------------------------------------------------------------

namespace detail {

inline std::string pct1(double pct) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", round1(pct));
    return buf;
}

inline std::string pct_or_empty(const std::optional<double>& v) {
    if (!v) return "";  // undefined metrics render as absent, never as zero
    return pct1(*v * 100.0);
}

}  // namespace detail

inline nlohmann::json report_to_json(const std::vector<WindowReport>& reports,
                                     Grouping grouping) {
    nlohmann::json j;
    j["grouping"] = grouping_name(grouping);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json e;
        e["group"] = r.group;
        e["metric"] = metric_name(r.metric);
        e["window"] = r.window_label;
        e["window_order"] = r.window_order;
        auto put = [&](const char* key, std::optional<double> v) {
            if (v) e[key] = *v;
            else e[key] = nullptr;
        };
        put("eligible_accuracy", r.counts.eligible_accuracy());
        put("called_only_accuracy", r.counts.called_only_accuracy());
        put("call_rate", r.counts.call_rate());
        put("always_up", r.counts.always_up());
        put("always_down", r.counts.always_down());
        e["eligible_minutes"] = r.counts.eligible;
        e["called_minutes"] = r.counts.called;
        e["valid_minutes"] = r.counts.valid_minutes;
        e["confusion"] = {{"tp", r.counts.tp}, {"fn", r.counts.fn}, {"fp", r.counts.fp},
                          {"tn", r.counts.tn}};
        arr.push_back(std::move(e));
    }
    j["reports"] = arr;
    return j;
}

// Bar-chart data in the figure layout: four windows, a divider row, then the
// overall column. Percentages rounded to one decimal, half away from zero.
inline std::string bars_to_csv(const std::vector<WindowReport>& reports, Grouping grouping) {
    std::string out =
        "grouping,group,metric,window_order,window,eligible_accuracy_pct,"
        "called_only_accuracy_pct,call_rate_pct,always_up_pct,always_down_pct\n";
    // stable order: group, metric, window_order
    std::vector<const WindowReport*> sorted;
    for (const auto& r : reports) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(), [](const WindowReport* a, const WindowReport* b) {
        if (a->group != b->group) return a->group < b->group;
        if (a->metric != b->metric) return static_cast<int>(a->metric) < static_cast<int>(b->metric);
        return a->window_order < b->window_order;
    });
    std::string prev_key;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const WindowReport& r = *sorted[i];
        std::string key = r.group + "\x1f" + metric_name(r.metric);
        if (r.window_order == 5 && key == prev_key) {
            // divider row between the per-window bars and the overall column
            out += std::string(grouping_name(grouping)) + "," + csv_escape(r.group) + "," +
                   metric_name(r.metric) + ",4,divider,,,,,\n";
        }
        out += std::string(grouping_name(grouping)) + "," + csv_escape(r.group) + "," +
               metric_name(r.metric) + "," + std::to_string(r.window_order) + "," +
               r.window_label + "," + detail::pct_or_empty(r.counts.eligible_accuracy()) + "," +
               detail::pct_or_empty(r.counts.called_only_accuracy()) + "," +
               detail::pct_or_empty(r.counts.call_rate()) + "," +
               detail::pct_or_empty(r.counts.always_up()) + "," +
               detail::pct_or_empty(r.counts.always_down()) + "\n";
        prev_key = key;
    }
    return out;
}

inline std::string confusion_to_csv(const std::vector<WindowReport>& reports, Grouping grouping) {
    std::string out =
        "grouping,group,metric,window,called,tp,fn,fp,tn,tp_pct,fn_pct,fp_pct,tn_pct\n";
    for (const auto& r : reports) {
        const SignCounts& c = r.counts;
        out += std::string(grouping_name(grouping)) + "," + csv_escape(r.group) + "," +
               metric_name(r.metric) + "," + r.window_label + "," + std::to_string(c.called);
        if (c.called > 0) {
            double n = static_cast<double>(c.called);
            out += "," + std::to_string(c.tp) + "," + std::to_string(c.fn) + "," +
                   std::to_string(c.fp) + "," + std::to_string(c.tn) + "," +
                   detail::pct1(100.0 * c.tp / n) + "," + detail::pct1(100.0 * c.fn / n) + "," +
                   detail::pct1(100.0 * c.fp / n) + "," + detail::pct1(100.0 * c.tn / n);
        } else {
            out += ",,,,,,,,";  // empty matrix marker
        }
        out += "\n";
    }
    return out;
}

// Minimal grouped bar chart, one panel per metric in RMSSD/HR/BBI order with
// the dashed divider before the overall bar.
inline std::string bars_to_svg(const std::vector<WindowReport>& reports,
                               const std::string& group) {
    const int panel_w = 260, panel_h = 180, pad = 40;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(3 * panel_w + 2 * pad) + "\" height=\"" +
                      std::to_string(panel_h + 60) + "\">\n";
    const Metric order[3] = {Metric::Rmssd, Metric::Bbi, Metric::Hr};
    for (int p = 0; p < 3; ++p) {
        int x0 = p * (panel_w + pad / 2) + pad;
        svg += "<text x=\"" + std::to_string(x0) + "\" y=\"16\" font-size=\"13\">" +
               metric_name(order[p]) + " (" + group + ")</text>\n";
        std::vector<const WindowReport*> cols;
        for (const auto& r : reports) {
            if (r.group == group && r.metric == order[p]) cols.push_back(&r);
        }
        std::sort(cols.begin(), cols.end(), [](const WindowReport* a, const WindowReport* b) {
            return a->window_order < b->window_order;
        });
        int slot = 0;
        for (const auto* r : cols) {
            int x = x0 + slot * 44 + (r->window_order == 5 ? 14 : 0);
            auto acc = r->counts.called_only_accuracy();
            if (acc) {
                int h = static_cast<int>(*acc * (panel_h - 40));
                svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" +
                       std::to_string(panel_h + 20 - h) + "\" width=\"32\" height=\"" +
                       std::to_string(h) + "\" fill=\"#4878a8\" data-window=\"" +
                       r->window_label + "\" data-called-only=\"" + fmt_double(*acc) + "\"/>\n";
            }
            svg += "<text x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(panel_h + 34) +
                   "\" font-size=\"8\">" + r->window_label + "</text>\n";
            ++slot;
            if (r->window_order == 3) {
                int dx = x0 + slot * 44 + 4;
                svg += "<line x1=\"" + std::to_string(dx) + "\" y1=\"20\" x2=\"" +
                       std::to_string(dx) + "\" y2=\"" + std::to_string(panel_h + 20) +
                       "\" stroke=\"red\" stroke-dasharray=\"4,3\"/>\n";
            }
        }
    }
    svg += "</svg>\n";
    return svg;
}

// Per-example minute-level sign rows, the hand-off artifact for pattern
// mining.
inline std::string signs_to_csv(const std::vector<EvaluatedExample>& evaluated) {
    std::string out =
        "example_id,user_id,category,end_minute,metric,offset,s_a,s_p,cal_median,valid,"
        "target_valid\n";
    for (const auto& ee : evaluated) {
        const AnchoredExample& ex = *ee.example;
        for (int m = 0; m < kMetricCount; ++m) {
            for (int k = 0; k < ex.horizon; ++k) {
                out += csv_escape(ex.id()) + "," + csv_escape(ex.user_id) + "," +
                       csv_escape(category_name(ex.category)) + "," + std::to_string(ex.t1) + "," +
                       metric_name(static_cast<Metric>(m)) + "," + std::to_string(k) + "," +
                       std::to_string(ee.s_a(m, k)) + "," + std::to_string(ee.s_p(m, k)) + "," +
                       fmt_double(ee.signs.cal_median[static_cast<std::size_t>(m)]
                                               [static_cast<std::size_t>(k)]) +
                       "," + (ee.minute_valid(m, k) ? "1" : "0") + "," +
                       (ex.tvalid[m][static_cast<std::size_t>(k)] ? "1" : "0") + "\n";
            }
        }
    }
    return out;
}

}  // namespace vitalcast
