#pragma once

// Train-only post-hoc calibration: per-(metric, window) isotonic maps fitted
// by pool-adjacent-violators, a global onset shift selected on train MAE, and
// per-metric sign thresholds chosen on train minutes with non-neutral truth.
// Application order is shift, then isotonic, then threshold.

#include <array>
#include <optional>
#include <vector>

#include "vitalcast/labeling.hpp"
#include "vitalcast/net.hpp"

namespace vitalcast {

// Monotone non-decreasing piecewise-linear map. Empty breakpoints mean
// identity (the under-fitted fallback).
struct IsotonicMap {
    std::vector<double> x;  // strictly increasing
    std::vector<double> y;  // non-decreasing

    bool is_identity() const { return x.empty(); }

    double eval(double v) const {
        if (x.empty()) return v;
        if (v <= x.front()) return y.front();
        if (v >= x.back()) return y.back();
        auto it = std::upper_bound(x.begin(), x.end(), v);
        std::size_t hi = static_cast<std::size_t>(it - x.begin());
        std::size_t lo = hi - 1;
        double t = (v - x[lo]) / (x[hi] - x[lo]);
        return y[lo] + t * (y[hi] - y[lo]);
    }
};

// Pool-adjacent-violators under squared error. Duplicate predictor values are
// pooled before the sweep; fewer than two pairs yield the identity map.
inline IsotonicMap fit_isotonic(std::vector<std::pair<double, double>> pairs,
                                bool* underfit = nullptr) {
    if (underfit) *underfit = false;
    IsotonicMap map;
    if (pairs.size() < 2) {
        if (underfit) *underfit = true;
        return map;
    }
    std::sort(pairs.begin(), pairs.end());

    // pool exact ties in x
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<double> ws;
    for (std::size_t i = 0; i < pairs.size();) {
        std::size_t j = i;
        double sum = 0.0;
        while (j < pairs.size() && pairs[j].first == pairs[i].first) {
            sum += pairs[j].second;
            ++j;
        }
        xs.push_back(pairs[i].first);
        ys.push_back(sum / static_cast<double>(j - i));
        ws.push_back(static_cast<double>(j - i));
        i = j;
    }

    struct Block {
        double value;
        double weight;
        std::size_t count;  // pooled x positions
    };
    std::vector<Block> stack;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Block b{ys[i], ws[i], 1};
        while (!stack.empty() && stack.back().value > b.value) {
            const Block& prev = stack.back();
            b.value = (prev.value * prev.weight + b.value * b.weight) / (prev.weight + b.weight);
            b.weight += prev.weight;
            b.count += prev.count;
            stack.pop_back();
        }
        stack.push_back(b);
    }
    map.x = xs;
    map.y.reserve(xs.size());
    for (const Block& b : stack) {
        for (std::size_t k = 0; k < b.count; ++k) map.y.push_back(b.value);
    }
    return map;
}

struct CalibrationOptions {
    int onset_grid_max = 15;     // minutes, search 0..max
    double tau_min = 0.1;        // percentage points
    double tau_max = 10.0;
    double tau_step = 0.1;
    WindowSet windows;
    EpsilonBands epsilon;

    int tau_grid_size() const {
        return static_cast<int>(std::round((tau_max - tau_min) / tau_step)) + 1;
    }
    // Grid values are exact decimals; accumulated step error would otherwise
    // move the inclusive call boundary off values like 0.3.
    double tau_at(int i) const {
        return std::round((tau_min + static_cast<double>(i) * tau_step) * 1e6) / 1e6;
    }
};

// Per-example raw forecast paired with its targets, the calibration and
// evaluation working unit.
struct ScoredExample {
    const AnchoredExample* example = nullptr;
    QuantileForecast forecast;
};

struct CalibrationBundle {
    int onset_shift = 0;
    std::array<double, kMetricCount> tau{2.5, 1.0, 1.0};
    // maps[metric][window]
    std::array<std::array<IsotonicMap, 4>, kMetricCount> maps;
    WindowSet windows;
    std::vector<std::string> warnings;
    std::string train_fingerprint;
    std::array<std::array<std::size_t, 4>, kMetricCount> pair_counts{};

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["onset_shift"] = onset_shift;
        for (int m = 0; m < kMetricCount; ++m) {
            const char* mn = metric_name(static_cast<Metric>(m));
            j["tau"][mn] = tau[static_cast<std::size_t>(m)];
            for (int w = 0; w < 4; ++w) {
                const IsotonicMap& map = maps[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)];
                nlohmann::json mj;
                mj["x"] = map.x;
                mj["y"] = map.y;
                mj["pairs"] = pair_counts[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)];
                j["isotonic"][mn][windows.windows[static_cast<std::size_t>(w)].label()] = mj;
            }
        }
        j["warnings"] = warnings;
        j["train_fingerprint"] = train_fingerprint;
        return j;
    }

    static CalibrationBundle from_json(const nlohmann::json& j) {
        CalibrationBundle b;
        b.onset_shift = j.at("onset_shift").get<int>();
        for (int m = 0; m < kMetricCount; ++m) {
            const char* mn = metric_name(static_cast<Metric>(m));
            b.tau[static_cast<std::size_t>(m)] = j.at("tau").at(mn).get<double>();
            for (int w = 0; w < 4; ++w) {
                const auto& mj =
                    j.at("isotonic").at(mn).at(b.windows.windows[static_cast<std::size_t>(w)].label());
                IsotonicMap& map = b.maps[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)];
                map.x = mj.at("x").get<std::vector<double>>();
                map.y = mj.at("y").get<std::vector<double>>();
                b.pair_counts[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)] =
                    mj.at("pairs").get<std::size_t>();
            }
        }
        b.warnings = j.at("warnings").get<std::vector<std::string>>();
        b.train_fingerprint = j.at("train_fingerprint").get<std::string>();
        return b;
    }
};

// argmin over 0..grid_max of train MAE between the forecast shifted later by
// delta and the actual percent change; ties break toward smaller delta.
inline int fit_onset_shift(const std::vector<ScoredExample>& train, int median_idx,
                           int grid_max) {
    int best_delta = 0;
    double best_mae = std::numeric_limits<double>::infinity();
    for (int delta = 0; delta <= grid_max; ++delta) {
        double abs_sum = 0.0;
        long n = 0;
        for (const auto& se : train) {
            const AnchoredExample& ex = *se.example;
            for (int m = 0; m < static_cast<int>(se.forecast.quant.size()); ++m) {
                for (int k = delta; k < ex.horizon; ++k) {
                    if (!ex.tvalid[m][static_cast<std::size_t>(k)]) continue;
                    double pred = se.forecast.median(m, k - delta, median_idx);
                    abs_sum += std::abs(pred - ex.delta[m][static_cast<std::size_t>(k)]);
                    ++n;
                }
            }
        }
        if (n == 0) continue;
        double mae = abs_sum / static_cast<double>(n);
        if (mae < best_mae) {
            best_mae = mae;
            best_delta = delta;
        }
    }
    return best_delta;
}

namespace detail {

// Eligible accuracy of thresholded calls on (calibrated median, actual sign)
// pairs, plus called-only accuracy for lexicographic tie-breaking.
struct ThresholdScore {
    double eligible = 0.0;
    double called_only = -1.0;  // undefined ranks below any defined value
};

inline ThresholdScore score_threshold(const std::vector<std::pair<double, int>>& pts,
                                      double tau) {
    long correct = 0, called = 0;
    for (const auto& [med, sa] : pts) {
        int sp = med >= tau ? 1 : (med <= -tau ? -1 : 0);
        if (sp != 0) {
            ++called;
            if (sp == sa) ++correct;
        }
    }
    ThresholdScore s;
    s.eligible = pts.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pts.size());
    if (called > 0) s.called_only = static_cast<double>(correct) / static_cast<double>(called);
    return s;
}

}  // namespace detail

// Exhaustive grid search maximizing eligible accuracy on non-neutral train
// minutes; among eligible-accuracy ties the higher called-only accuracy wins,
// then the smaller threshold. Without any non-neutral minutes the threshold
// falls back to the metric's neutrality band.
inline double fit_sign_threshold(const std::vector<std::pair<double, int>>& pts,
                                 const CalibrationOptions& opt, Metric metric,
                                 std::vector<std::string>* warnings = nullptr) {
    if (pts.empty()) {
        if (warnings) {
            warnings->push_back(std::string("no non-neutral train minutes for ") +
                                metric_name(metric) + "; threshold defaults to epsilon");
        }
        return opt.epsilon.of(metric);
    }
    double best_tau = opt.tau_min;
    detail::ThresholdScore best;
    best.eligible = -1.0;
    for (int i = 0; i < opt.tau_grid_size(); ++i) {
        double tau = opt.tau_at(i);
        detail::ThresholdScore s = detail::score_threshold(pts, tau);
        if (s.eligible > best.eligible + 1e-15 ||
            (std::abs(s.eligible - best.eligible) <= 1e-15 &&
             s.called_only > best.called_only + 1e-15)) {
            best = s;
            best_tau = tau;
        }
    }
    return best_tau;
}

// Calibrated sign calls for one forecast. Offsets before the onset shift are
// invalid; everything else carries a calibrated median and a three-way call.
struct SignSeries {
    std::array<std::vector<std::int8_t>, kMetricCount> sign;
    std::array<std::vector<double>, kMetricCount> cal_median;
    std::array<std::vector<std::uint8_t>, kMetricCount> valid;
};

inline SignSeries predict_sign(const QuantileForecast& forecast, const CalibrationBundle& bundle,
                               int median_idx, int horizon) {
    SignSeries out;
    int nt = static_cast<int>(forecast.quant.size());
    for (int m = 0; m < kMetricCount; ++m) {
        out.sign[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(horizon), 0);
        out.cal_median[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(horizon), 0.0);
        out.valid[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(horizon), 0);
        if (m >= nt) continue;
        double tau = bundle.tau[static_cast<std::size_t>(m)];
        for (int k = bundle.onset_shift; k < horizon; ++k) {
            int w = bundle.windows.window_of(k);
            if (w < 0) continue;
            double raw = forecast.median(m, k - bundle.onset_shift, median_idx);
            double cal = bundle.maps[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)].eval(raw);
            out.cal_median[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = cal;
            out.valid[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = 1;
            out.sign[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] =
                static_cast<std::int8_t>(cal >= tau ? 1 : (cal <= -tau ? -1 : 0));
        }
    }
    return out;
}

// Fits the whole bundle on train forecasts only. The fingerprint records the
// example ids that entered the fit, for leakage audits.
inline CalibrationBundle fit_calibration(const std::vector<ScoredExample>& train, int median_idx,
                                         const CalibrationOptions& opt = {}) {
    CalibrationBundle bundle;
    bundle.windows = opt.windows;

    bundle.onset_shift = fit_onset_shift(train, median_idx, opt.onset_grid_max);
    int delta = bundle.onset_shift;

    int nt = train.empty() ? kMetricCount : static_cast<int>(train.front().forecast.quant.size());
    for (int m = 0; m < kMetricCount; ++m) {
        for (int w = 0; w < 4; ++w) {
            std::vector<std::pair<double, double>> pairs;
            if (m < nt) {
                const Window& win = opt.windows.windows[static_cast<std::size_t>(w)];
                for (const auto& se : train) {
                    const AnchoredExample& ex = *se.example;
                    for (int k = std::max(win.lo, delta); k < win.hi && k < ex.horizon; ++k) {
                        if (!ex.tvalid[m][static_cast<std::size_t>(k)]) continue;
                        pairs.emplace_back(se.forecast.median(m, k - delta, median_idx),
                                           ex.delta[m][static_cast<std::size_t>(k)]);
                    }
                }
            }
            bundle.pair_counts[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)] =
                pairs.size();
            bool underfit = false;
            bundle.maps[static_cast<std::size_t>(m)][static_cast<std::size_t>(w)] =
                fit_isotonic(std::move(pairs), &underfit);
            if (underfit) {
                bundle.warnings.push_back(
                    std::string("isotonic map for ") + metric_name(static_cast<Metric>(m)) + " " +
                    opt.windows.windows[static_cast<std::size_t>(w)].label() +
                    " has under two train pairs; using identity");
            }
        }
    }

    for (int m = 0; m < kMetricCount && m < nt; ++m) {
        std::vector<std::pair<double, int>> pts;
        for (const auto& se : train) {
            const AnchoredExample& ex = *se.example;
            SignSeries cal = predict_sign(se.forecast, bundle, median_idx, ex.horizon);
            for (int k = delta; k < ex.horizon; ++k) {
                if (!ex.tvalid[m][static_cast<std::size_t>(k)]) continue;
                int sa = ex.sign[m][static_cast<std::size_t>(k)];
                if (sa == 0) continue;
                pts.emplace_back(
                    cal.cal_median[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)], sa);
            }
        }
        bundle.tau[static_cast<std::size_t>(m)] =
            fit_sign_threshold(pts, opt, static_cast<Metric>(m), &bundle.warnings);
    }

    std::string ids;
    for (const auto& se : train) {
        ids += se.example->id();
        ids += ';';
    }
    bundle.train_fingerprint = hex64(fnv1a64(ids));
    return bundle;
}

}  // namespace vitalcast
