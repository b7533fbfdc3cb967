#pragma once

// RMSSD derived from beat-to-beat intervals: rolling 15-minute window with a
// 30-second stride, resampled to the 1-minute grid by averaging the two
// updates per minute. Successive differences are taken only between
// temporally adjacent beats (a timestamp jump above the adjacency cap breaks
// the pair), windows need at least `min_intervals` differences, and windows
// overlapping a recording gap longer than `max_gap` are invalid.

#include <cmath>
#include <cstdint>
#include <vector>

#include "vitalcast/streams.hpp"

namespace vitalcast {

struct RmssdOptions {
    std::int64_t window_ms = 15 * kMsPerMinute;
    std::int64_t stride_ms = 30000;
    int min_intervals = 20;                      // N floor; unit tests may disable
    std::int64_t max_gap_ms = 30 * kMsPerMinute; // recording gap that kills a window
    std::int64_t adjacency_max_ms = 5000;        // beyond this, beats are not successive
};

struct RmssdSeries {
    std::int64_t start_minute = 0;
    std::vector<double> rmssd;          // ms, 0 where invalid
    std::vector<std::uint8_t> valid;
    std::vector<double> interval_count; // mean N of the contributing updates

    std::size_t size() const { return rmssd.size(); }
};

namespace detail {

struct RmssdIndex {
    // Pair i covers beats (i-1, i); arrays are indexed by pair end beat.
    std::vector<std::int64_t> pair_start;  // t[i-1]
    std::vector<std::int64_t> pair_end;    // t[i]
    std::vector<double> prefix_sumsq;      // over valid pairs
    std::vector<std::int64_t> prefix_count;
    std::vector<std::pair<std::int64_t, std::int64_t>> gaps;  // (t[i-1], t[i]) with dt > max_gap
};

inline RmssdIndex build_rmssd_index(const std::vector<BbiEvent>& bbi, const RmssdOptions& opt) {
    RmssdIndex ix;
    std::size_t n = bbi.size();
    if (n < 2) return ix;
    ix.pair_start.reserve(n - 1);
    ix.pair_end.reserve(n - 1);
    ix.prefix_sumsq.assign(n, 0.0);
    ix.prefix_count.assign(n, 0);
    for (std::size_t i = 1; i < n; ++i) {
        std::int64_t dt = bbi[i].t_ms - bbi[i - 1].t_ms;
        ix.pair_start.push_back(bbi[i - 1].t_ms);
        ix.pair_end.push_back(bbi[i].t_ms);
        double sq = 0.0;
        std::int64_t cnt = 0;
        if (dt > 0 && dt <= opt.adjacency_max_ms) {
            double d = bbi[i].interval_ms - bbi[i - 1].interval_ms;
            sq = d * d;
            cnt = 1;
        }
        if (dt > opt.max_gap_ms) ix.gaps.emplace_back(bbi[i - 1].t_ms, bbi[i].t_ms);
        ix.prefix_sumsq[i] = ix.prefix_sumsq[i - 1] + sq;
        ix.prefix_count[i] = ix.prefix_count[i - 1] + cnt;
    }
    return ix;
}

// One rolling update: RMSSD over pairs fully inside (end_ms - window, end_ms].
// Returns false when the window is invalid.
inline bool rmssd_at(const RmssdIndex& ix, std::int64_t end_ms, const RmssdOptions& opt,
                     double& value, std::int64_t& count) {
    value = 0.0;
    count = 0;
    if (ix.pair_end.empty()) return false;
    std::int64_t win_lo = end_ms - opt.window_ms;
    for (const auto& g : ix.gaps) {
        if (g.first < end_ms && g.second > win_lo) return false;
    }
    // pairs with end <= end_ms
    auto hi_it = std::upper_bound(ix.pair_end.begin(), ix.pair_end.end(), end_ms);
    std::size_t hi = static_cast<std::size_t>(hi_it - ix.pair_end.begin());
    // pairs with start > win_lo
    auto lo_it = std::upper_bound(ix.pair_start.begin(), ix.pair_start.end(), win_lo);
    std::size_t lo = static_cast<std::size_t>(lo_it - ix.pair_start.begin());
    if (lo >= hi) return false;
    std::int64_t n = ix.prefix_count[hi] - ix.prefix_count[lo];
    if (n < std::max(1, opt.min_intervals)) return false;
    double ss = ix.prefix_sumsq[hi] - ix.prefix_sumsq[lo];
    value = std::sqrt(ss / static_cast<double>(n));
    count = n;
    return true;
}

}  // namespace detail

// Computes the 1-minute RMSSD series over [start_minute, start_minute + len).
// Minute m averages the updates whose windows end at m+30s and m+60s; a
// minute is valid if at least one of its updates is.
inline RmssdSeries compute_rmssd(const std::vector<BbiEvent>& bbi, std::int64_t start_minute,
                                 std::size_t len, const RmssdOptions& opt = {}) {
    RmssdSeries s;
    s.start_minute = start_minute;
    s.rmssd.assign(len, 0.0);
    s.valid.assign(len, 0);
    s.interval_count.assign(len, 0.0);
    if (bbi.size() < 2) return s;

    detail::RmssdIndex ix = detail::build_rmssd_index(bbi, opt);
    for (std::size_t i = 0; i < len; ++i) {
        std::int64_t minute_ms = (start_minute + static_cast<std::int64_t>(i)) * kMsPerMinute;
        double acc = 0.0, ncontrib = 0.0, cacc = 0.0;
        for (std::int64_t end_ms : {minute_ms + opt.stride_ms, minute_ms + kMsPerMinute}) {
            double v;
            std::int64_t cnt;
            if (detail::rmssd_at(ix, end_ms, opt, v, cnt)) {
                acc += v;
                cacc += static_cast<double>(cnt);
                ncontrib += 1.0;
            }
        }
        if (ncontrib > 0.0) {
            s.rmssd[i] = acc / ncontrib;
            s.interval_count[i] = cacc / ncontrib;
            s.valid[i] = 1;
        }
    }
    return s;
}

}  // namespace vitalcast
