#pragma once

// Per-minute model features: raw channels, 5/15-minute OLS slopes, cyclic
// time-of-day and day-of-week encodings, and the prior-night sleep score
// broadcast over the following day. The column order is frozen and versioned
// so persisted models stay loadable.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vitalcast/rmssd.hpp"
#include "vitalcast/streams.hpp"

namespace vitalcast {

inline constexpr const char* kFeatureVersion = "vitalcast.features.v1";

inline constexpr int kFeatureCount = 18;

inline const std::array<const char*, kFeatureCount>& feature_names() {
    static const std::array<const char*, kFeatureCount> names = {
        "hr",          "rmssd",        "respiration",  "stress",        "steps",
        "hr_slope5",   "hr_slope15",   "rmssd_slope5", "rmssd_slope15", "respiration_slope5",
        "respiration_slope15", "stress_slope5", "stress_slope15", "tod_sin", "tod_cos",
        "dow_sin",     "dow_cos",      "sleep_prior_night",
    };
    return names;
}

// OLS slope over the trailing `span` minutes (window [t-span+1, t]), in value
// units per minute. Invalid when fewer than 3 valid points are available.
inline void compute_slope(const std::vector<double>& values,
                          const std::vector<std::uint8_t>& valid, int span,
                          std::vector<double>& slope, std::vector<std::uint8_t>& slope_valid) {
    std::size_t n = values.size();
    slope.assign(n, 0.0);
    slope_valid.assign(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
        std::size_t lo = (t + 1 >= static_cast<std::size_t>(span)) ? t + 1 - span : 0;
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int cnt = 0;
        for (std::size_t j = lo; j <= t; ++j) {
            if (!valid[j]) continue;
            double x = static_cast<double>(j - lo);
            sx += x;
            sy += values[j];
            sxx += x * x;
            sxy += x * values[j];
            ++cnt;
        }
        if (cnt < 3) continue;
        double denom = cnt * sxx - sx * sx;
        if (denom == 0.0) continue;
        slope[t] = (cnt * sxy - sx * sy) / denom;
        slope_valid[t] = 1;
    }
}

struct TimeEncoding {
    double tod_sin = 0, tod_cos = 1, dow_sin = 0, dow_cos = 1;
};

inline TimeEncoding encode_time(std::int64_t local_minute) {
    TimeEncoding e;
    double tod = 2.0 * M_PI * static_cast<double>(minute_of_day(local_minute)) / 1440.0;
    double dow = 2.0 * M_PI * static_cast<double>(weekday_of_minute(local_minute)) / 7.0;
    e.tod_sin = std::sin(tod);
    e.tod_cos = std::cos(tod);
    e.dow_sin = std::sin(dow);
    e.dow_cos = std::cos(dow);
    return e;
}

struct FeatureFrame {
    std::string user_id;
    std::int64_t start_minute = 0;
    std::size_t rows = 0;
    // column-major: col[f][t]
    std::array<std::vector<double>, kFeatureCount> col;
    std::array<std::vector<std::uint8_t>, kFeatureCount> valid;

    int feature_index(std::string_view name) const {
        for (int f = 0; f < kFeatureCount; ++f) {
            if (name == feature_names()[f]) return f;
        }
        return -1;
    }
};

// Assembles the frame from an aligned grid, the RMSSD series on the same
// index, and the nightly sleep scores. Index mismatch is a hard error.
inline FeatureFrame build_feature_frame(const MinuteGrid& grid, const RmssdSeries& rmssd,
                                        const std::map<std::int64_t, double>& sleep) {
    if (rmssd.start_minute != grid.start_minute || rmssd.size() != grid.size()) {
        throw std::runtime_error("feature frame index mismatch: grid [" +
                                 std::to_string(grid.start_minute) + ", +" +
                                 std::to_string(grid.size()) + ") vs rmssd [" +
                                 std::to_string(rmssd.start_minute) + ", +" +
                                 std::to_string(rmssd.size()) + ")");
    }
    FeatureFrame fr;
    fr.user_id = grid.user_id;
    fr.start_minute = grid.start_minute;
    fr.rows = grid.size();
    for (int f = 0; f < kFeatureCount; ++f) {
        fr.col[f].assign(fr.rows, 0.0);
        fr.valid[f].assign(fr.rows, 0);
    }

    auto put = [&](int f, const std::vector<double>& v, const std::vector<std::uint8_t>& m) {
        fr.col[f] = v;
        fr.valid[f] = m;
    };
    put(0, grid.hr.value, grid.hr.valid);
    put(1, rmssd.rmssd, rmssd.valid);
    put(2, grid.respiration.value, grid.respiration.valid);
    put(3, grid.stress.value, grid.stress.valid);
    put(4, grid.steps.value, grid.steps.valid);

    struct SlopeSpec {
        int src;
        int span;
        int dst;
    };
    const SlopeSpec slopes[8] = {{0, 5, 5},  {0, 15, 6},  {1, 5, 7},  {1, 15, 8},
                                 {2, 5, 9},  {2, 15, 10}, {3, 5, 11}, {3, 15, 12}};
    for (const auto& sp : slopes) {
        compute_slope(fr.col[sp.src], fr.valid[sp.src], sp.span, fr.col[sp.dst],
                      fr.valid[sp.dst]);
    }

    for (std::size_t t = 0; t < fr.rows; ++t) {
        std::int64_t m = fr.start_minute + static_cast<std::int64_t>(t);
        TimeEncoding e = encode_time(m);
        fr.col[13][t] = e.tod_sin;
        fr.col[14][t] = e.tod_cos;
        fr.col[15][t] = e.dow_sin;
        fr.col[16][t] = e.dow_cos;
        fr.valid[13][t] = fr.valid[14][t] = fr.valid[15][t] = fr.valid[16][t] = 1;
        auto it = sleep.find(day_of_minute(m));
        if (it != sleep.end()) {
            fr.col[17][t] = it->second;
            fr.valid[17][t] = 1;
        }
    }
    return fr;
}

// --- Persistence: columnar CSV plus a JSON metadata sidecar -----------------

inline std::string feature_frame_to_csv(const FeatureFrame& fr) {
    std::string out = "minute";
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
    for (std::size_t t = 0; t < fr.rows; ++t) {
        out += std::to_string(fr.start_minute + static_cast<std::int64_t>(t));
        for (int f = 0; f < kFeatureCount; ++f) {
            out += ',';
            if (fr.valid[f][t]) out += fmt_double(fr.col[f][t]);
        }
        for (int f = 0; f < kFeatureCount; ++f) {
            out += ',';
            out += fr.valid[f][t] ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

inline FeatureFrame feature_frame_from_csv(const std::filesystem::path& path,
                                           const std::string& user_id) {
    CsvTable t = read_csv(path);
    if (t.header.size() != 1 + 2 * kFeatureCount) {
        throw std::runtime_error("feature file " + path.string() + " has wrong column count");
    }
    FeatureFrame fr;
    fr.user_id = user_id;
    fr.rows = t.rows.size();
    if (fr.rows == 0) throw std::runtime_error("empty feature file " + path.string());
    fr.start_minute = *parse_int(t.rows.front()[0]);
    for (int f = 0; f < kFeatureCount; ++f) {
        fr.col[f].assign(fr.rows, 0.0);
        fr.valid[f].assign(fr.rows, 0);
    }
    for (std::size_t r = 0; r < fr.rows; ++r) {
        const auto& row = t.rows[r];
        for (int f = 0; f < kFeatureCount; ++f) {
            if (row[1 + kFeatureCount + f] == "1") {
                fr.valid[f][r] = 1;
                fr.col[f][r] = *parse_double(row[1 + f]);
            }
        }
    }
    return fr;
}

}  // namespace vitalcast
