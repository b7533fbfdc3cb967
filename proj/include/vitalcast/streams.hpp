#pragma once

// Raw stream and tag ingestion: parse per-user CSV exports, validate them
// against the stream invariants, and align everything onto a shared 1-minute
// grid (linear interpolation for HR/steps, capped carry-forward for
// respiration/stress that never crosses local midnight).

#include <array>
#include <map>
#include <string>
#include <vector>

#include "vitalcast/common.hpp"

#include <nlohmann/json_fwd.hpp>
#include <nlohmann/json.hpp>

namespace vitalcast {

// The nine analysis categories. Unknown strings map to Other at parse time.
enum class Category : int {
    PhysicalActivityCardio = 0,
    PhysicalActivityNonCardio,
    RestRecovery,
    FoodDrinkNutrition,
    HealthcareTherapy,
    SocializingSocialInteraction,
    SpiritualityMindfulActivities,
    AcademicEducational,
    Other,
};

inline constexpr int kCategoryCount = 9;

inline const char* category_name(Category c) {
    static const char* names[kCategoryCount] = {
        "Physical Activity: Cardio",
        "Physical Activity: Non-cardio",
        "Rest & Recovery",
        "Food/Drink/Nutrition",
        "Healthcare/Therapy",
        "Socializing/Social Interaction",
        "Spirituality/Mindful Activities",
        "Academic & Educational",
        "Other",
    };
    return names[static_cast<int>(c)];
}

inline std::optional<Category> category_from_name(std::string_view s) {
    for (int i = 0; i < kCategoryCount; ++i) {
        if (s == category_name(static_cast<Category>(i))) return static_cast<Category>(i);
    }
    return std::nullopt;
}

enum class ExpectedEffect : int { Positive = 0, Negative, Neutral, Unknown };

inline const char* expected_effect_name(ExpectedEffect e) {
    static const char* names[4] = {"positive", "negative", "neutral", "unknown"};
    return names[static_cast<int>(e)];
}

inline ExpectedEffect expected_effect_from_name(std::string_view s) {
    for (int i = 0; i < 4; ++i) {
        if (s == expected_effect_name(static_cast<ExpectedEffect>(i)))
            return static_cast<ExpectedEffect>(i);
    }
    return ExpectedEffect::Unknown;
}

// One beat event. Timestamps are local milliseconds (UTC epoch ms shifted by
// the configured offset at parse time).
struct BbiEvent {
    std::int64_t t_ms = 0;
    double interval_ms = 0.0;
};

// One observation on a minute-resolution stream.
struct MinuteSample {
    std::int64_t minute = 0;
    double value = 0.0;
};

struct StreamBundle {
    std::string user_id;
    std::vector<BbiEvent> bbi;
    std::vector<MinuteSample> hr;
    std::vector<MinuteSample> steps;
    std::vector<MinuteSample> respiration;  // 3-minute cadence
    std::vector<MinuteSample> stress;       // 3-minute cadence, 0-100
    std::map<std::int64_t, double> sleep;   // day index -> score 0-100
};

struct TagRecord {
    std::string user_id;
    std::string name;
    Category category = Category::Other;
    std::int64_t t0 = 0;  // start minute (local)
    std::int64_t t1 = 0;  // end minute (local), t0 < t1
    ExpectedEffect expected_effect = ExpectedEffect::Unknown;
};

struct Channel {
    std::vector<double> value;
    std::vector<std::uint8_t> valid;

    void resize(std::size_t n) {
        value.assign(n, 0.0);
        valid.assign(n, 0);
    }
};

struct MinuteGrid {
    std::string user_id;
    std::int64_t start_minute = 0;
    Channel hr, steps, respiration, stress;
    std::vector<std::uint8_t> day_start;  // 1 where the minute is local midnight

    std::size_t size() const { return hr.value.size(); }
    std::int64_t end_minute() const { return start_minute + static_cast<std::int64_t>(size()); }
};

// Per-stream ingest accounting, emitted as the parse report artifact.
struct StreamParseStats {
    std::size_t rows_total = 0;
    std::size_t rows_kept = 0;
    std::map<std::string, std::size_t> drops;  // reason -> count

    void drop(const std::string& reason) { ++drops[reason]; }
};

struct ParseReport {
    std::map<std::string, StreamParseStats> streams;  // stream name -> stats
    std::vector<std::string> warnings;
    std::size_t tags_kept = 0;
    std::size_t tags_rejected = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& [name, st] : streams) {
            nlohmann::json s;
            s["rows_total"] = st.rows_total;
            s["rows_kept"] = st.rows_kept;
            s["drops"] = st.drops;
            j["streams"][name] = s;
        }
        j["warnings"] = warnings;
        j["tags_kept"] = tags_kept;
        j["tags_rejected"] = tags_rejected;
        return j;
    }
};

namespace detail {

inline void expect_header(const CsvTable& t, const std::vector<std::string>& want,
                          const std::string& path) {
    if (t.header != want) {
        std::string msg = "unexpected header in " + path + " (want";
        for (const auto& w : want) msg += " " + w;
        msg += ")";
        throw std::runtime_error(msg);
    }
}

// Minute-cadence stream: strictly increasing timestamps, value range check
// optional. Violating rows are dropped and counted.
inline std::vector<MinuteSample> parse_minute_stream(const std::filesystem::path& path,
                                                     const std::string& value_col,
                                                     std::optional<double> lo,
                                                     std::optional<double> hi,
                                                     StreamParseStats& stats) {
    CsvTable t = read_csv(path);
    expect_header(t, {"timestamp", value_col}, path.string());
    std::vector<MinuteSample> out;
    for (const auto& row : t.rows) {
        ++stats.rows_total;
        if (row.size() != 2) {
            stats.drop("bad_field_count");
            continue;
        }
        auto minute = parse_iso_minute(row[0]);
        auto value = parse_double(row[1]);
        if (!minute || !value || !std::isfinite(*value)) {
            stats.drop("unparseable");
            continue;
        }
        if (!out.empty() && *minute <= out.back().minute) {
            stats.drop("non_monotone_timestamp");
            continue;
        }
        if ((lo && *value < *lo) || (hi && *value > *hi)) {
            stats.drop("out_of_range");
            continue;
        }
        out.push_back({*minute, *value});
        ++stats.rows_kept;
    }
    return out;
}

}  // namespace detail

// Reads <dir>/<stream>.csv for one user. A missing stream file is fatal; an
// empty (header-only) file yields an empty sequence.
inline StreamBundle parse_streams(const std::filesystem::path& user_dir, const std::string& user_id,
                                  int utc_offset_minutes, ParseReport& report) {
    StreamBundle b;
    b.user_id = user_id;

    // BBI: epoch-millisecond timestamps, positive intervals.
    {
        auto& stats = report.streams["bbi"];
        CsvTable t = read_csv(user_dir / "bbi.csv");
        detail::expect_header(t, {"timestamp", "interval_ms"}, (user_dir / "bbi.csv").string());
        for (const auto& row : t.rows) {
            ++stats.rows_total;
            if (row.size() != 2) {
                stats.drop("bad_field_count");
                continue;
            }
            auto ts = parse_int(row[0]);
            auto iv = parse_double(row[1]);
            if (!ts || !iv || !std::isfinite(*iv)) {
                stats.drop("unparseable");
                continue;
            }
            std::int64_t local = local_ms_from_utc_ms(*ts, utc_offset_minutes);
            if (!b.bbi.empty() && local <= b.bbi.back().t_ms) {
                stats.drop("non_monotone_timestamp");
                continue;
            }
            if (*iv <= 0.0) {
                stats.drop("out_of_range");
                continue;
            }
            b.bbi.push_back({local, *iv});
            ++stats.rows_kept;
        }
    }

    b.hr = detail::parse_minute_stream(user_dir / "hr.csv", "bpm", std::nullopt, std::nullopt,
                                       report.streams["hr"]);
    b.steps = detail::parse_minute_stream(user_dir / "steps.csv", "count", std::nullopt,
                                          std::nullopt, report.streams["steps"]);
    b.respiration = detail::parse_minute_stream(user_dir / "respiration.csv", "brpm", std::nullopt,
                                                std::nullopt, report.streams["respiration"]);
    b.stress = detail::parse_minute_stream(user_dir / "stress.csv", "score", 0.0, 100.0,
                                           report.streams["stress"]);

    // Sleep: one score per date, 0-100.
    {
        auto& stats = report.streams["sleep"];
        CsvTable t = read_csv(user_dir / "sleep.csv");
        detail::expect_header(t, {"timestamp", "score"}, (user_dir / "sleep.csv").string());
        for (const auto& row : t.rows) {
            ++stats.rows_total;
            if (row.size() != 2) {
                stats.drop("bad_field_count");
                continue;
            }
            auto day = parse_iso_date(row[0]);
            auto score = parse_double(row[1]);
            if (!day || !score || !std::isfinite(*score)) {
                stats.drop("unparseable");
                continue;
            }
            if (*score < 0.0 || *score > 100.0) {
                stats.drop("out_of_range");
                continue;
            }
            if (b.sleep.count(*day)) {
                stats.drop("duplicate_date");
                continue;
            }
            b.sleep[*day] = *score;
            ++stats.rows_kept;
        }
    }
    return b;
}

// Reads <dir>/tags.csv. Records with t0 >= t1 are rejected; unknown category
// strings map to Other with a warning. Output is sorted by end time.
inline std::vector<TagRecord> parse_tags(const std::filesystem::path& path,
                                         const std::string& user_id, ParseReport& report) {
    CsvTable t = read_csv(path);
    detail::expect_header(t, {"name", "category", "start", "end", "expected_effect"},
                          path.string());
    std::vector<TagRecord> out;
    for (const auto& row : t.rows) {
        if (row.size() != 5) {
            ++report.tags_rejected;
            report.warnings.push_back(user_id + ": tag row with bad field count rejected");
            continue;
        }
        auto t0 = parse_iso_minute(row[2]);
        auto t1 = parse_iso_minute(row[3]);
        if (!t0 || !t1) {
            ++report.tags_rejected;
            report.warnings.push_back(user_id + ": tag '" + row[0] + "' has unparseable times");
            continue;
        }
        if (*t0 >= *t1) {
            ++report.tags_rejected;
            report.warnings.push_back(user_id + ": tag '" + row[0] + "' rejected (start >= end)");
            continue;
        }
        TagRecord rec;
        rec.user_id = user_id;
        rec.name = row[0];
        auto cat = category_from_name(row[1]);
        if (cat) {
            rec.category = *cat;
        } else {
            rec.category = Category::Other;
            report.warnings.push_back(user_id + ": unknown category '" + row[1] +
                                      "' mapped to Other");
        }
        rec.t0 = *t0;
        rec.t1 = *t1;
        rec.expected_effect = row[4].empty() ? ExpectedEffect::Unknown
                                             : expected_effect_from_name(row[4]);
        out.push_back(std::move(rec));
        ++report.tags_kept;
    }
    std::stable_sort(out.begin(), out.end(), [](const TagRecord& a, const TagRecord& b) {
        if (a.t1 != b.t1) return a.t1 < b.t1;
        return a.t0 < b.t0;
    });
    return out;
}

namespace detail {

// Linear interpolation for runs of at most max_gap missing minutes.
inline void fill_interpolated(Channel& ch, const std::vector<MinuteSample>& obs,
                              std::int64_t start, int max_gap) {
    for (const auto& s : obs) {
        std::size_t i = static_cast<std::size_t>(s.minute - start);
        ch.value[i] = s.value;
        ch.valid[i] = 1;
    }
    for (std::size_t k = 1; k < obs.size(); ++k) {
        std::int64_t prev = obs[k - 1].minute, next = obs[k].minute;
        std::int64_t missing = next - prev - 1;
        if (missing <= 0 || missing > max_gap) continue;
        double v0 = obs[k - 1].value, v1 = obs[k].value;
        for (std::int64_t m = prev + 1; m < next; ++m) {
            double f = static_cast<double>(m - prev) / static_cast<double>(next - prev);
            std::size_t i = static_cast<std::size_t>(m - start);
            ch.value[i] = v0 + f * (v1 - v0);
            ch.valid[i] = 1;
        }
    }
}

// Last observation carried forward for at most max_carry minutes, never past
// local midnight.
inline void fill_carry_forward(Channel& ch, const std::vector<MinuteSample>& obs,
                               std::int64_t start, std::int64_t grid_len, int max_carry) {
    for (const auto& s : obs) {
        std::size_t i = static_cast<std::size_t>(s.minute - start);
        ch.value[i] = s.value;
        ch.valid[i] = 1;
    }
    for (std::size_t k = 0; k < obs.size(); ++k) {
        std::int64_t next_obs = (k + 1 < obs.size()) ? obs[k + 1].minute : start + grid_len;
        std::int64_t o = obs[k].minute;
        std::int64_t day = day_of_minute(o);
        for (std::int64_t m = o + 1; m < next_obs && m - o <= max_carry; ++m) {
            if (day_of_minute(m) != day) break;
            if (m < start || m >= start + grid_len) continue;
            std::size_t i = static_cast<std::size_t>(m - start);
            ch.value[i] = obs[k].value;
            ch.valid[i] = 1;
        }
    }
}

}  // namespace detail

struct AlignOptions {
    int hr_steps_max_gap = 10;      // minutes of missing data bridged by interpolation
    int carry_forward_cap = 6;      // minutes
};

// Aligns every channel of a validated bundle onto one shared minute index.
inline MinuteGrid align_minute_grid(const StreamBundle& b, const AlignOptions& opt = {}) {
    std::int64_t lo = std::numeric_limits<std::int64_t>::max();
    std::int64_t hi = std::numeric_limits<std::int64_t>::min();
    auto extend = [&](std::int64_t m) {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    };
    for (const auto& s : b.hr) extend(s.minute);
    for (const auto& s : b.steps) extend(s.minute);
    for (const auto& s : b.respiration) extend(s.minute);
    for (const auto& s : b.stress) extend(s.minute);
    if (!b.bbi.empty()) {
        extend(floor_div(b.bbi.front().t_ms, kMsPerMinute));
        extend(floor_div(b.bbi.back().t_ms, kMsPerMinute));
    }
    if (lo > hi) throw std::runtime_error("empty grid: no observations in any channel for user " +
                                          b.user_id);

    MinuteGrid g;
    g.user_id = b.user_id;
    g.start_minute = lo;
    std::size_t n = static_cast<std::size_t>(hi - lo + 1);
    g.hr.resize(n);
    g.steps.resize(n);
    g.respiration.resize(n);
    g.stress.resize(n);
    g.day_start.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (minute_of_day(lo + static_cast<std::int64_t>(i)) == 0) g.day_start[i] = 1;
    }

    detail::fill_interpolated(g.hr, b.hr, lo, opt.hr_steps_max_gap);
    detail::fill_interpolated(g.steps, b.steps, lo, opt.hr_steps_max_gap);
    detail::fill_carry_forward(g.respiration, b.respiration, lo, static_cast<std::int64_t>(n),
                               opt.carry_forward_cap);
    detail::fill_carry_forward(g.stress, b.stress, lo, static_cast<std::int64_t>(n),
                               opt.carry_forward_cap);
    return g;
}

// --- Grid persistence -------------------------------------------------------
// One CSV per user; invalid minutes carry empty fields so masked values never
// leak into downstream readers. %.17g keeps valid values bit-exact.

inline std::string grid_to_csv(const MinuteGrid& g) {
    std::string out =
        "minute,hr,hr_valid,steps,steps_valid,respiration,respiration_valid,stress,stress_valid,"
        "day_start\n";
    auto cell = [](const Channel& ch, std::size_t i) -> std::string {
        return ch.valid[i] ? fmt_double(ch.value[i]) : std::string();
    };
    for (std::size_t i = 0; i < g.size(); ++i) {
        out += std::to_string(g.start_minute + static_cast<std::int64_t>(i));
        for (const Channel* ch : {&g.hr, &g.steps, &g.respiration, &g.stress}) {
            out += ',';
            out += cell(*ch, i);
            out += ',';
            out += (*ch).valid[i] ? '1' : '0';
        }
        out += ',';
        out += g.day_start[i] ? '1' : '0';
        out += '\n';
    }
    return out;
}

inline MinuteGrid grid_from_csv(const std::filesystem::path& path, const std::string& user_id) {
    CsvTable t = read_csv(path);
    MinuteGrid g;
    g.user_id = user_id;
    std::size_t n = t.rows.size();
    if (n == 0) throw std::runtime_error("empty grid file " + path.string());
    g.start_minute = *parse_int(t.rows.front()[0]);
    g.hr.resize(n);
    g.steps.resize(n);
    g.respiration.resize(n);
    g.stress.resize(n);
    g.day_start.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = t.rows[i];
        Channel* chans[4] = {&g.hr, &g.steps, &g.respiration, &g.stress};
        for (int c = 0; c < 4; ++c) {
            const std::string& v = row[1 + 2 * c];
            const std::string& fl = row[2 + 2 * c];
            if (fl == "1") {
                chans[c]->valid[i] = 1;
                chans[c]->value[i] = *parse_double(v);
            }
        }
        g.day_start[i] = (row[9] == "1") ? 1 : 0;
    }
    return g;
}

inline std::string bbi_to_csv(const std::vector<BbiEvent>& bbi) {
    std::string out = "t_local_ms,interval_ms\n";
    for (const auto& e : bbi) {
        out += std::to_string(e.t_ms);
        out += ',';
        out += fmt_double(e.interval_ms);
        out += '\n';
    }
    return out;
}

inline std::vector<BbiEvent> bbi_from_csv(const std::filesystem::path& path) {
    CsvTable t = read_csv(path);
    std::vector<BbiEvent> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) out.push_back({*parse_int(row[0]), *parse_double(row[1])});
    return out;
}

}  // namespace vitalcast
