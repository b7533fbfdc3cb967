#pragma once

// Shared plumbing: civil-time math on a 1-minute grid, locale-free number
// formatting, a small RFC-4180-ish CSV reader, deterministic RNG, and the
// error types the CLI maps to exit codes.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vitalcast {

// Thrown when a stage is asked to run before its upstream artifacts exist.
// The CLI maps this to exit code 2.
class MissingArtifactError : public std::runtime_error {
public:
    explicit MissingArtifactError(const std::string& path)
        : std::runtime_error("missing upstream artifact: " + path), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

// Thrown when configuration violates an invariant. CLI exit code 3.
class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Time. All pipeline timestamps are "local minutes": whole minutes since
// 1970-01-01T00:00 in the user's civil timezone (a fixed UTC offset from
// config). BBI event files carry epoch milliseconds UTC; everything else is
// naive ISO-8601 interpreted as local wall time.
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kMinutesPerDay = 1440;
inline constexpr std::int64_t kMsPerMinute = 60000;

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

inline std::int64_t day_of_minute(std::int64_t minute) { return floor_div(minute, kMinutesPerDay); }

inline int minute_of_day(std::int64_t minute) {
    return static_cast<int>(minute - day_of_minute(minute) * kMinutesPerDay);
}

// Monday = 0 ... Sunday = 6.
inline int weekday_of_minute(std::int64_t minute) {
    using namespace std::chrono;
    sys_days d{days{day_of_minute(minute)}};
    return static_cast<int>(weekday{d}.iso_encoding()) - 1;
}

inline std::int64_t local_minute_from_utc_ms(std::int64_t utc_ms, int utc_offset_minutes) {
    return floor_div(utc_ms + static_cast<std::int64_t>(utc_offset_minutes) * kMsPerMinute,
                     kMsPerMinute);
}

inline std::int64_t local_ms_from_utc_ms(std::int64_t utc_ms, int utc_offset_minutes) {
    return utc_ms + static_cast<std::int64_t>(utc_offset_minutes) * kMsPerMinute;
}

// Parses "YYYY-MM-DD". Returns days since epoch.
inline std::optional<std::int64_t> parse_iso_date(std::string_view s) {
    int y = 0, mo = 0, da = 0;
    if (std::sscanf(std::string(s).c_str(), "%d-%d-%d", &y, &mo, &da) != 3) return std::nullopt;
    if (mo < 1 || mo > 12 || da < 1 || da > 31) return std::nullopt;
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(da)}};
    if (!ymd.ok()) return std::nullopt;
    return sys_days{ymd}.time_since_epoch().count();
}

// Parses "YYYY-MM-DDTHH:MM" (optional ":SS", optional trailing 'Z').
// Seconds are truncated: the pipeline grid is whole minutes.
inline std::optional<std::int64_t> parse_iso_minute(std::string_view s) {
    int y = 0, mo = 0, da = 0, hh = 0, mi = 0, ss = 0;
    int n = std::sscanf(std::string(s).c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &da, &hh, &mi, &ss);
    if (n < 5) {
        n = std::sscanf(std::string(s).c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &da, &hh, &mi, &ss);
        if (n < 5) return std::nullopt;
    }
    if (hh < 0 || hh > 23 || mi < 0 || mi > 59) return std::nullopt;
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(da)}};
    if (!ymd.ok()) return std::nullopt;
    return sys_days{ymd}.time_since_epoch().count() * kMinutesPerDay + hh * 60 + mi;
}

inline std::string format_iso_date(std::int64_t day) {
    using namespace std::chrono;
    year_month_day ymd{sys_days{days{day}}};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

inline std::string format_iso_minute(std::int64_t minute) {
    int mod = minute_of_day(minute);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%sT%02d:%02d", format_iso_date(day_of_minute(minute)).c_str(),
                  mod / 60, mod % 60);
    return buf;
}

// ---------------------------------------------------------------------------
// Numbers. %.17g round-trips IEEE doubles bit-exactly, which the persisted
// artifact formats rely on.
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

// ---------------------------------------------------------------------------
// CSV. Quoted fields with doubled quotes are supported; embedded newlines are
// not (no input format here needs them).
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c == '\r') {
            // ignore
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(path.string());
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            t.rows.push_back(std::move(fields));
        }
    }
    return t;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError(path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// RNG. splitmix64 core with explicit double/normal draws so that generated
// cohorts and trained models are bit-reproducible across standard libraries.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free modulo bias is negligible for our n; keep it simple
        // and deterministic.
        return next_u64() % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream, e.g. one per user.
    Rng fork(std::uint64_t salt) {
        std::uint64_t s = next_u64() ^ (salt * 0x9e3779b97f4a7c15ull + 0x1234567);
        return Rng(s);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used for config fingerprints embedded in artifacts.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Round half away from zero to one decimal, the convention for emitted
// percentages.
inline double round1(double x) {
    return (x < 0 ? -1.0 : 1.0) * std::floor(std::abs(x) * 10.0 + 0.5) / 10.0;
}

}  // namespace vitalcast
