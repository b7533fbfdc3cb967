#include <catch_amalgamated.hpp>

#include <filesystem>

#include "vitalcast/streams.hpp"

using namespace vitalcast;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vitalcast_test_" + tag + "_" +
                                              std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_user_files(const fs::path& dir, const std::string& hr_rows,
                      const std::string& bbi_rows = "", const std::string& steps_rows = "",
                      const std::string& resp_rows = "", const std::string& stress_rows = "",
                      const std::string& sleep_rows = "") {
    write_text_file(dir / "hr.csv", "timestamp,bpm\n" + hr_rows);
    write_text_file(dir / "bbi.csv", "timestamp,interval_ms\n" + bbi_rows);
    write_text_file(dir / "steps.csv", "timestamp,count\n" + steps_rows);
    write_text_file(dir / "respiration.csv", "timestamp,brpm\n" + resp_rows);
    write_text_file(dir / "stress.csv", "timestamp,score\n" + stress_rows);
    write_text_file(dir / "sleep.csv", "timestamp,score\n" + sleep_rows);
}

}  // namespace

TEST_CASE("iso timestamp parsing round-trips") {
    auto m = parse_iso_minute("2025-03-01T08:15");
    REQUIRE(m.has_value());
    CHECK(format_iso_minute(*m) == "2025-03-01T08:15");
    CHECK(parse_iso_minute("2025-03-01T08:15:30").value() == *m);  // seconds truncated
    CHECK_FALSE(parse_iso_minute("garbage").has_value());
    CHECK_FALSE(parse_iso_minute("2025-13-01T00:00").has_value());

    auto d = parse_iso_date("1970-01-05");
    REQUIRE(d.has_value());
    CHECK(*d == 4);
    CHECK(weekday_of_minute(*d * kMinutesPerDay) == 0);  // 1970-01-05 was a Monday
}

TEST_CASE("hr rows pass through") {
    auto dir = make_temp_dir("passthrough");
    write_user_files(dir, "1970-01-01T00:00,62\n1970-01-01T00:01,63\n");
    ParseReport rep;
    StreamBundle b = parse_streams(dir, "u1", 0, rep);
    REQUIRE(b.hr.size() == 2);
    CHECK(b.hr[0].value == 62.0);
    CHECK(b.hr[1].minute == 1);
    CHECK(rep.streams["hr"].rows_kept == 2);
}

TEST_CASE("out-of-range stress rows are dropped and counted") {
    auto dir = make_temp_dir("stressrange");
    write_user_files(dir, "", "", "", "", "1970-01-01T00:00,140\n1970-01-01T00:03,55\n");
    ParseReport rep;
    StreamBundle b = parse_streams(dir, "u1", 0, rep);
    REQUIRE(b.stress.size() == 1);
    CHECK(b.stress[0].value == 55.0);
    CHECK(rep.streams["stress"].drops.at("out_of_range") == 1);
}

TEST_CASE("non-monotone bbi timestamps drop the later row") {
    auto dir = make_temp_dir("bbimono");
    write_user_files(dir, "", "1000,800\n900,810\n");
    ParseReport rep;
    StreamBundle b = parse_streams(dir, "u1", 0, rep);
    REQUIRE(b.bbi.size() == 1);
    CHECK(b.bbi[0].t_ms == 1000);
    CHECK(rep.streams["bbi"].drops.at("non_monotone_timestamp") == 1);
}

TEST_CASE("non-positive bbi intervals are dropped") {
    auto dir = make_temp_dir("bbirange");
    write_user_files(dir, "", "1000,800\n2000,-5\n3000,0\n");
    ParseReport rep;
    StreamBundle b = parse_streams(dir, "u1", 0, rep);
    REQUIRE(b.bbi.size() == 1);
    CHECK(rep.streams["bbi"].drops.at("out_of_range") == 2);
}

TEST_CASE("missing stream file is fatal") {
    auto dir = make_temp_dir("missing");
    write_text_file(dir / "hr.csv", "timestamp,bpm\n");
    ParseReport rep;
    CHECK_THROWS_AS(parse_streams(dir, "u1", 0, rep), MissingArtifactError);
}

TEST_CASE("utc offset shifts bbi into local time") {
    auto dir = make_temp_dir("offset");
    write_user_files(dir, "", "0,800\n");
    ParseReport rep;
    StreamBundle b = parse_streams(dir, "u1", -300, rep);  // UTC-5
    CHECK(b.bbi[0].t_ms == -300 * kMsPerMinute);
}

TEST_CASE("hr linear interpolation is exact at observed points and between") {
    StreamBundle b;
    b.user_id = "u";
    b.hr = {{0, 60.0}, {3, 66.0}};
    MinuteGrid g = align_minute_grid(b);
    REQUIRE(g.size() == 4);
    CHECK(g.hr.value[0] == 60.0);
    CHECK(g.hr.value[1] == Catch::Approx(62.0));
    CHECK(g.hr.value[2] == Catch::Approx(64.0));
    CHECK(g.hr.value[3] == 66.0);
    CHECK(g.hr.valid[1] == 1);
}

TEST_CASE("gaps longer than ten minutes are not interpolated") {
    StreamBundle b;
    b.user_id = "u";
    SECTION("exactly ten missing minutes are bridged") {
        b.hr = {{0, 60.0}, {11, 71.0}};
        MinuteGrid g = align_minute_grid(b);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.hr.valid[i] == 1);
        CHECK(g.hr.value[5] == Catch::Approx(65.0));
    }
    SECTION("eleven missing minutes stay invalid") {
        b.hr = {{0, 60.0}, {12, 72.0}};
        MinuteGrid g = align_minute_grid(b);
        CHECK(g.hr.valid[0] == 1);
        CHECK(g.hr.valid[12] == 1);
        for (std::size_t i = 1; i < 12; ++i) CHECK(g.hr.valid[i] == 0);
    }
}

TEST_CASE("respiration carry-forward caps at six minutes") {
    StreamBundle b;
    b.user_id = "u";
    b.respiration = {{0, 14.0}, {9, 16.0}};
    MinuteGrid g = align_minute_grid(b);
    for (std::size_t i = 1; i <= 6; ++i) {
        CHECK(g.respiration.valid[i] == 1);
        CHECK(g.respiration.value[i] == 14.0);
    }
    CHECK(g.respiration.valid[7] == 0);
    CHECK(g.respiration.valid[8] == 0);
    CHECK(g.respiration.valid[9] == 1);
}

TEST_CASE("carry-forward never crosses local midnight") {
    StreamBundle b;
    b.user_id = "u";
    std::int64_t m2358 = kMinutesPerDay - 2;  // 23:58 on day 0
    b.stress = {{m2358, 40.0}, {kMinutesPerDay + 4, 50.0}};
    MinuteGrid g = align_minute_grid(b);
    auto at = [&](std::int64_t minute) { return g.stress.valid[minute - g.start_minute]; };
    CHECK(at(m2358 + 1) == 1);               // 23:59 carried
    CHECK(at(kMinutesPerDay) == 0);          // 00:00 not carried
    CHECK(at(kMinutesPerDay + 1) == 0);
    CHECK(at(kMinutesPerDay + 3) == 0);
    CHECK(at(kMinutesPerDay + 4) == 1);      // next observation
    CHECK(g.day_start[kMinutesPerDay - g.start_minute] == 1);
}

TEST_CASE("empty bundle raises an empty-grid error") {
    StreamBundle b;
    b.user_id = "u";
    CHECK_THROWS_WITH(align_minute_grid(b), Catch::Matchers::ContainsSubstring("empty grid"));
}

TEST_CASE("alignment is idempotent on observed points") {
    StreamBundle b;
    b.user_id = "u";
    b.hr = {{0, 60.0}, {4, 64.0}, {20, 70.0}};
    b.respiration = {{0, 15.0}, {3, 16.0}};
    MinuteGrid g1 = align_minute_grid(b);
    // Re-run alignment on a bundle rebuilt from g1's valid minutes only.
    StreamBundle b2;
    b2.user_id = "u";
    for (std::size_t i = 0; i < g1.size(); ++i) {
        if (g1.hr.valid[i])
            b2.hr.push_back({g1.start_minute + static_cast<std::int64_t>(i), g1.hr.value[i]});
        if (g1.respiration.valid[i])
            b2.respiration.push_back(
                {g1.start_minute + static_cast<std::int64_t>(i), g1.respiration.value[i]});
    }
    MinuteGrid g2 = align_minute_grid(b2);
    for (const auto& s : b.hr) {
        CHECK(g2.hr.value[s.minute - g2.start_minute] == s.value);
    }
    for (const auto& s : b.respiration) {
        CHECK(g2.respiration.value[s.minute - g2.start_minute] == s.value);
    }
}

TEST_CASE("grid round-trips through csv bit-exactly") {
    StreamBundle b;
    b.user_id = "u";
    Rng rng(7);
    std::int64_t m = 0;
    for (int i = 0; i < 50; ++i) {
        m += 1 + static_cast<std::int64_t>(rng.below(4));
        b.hr.push_back({m, 55.0 + 40.0 * rng.uniform()});
        if (rng.uniform() < 0.4) b.steps.push_back({m, std::floor(rng.uniform() * 120.0)});
        if (m % 3 == 0) {
            b.respiration.push_back({m, 12.0 + 6.0 * rng.uniform()});
            b.stress.push_back({m, 100.0 * rng.uniform()});
        }
    }
    MinuteGrid g = align_minute_grid(b);
    auto dir = make_temp_dir("gridrt");
    write_text_file(dir / "grid.csv", grid_to_csv(g));
    MinuteGrid g2 = grid_from_csv(dir / "grid.csv", "u");

    REQUIRE(g2.size() == g.size());
    CHECK(g2.start_minute == g.start_minute);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g.hr.valid[i] == g2.hr.valid[i]);
        CHECK(g.hr.value[i] == g2.hr.value[i]);  // bit-exact
        CHECK(g.steps.valid[i] == g2.steps.valid[i]);
        CHECK(g.steps.value[i] == g2.steps.value[i]);
        CHECK(g.respiration.valid[i] == g2.respiration.valid[i]);
        CHECK(g.respiration.value[i] == g2.respiration.value[i]);
        CHECK(g.stress.valid[i] == g2.stress.valid[i]);
        CHECK(g.stress.value[i] == g2.stress.value[i]);
        CHECK(g.day_start[i] == g2.day_start[i]);
    }
}

TEST_CASE("tags parse, sort by end time, and map unknown categories to Other") {
    auto dir = make_temp_dir("tags");
    write_text_file(dir / "tags.csv",
                    "name,category,start,end,expected_effect\n"
                    "late run,Physical Activity: Cardio,1970-01-01T05:00,1970-01-01T05:30,positive\n"
                    "jog,Jogging!!,1970-01-01T02:00,1970-01-01T03:20,\n"
                    "bad,Other,1970-01-01T04:00,1970-01-01T04:00,neutral\n");
    ParseReport rep;
    auto tags = parse_tags(dir / "tags.csv", "userA", rep);
    REQUIRE(tags.size() == 2);
    CHECK(tags[0].name == "jog");  // ends 03:20, sorted first
    CHECK(tags[0].category == Category::Other);
    CHECK(tags[0].expected_effect == ExpectedEffect::Unknown);
    CHECK(tags[1].t1 == 5 * 60 + 30);
    CHECK(rep.tags_rejected == 1);  // t0 >= t1
    bool warned = false;
    for (const auto& w : rep.warnings) {
        if (w.find("Jogging!!") != std::string::npos) warned = true;
    }
    CHECK(warned);
}

TEST_CASE("tag record example from the contract") {
    auto dir = make_temp_dir("tagsbasic");
    write_text_file(dir / "tags.csv",
                    "name,category,start,end,expected_effect\n"
                    "run,Physical Activity: Cardio,1970-01-01T01:40,1970-01-01T02:10,positive\n");
    ParseReport rep;
    auto tags = parse_tags(dir / "tags.csv", "userA", rep);
    REQUIRE(tags.size() == 1);
    CHECK(tags[0].t0 == 100);
    CHECK(tags[0].t1 == 130);
    CHECK(tags[0].category == Category::PhysicalActivityCardio);
}
