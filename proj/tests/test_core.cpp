#include <gtest/gtest.h>

#include <ctime>
#include <random>

#include "rainex/binary_io.hpp"
#include "rainex/csv.hpp"
#include "rainex/error.hpp"
#include "rainex/parallel.hpp"
#include "rainex/time.hpp"
#include "test_support.hpp"

using namespace rainex;

TEST(Time, CivilMatchesTimegm) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<std::int64_t> dist(-2'000'000'000LL, 4'000'000'000LL);
    for (int i = 0; i < 2000; ++i) {
        Timestamp t = dist(rng);
        CivilTime c = to_civil(t);
        std::tm tm{};
        tm.tm_year = c.year - 1900;
        tm.tm_mon = int(c.month) - 1;
        tm.tm_mday = int(c.day);
        tm.tm_hour = int(c.hour);
        tm.tm_min = int(c.minute);
        tm.tm_sec = int(c.second);
        EXPECT_EQ(Timestamp(timegm(&tm)), t);
        EXPECT_EQ(from_civil(c), t);
    }
}

TEST(Time, ParseAndFormat) {
    EXPECT_EQ(parse_iso8601("2021-01-01T00:00"), 1'609'459'200);
    EXPECT_EQ(parse_iso8601("2021-01-01 00:00:00Z"), 1'609'459'200);
    EXPECT_EQ(parse_iso8601("2020-02-29T12:30:15"), 1'582'979'415);
    EXPECT_EQ(format_iso8601(1'582'979'415), "2020-02-29T12:30:15Z");
    EXPECT_EQ(parse_iso8601(format_iso8601(1'234'567'890)), 1'234'567'890);
    EXPECT_THROW(parse_iso8601("2021-13-01T00:00"), DataError);
    EXPECT_THROW(parse_iso8601("2021-02-30T00:00"), DataError);
    EXPECT_THROW(parse_iso8601("yesterday"), DataError);
    EXPECT_THROW(parse_iso8601("2021-01-01T00:00junk"), DataError);
    EXPECT_TRUE(on_frame_lattice(1'609'459'200 + 600));
    EXPECT_FALSE(on_frame_lattice(1'609'459'200 + 60));
}

TEST(BinaryIo, RoundTripAndErrors) {
    testkit::TempDir dir;
    auto path = dir / "x.bin";
    io::BinaryWriter w(path);
    w.magic("TEST");
    w.put<std::uint32_t>(7);
    w.put<double>(-2.5);
    std::vector<std::int16_t> arr{-30000, 0, 32767};
    w.put_array<std::int16_t>(arr);
    w.put_string("hello");
    EXPECT_FALSE(std::filesystem::exists(path));  // nothing visible before commit
    w.commit();

    io::BinaryReader r(path);
    r.expect_magic("TEST");
    EXPECT_EQ(r.get<std::uint32_t>(), 7u);
    EXPECT_EQ(r.get<double>(), -2.5);
    std::vector<std::int16_t> back(3);
    r.get_array<std::int16_t>(back);
    EXPECT_EQ(back, arr);
    EXPECT_EQ(r.get_string(), "hello");
    EXPECT_TRUE(r.at_end());
    EXPECT_NO_THROW(r.expect_end());
    EXPECT_THROW(r.get<std::uint8_t>(), FormatError);

    io::BinaryReader bad(path);
    EXPECT_THROW(bad.expect_magic("NOPE"), FormatError);
    EXPECT_THROW(io::BinaryReader(dir / "missing.bin"), MissingArtifact);

    // truncation anywhere is a format error
    auto bytes = testkit::slurp(path);
    testkit::spit(dir / "t.bin", bytes.substr(0, bytes.size() - 3));
    io::BinaryReader t(dir / "t.bin");
    t.expect_magic("TEST");
    t.get<std::uint32_t>();
    t.get<double>();
    t.get_array<std::int16_t>(back);
    EXPECT_THROW(t.get_string(), FormatError);
}

TEST(Csv, SplitEscapeRoundTrip) {
    std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", "", "multi\nline"};
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv::escape(fields[i]);
    EXPECT_EQ(csv::split_line(line), fields);
    EXPECT_EQ(csv::escape("abc"), "abc");
    EXPECT_EQ(csv::escape("a,b"), "\"a,b\"");
}

TEST(Csv, ReadChecksHeader) {
    testkit::TempDir dir;
    testkit::spit(dir / "a.csv", "x,y\n1,2\n3,4\n");
    auto rows = csv::read(dir / "a.csv", {"x", "y"});
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1][0], "3");
    EXPECT_THROW(csv::read(dir / "a.csv", {"x", "z"}), FormatError);
    testkit::spit(dir / "b.csv", "x,y\n1,2,3\n");
    EXPECT_THROW(csv::read(dir / "b.csv", {"x", "y"}), FormatError);
    EXPECT_THROW(csv::read(dir / "none.csv", {"x"}), MissingArtifact);
}

TEST(Parallel, CoversRangeOnceAndRethrows) {
    for (unsigned threads : {1u, 3u, 8u}) {
        std::vector<int> hits(101, 0);
        parallel_each(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
        for (int h : hits) EXPECT_EQ(h, 1);
    }
    EXPECT_THROW(parallel_each(10, 4,
                               [](std::size_t i) {
                                   if (i == 7) throw DataError("boom");
                               }),
                 DataError);
}
