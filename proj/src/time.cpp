#include "rainex/time.hpp"

#include <chrono>
#include <cstdio>

#include "rainex/error.hpp"

namespace rainex {

namespace {

int parse_digits(std::string_view s, std::size_t pos, std::size_t n, std::string_view whole) {
    if (pos + n > s.size()) throw DataError("malformed time '" + std::string(whole) + "'");
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        char c = s[i];
        if (c < '0' || c > '9') throw DataError("malformed time '" + std::string(whole) + "'");
        v = v * 10 + (c - '0');
    }
    return v;
}

void expect_char(std::string_view s, std::size_t pos, std::string_view allowed, std::string_view whole) {
    if (pos >= s.size() || allowed.find(s[pos]) == std::string_view::npos)
        throw DataError("malformed time '" + std::string(whole) + "'");
}

}  // namespace

CivilTime to_civil(Timestamp t) {
    using namespace std::chrono;
    Timestamp days_since = t >= 0 ? t / kDay : -((-t + kDay - 1) / kDay);
    Timestamp rem = t - days_since * kDay;
    year_month_day ymd{sys_days{days{days_since}}};
    CivilTime c;
    c.year = int(ymd.year());
    c.month = unsigned(ymd.month());
    c.day = unsigned(ymd.day());
    c.hour = unsigned(rem / kHour);
    c.minute = unsigned((rem % kHour) / kMinute);
    c.second = unsigned(rem % kMinute);
    return c;
}

Timestamp from_civil(const CivilTime& c) {
    using namespace std::chrono;
    year_month_day ymd{year{c.year}, month{c.month}, day{c.day}};
    if (!ymd.ok() || c.hour > 23 || c.minute > 59 || c.second > 59)
        throw DataError("invalid calendar time");
    Timestamp d = sys_days{ymd}.time_since_epoch().count();
    return d * kDay + Timestamp(c.hour) * kHour + Timestamp(c.minute) * kMinute + c.second;
}

Timestamp parse_iso8601(std::string_view s) {
    CivilTime c;
    c.year = parse_digits(s, 0, 4, s);
    expect_char(s, 4, "-", s);
    c.month = unsigned(parse_digits(s, 5, 2, s));
    expect_char(s, 7, "-", s);
    c.day = unsigned(parse_digits(s, 8, 2, s));
    expect_char(s, 10, "T ", s);
    c.hour = unsigned(parse_digits(s, 11, 2, s));
    expect_char(s, 13, ":", s);
    c.minute = unsigned(parse_digits(s, 14, 2, s));
    std::size_t pos = 16;
    if (pos < s.size() && s[pos] == ':') {
        c.second = unsigned(parse_digits(s, 17, 2, s));
        pos = 19;
    }
    if (pos < s.size() && s[pos] == 'Z') ++pos;
    if (pos != s.size()) throw DataError("malformed time '" + std::string(s) + "'");
    return from_civil(c);
}

std::string format_iso8601(Timestamp t) {
    CivilTime c = to_civil(t);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02u:%02u:%02uZ", c.year, c.month, c.day, c.hour,
                  c.minute, c.second);
    return buf;
}

}  // namespace rainex
