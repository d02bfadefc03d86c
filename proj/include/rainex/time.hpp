#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace rainex {

/// UTC instant in whole seconds since the Unix epoch.
using Timestamp = std::int64_t;

inline constexpr Timestamp kMinute = 60;
inline constexpr Timestamp kHour = 3600;
inline constexpr Timestamp kDay = 86400;
inline constexpr Timestamp kFrameStep = 10 * kMinute;

struct CivilTime {
    int year = 1970;
    unsigned month = 1;  // 1..12
    unsigned day = 1;    // 1..31
    unsigned hour = 0;
    unsigned minute = 0;
    unsigned second = 0;
};

CivilTime to_civil(Timestamp t);
Timestamp from_civil(const CivilTime& c);

/// Parses "YYYY-MM-DDTHH:MM[:SS][Z]" (a space may replace 'T'). Throws DataError.
Timestamp parse_iso8601(std::string_view text);

/// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601(Timestamp t);

inline bool on_frame_lattice(Timestamp t) { return t % kFrameStep == 0; }

}  // namespace rainex
