#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace collab {

using Timestamp = std::chrono::sys_seconds;

// Strict ISO-8601 UTC, second resolution: YYYY-MM-DDThh:mm:ssZ.
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

// Advance by calendar months keeping the time of day. A day that does not
// exist in the target month is clamped to that month's last day
// (Jan 31 + 1 month = Feb 28/29).
Timestamp add_months(Timestamp t, int months);

// Whole days from `from` to `to`, rounded toward negative infinity.
std::int64_t whole_days_between(Timestamp from, Timestamp to);

}  // namespace collab
