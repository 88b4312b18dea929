#pragma once

// Event-log and profile ingestion, exclusion rules, project-relative time
// windows and activity-fraction diagnostics.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "collab/time.hpp"

namespace collab {

// One push (GitHub) or edit (Wikipedia).
struct ContributionEvent {
    std::string user_id;
    std::string project_id;
    Timestamp timestamp{};
    std::optional<std::int64_t> size_bytes;  // edit size, Wikipedia only
    bool is_bot = false;

    bool operator==(const ContributionEvent&) const = default;
};

struct ProjectProfile {
    std::string project_id;
    Timestamp created_at{};
    std::int64_t watchers = 0;
    std::int64_t forks = 0;
    std::int64_t description_len = 0;
    bool is_redirect = false;

    bool operator==(const ProjectProfile&) const = default;
};

struct UserProfile {
    std::string user_id;
    Timestamp account_created_at{};
    std::int64_t followers = 0;
    std::int64_t owned_repos = 0;
    std::int64_t created_pages = 0;

    bool operator==(const UserProfile&) const = default;
};

// Analysis window length in whole calendar months, measured from each
// project's creation.
struct TimeWindow {
    int months = 3;

    explicit TimeWindow(int m = 3);
};

using ProjectIndex = std::unordered_map<std::string, ProjectProfile>;
using UserIndex = std::unordered_map<std::string, UserProfile>;

ProjectIndex index_projects(std::span<const ProjectProfile> projects);
UserIndex index_users(std::span<const UserProfile> users);

enum class EventFormat { csv, jsonl };
EventFormat parse_event_format(std::string_view text);

struct MalformedRow {
    std::size_t line = 0;
    std::string reason;
};

struct EventLoadResult {
    std::vector<ContributionEvent> events;
    std::vector<MalformedRow> malformed;
};

struct LoadOptions {
    // Loading fails when malformed / total rows exceeds this fraction.
    double max_malformed_fraction = 0.01;
};

EventLoadResult load_events(const std::filesystem::path& path, EventFormat format,
                            const LoadOptions& options = {});
EventLoadResult parse_events(std::string_view text, EventFormat format, const LoadOptions& options = {});
std::string serialize_events(std::span<const ContributionEvent> events, EventFormat format);
void write_events(const std::filesystem::path& path, std::span<const ContributionEvent> events,
                  EventFormat format);

// Profile tables are CSV with a header naming the struct fields
// (project_id,created_at,watchers,forks,description_len,is_redirect and
// user_id,account_created_at,followers,owned_repos,created_pages).
std::vector<ProjectProfile> load_project_profiles(const std::filesystem::path& path);
std::vector<UserProfile> load_user_profiles(const std::filesystem::path& path);
std::string serialize_project_profiles(std::span<const ProjectProfile> projects);
std::string serialize_user_profiles(std::span<const UserProfile> users);

// One user id per line; blank lines and '#' comments ignored.
std::unordered_set<std::string> load_id_list(const std::filesystem::path& path);

// Sets is_bot on every event whose user is in `bots`.
void mark_bots(std::vector<ContributionEvent>& events, const std::unordered_set<std::string>& bots);

enum class UnknownProjectPolicy { drop, fatal };

struct WindowResult {
    std::vector<ContributionEvent> events;
    std::size_t dropped_bot = 0;
    std::size_t dropped_redirect = 0;
    std::size_t dropped_unknown_project = 0;
    std::size_t outside_window = 0;
};

// Keeps events with created_at <= timestamp < add_months(created_at, t),
// after removing bot events and events on redirect projects. Input order is
// preserved.
WindowResult filter_window(std::span<const ContributionEvent> events, const ProjectIndex& projects,
                           TimeWindow window, UnknownProjectPolicy policy = UnknownProjectPolicy::drop);

// Horizon length; std::nullopt is the infinite horizon.
using Horizon = std::optional<std::chrono::seconds>;

struct ActivityFraction {
    Horizon horizon;
    double fraction = 0.0;
};

// Cumulative fraction of events whose offset from their project's creation
// lies in [0, horizon]. Events on unknown projects are ignored.
std::vector<ActivityFraction> compute_activity_fraction(std::span<const ContributionEvent> events,
                                                        const ProjectIndex& projects,
                                                        std::span<const Horizon> horizons);

}  // namespace collab
