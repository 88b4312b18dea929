#pragma once

// Collaboration groups and the per-group / per-membership quantities derived
// from windowed events: work, group size, effective group size (2^H of the
// members' work shares), aggregate focus and the profile features used as
// regression confounds.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "collab/feature_matrix.hpp"
#include "collab/ingest.hpp"
#include "collab/mode.hpp"

namespace collab {

struct GroupRecord {
    std::string project_id;
    std::map<std::string, std::int64_t> member_work;   // user -> events in window
    std::map<std::string, std::int64_t> member_bytes;  // user -> summed size_bytes
    std::int64_t size = 0;         // N
    std::int64_t total_work = 0;   // W
    double effective_size = 1.0;   // n
    double mean_work = 0.0;        // W / N
    Timestamp first_event{};
    Timestamp last_event{};
    bool over_cap = false;         // N above the mode's cap; kept but flagged
};

struct GroupOptions {
    std::int64_t size_cap = 20;

    static GroupOptions for_mode(Mode mode);
};

std::vector<GroupRecord> build_groups(std::span<const ContributionEvent> events, const GroupOptions& options = {});

// n = 2^H with H = -sum f_i log2 f_i and f_i = w_i / W.
double effective_group_size(std::span<const std::int64_t> member_work);
double effective_group_size(const std::map<std::string, std::int64_t>& member_work);

// Per-user total work across every group in the dataset.
using UserTotals = std::unordered_map<std::string, std::int64_t>;
UserTotals user_total_work(std::span<const GroupRecord> groups);

// F = sum over members of w_i(this project) / sum_k w_i,k.
double aggregate_focus(const GroupRecord& group, const UserTotals& totals);

// One (user, project) membership with every regression feature.
struct UserProjectRow {
    std::string user_id;
    std::string project_id;
    double w = 0;                 // work on this project
    double group_size = 0;        // N
    double effective_size = 0;    // n
    double focus_share = 0;       // c_i
    double aggregate_focus = 0;   // F of the group
    double n_projects = 0;        // G_s
    double user_work = 0;         // user's total work, all projects
    double group_work = 0;        // W of the group
    double n_max = 0;
    double n_min = 0;
    double n_mean = 0;            // average size of the user's groups
    double user_age = 0;          // A_u, days
    double project_age = 0;       // A_r / A_p, days
    double watchers = 0;
    double forks = 0;
    double followers = 0;
    double owned_repos = 0;
    double description_len = 0;
    double created_pages = 0;
    double edit_size = 0;         // E_s, bytes
    bool over_cap = false;
};

// Numeric feature names usable as FeatureMatrix columns, in declaration order.
const std::vector<std::string>& row_feature_names();
double row_feature(const UserProjectRow& row, std::string_view name);
// Short math symbol for a feature (e.g. "group_size" -> "N").
std::string feature_notation(std::string_view name);

FeatureMatrix rows_to_matrix(std::span<const UserProjectRow> rows, std::span<const std::string> columns);

struct AssembleOptions {
    // End of the data range for user ages; defaults to the latest event.
    std::optional<Timestamp> data_end;
    double default_fill = 0.0;
};

struct RowAssembly {
    std::vector<UserProjectRow> rows;
    std::size_t missing_project_profiles = 0;
    std::size_t missing_user_profiles = 0;
};

// Rows are ordered by (project_id, user_id).
RowAssembly assemble_rows(std::span<const GroupRecord> groups, const ProjectIndex& projects, const UserIndex& users,
                          const AssembleOptions& options = {});

// Group-level table used for the group-performance regression.
struct GroupFeatureRow {
    std::string project_id;
    double group_size = 0;
    double total_work = 0;
    double effective_size = 0;
    double mean_work = 0;
    double aggregate_focus = 0;
    double mean_focus_share = 0;
    double mean_n_projects = 0;
    double watchers = 0;
    double forks = 0;
    double description_len = 0;
    double project_age = 0;
    bool over_cap = false;
};

const std::vector<std::string>& group_feature_names();
double group_feature(const GroupFeatureRow& row, std::string_view name);
std::vector<GroupFeatureRow> assemble_group_rows(std::span<const GroupRecord> groups,
                                                 std::span<const UserProjectRow> rows);
FeatureMatrix group_rows_to_matrix(std::span<const GroupFeatureRow> rows, std::span<const std::string> columns);

std::map<std::int64_t, std::int64_t> group_size_distribution(std::span<const GroupRecord> groups);

// groups.csv / rows.csv interchange files.
std::string serialize_group_rows(std::span<const GroupFeatureRow> rows);
std::string serialize_rows(std::span<const UserProjectRow> rows);
std::vector<UserProjectRow> parse_rows(std::string_view csv_text);
std::vector<UserProjectRow> load_rows(const std::filesystem::path& path);

}  // namespace collab
