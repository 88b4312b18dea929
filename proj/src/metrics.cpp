#include "collab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "collab/csv.hpp"
#include "collab/error.hpp"
#include "collab/io.hpp"

namespace collab {

GroupOptions GroupOptions::for_mode(Mode mode) {
    return GroupOptions{mode == Mode::github ? 20 : 70};
}

double effective_group_size(std::span<const std::int64_t> member_work) {
    if (member_work.empty()) throw Error("effective group size of an empty group");
    double total = 0.0;
    bool uniform = true;
    for (auto w : member_work) {
        if (w < 1) throw Error("member work must be at least 1");
        total += static_cast<double>(w);
        uniform = uniform && w == member_work.front();
    }
    const double n_members = static_cast<double>(member_work.size());
    if (uniform) return n_members;
    double entropy = 0.0;
    for (auto w : member_work) {
        const double f = static_cast<double>(w) / total;
        entropy -= f * std::log2(f);
    }
    return std::clamp(std::exp2(entropy), 1.0, n_members);
}

double effective_group_size(const std::map<std::string, std::int64_t>& member_work) {
    std::vector<std::int64_t> work;
    work.reserve(member_work.size());
    for (const auto& [user, w] : member_work) work.push_back(w);
    return effective_group_size(work);
}

std::vector<GroupRecord> build_groups(std::span<const ContributionEvent> events, const GroupOptions& options) {
    std::map<std::string, GroupRecord> by_project;
    for (const auto& ev : events) {
        auto [it, inserted] = by_project.try_emplace(ev.project_id);
        GroupRecord& g = it->second;
        if (inserted) {
            g.project_id = ev.project_id;
            g.first_event = ev.timestamp;
            g.last_event = ev.timestamp;
        }
        ++g.member_work[ev.user_id];
        g.member_bytes[ev.user_id] += ev.size_bytes.value_or(0);
        g.first_event = std::min(g.first_event, ev.timestamp);
        g.last_event = std::max(g.last_event, ev.timestamp);
    }
    std::vector<GroupRecord> groups;
    groups.reserve(by_project.size());
    for (auto& [project, g] : by_project) {
        g.size = static_cast<std::int64_t>(g.member_work.size());
        g.total_work = 0;
        for (const auto& [user, w] : g.member_work) g.total_work += w;
        g.effective_size = effective_group_size(g.member_work);
        g.mean_work = static_cast<double>(g.total_work) / static_cast<double>(g.size);
        g.over_cap = g.size > options.size_cap;
        groups.push_back(std::move(g));
    }
    return groups;
}

UserTotals user_total_work(std::span<const GroupRecord> groups) {
    UserTotals totals;
    for (const auto& g : groups) {
        for (const auto& [user, w] : g.member_work) totals[user] += w;
    }
    return totals;
}

double aggregate_focus(const GroupRecord& group, const UserTotals& totals) {
    double focus = 0.0;
    for (const auto& [user, w] : group.member_work) {
        auto it = totals.find(user);
        if (it == totals.end() || it->second < w || it->second <= 0) {
            throw Error("user '" + user + "' has total work below their work on " + group.project_id);
        }
        focus += static_cast<double>(w) / static_cast<double>(it->second);
    }
    return focus;
}

namespace {

using RowField = double UserProjectRow::*;

const std::vector<std::pair<std::string, RowField>>& row_fields() {
    static const std::vector<std::pair<std::string, RowField>> fields = {
        {"w", &UserProjectRow::w},
        {"group_size", &UserProjectRow::group_size},
        {"effective_size", &UserProjectRow::effective_size},
        {"focus_share", &UserProjectRow::focus_share},
        {"aggregate_focus", &UserProjectRow::aggregate_focus},
        {"n_projects", &UserProjectRow::n_projects},
        {"user_work", &UserProjectRow::user_work},
        {"group_work", &UserProjectRow::group_work},
        {"n_max", &UserProjectRow::n_max},
        {"n_min", &UserProjectRow::n_min},
        {"n_mean", &UserProjectRow::n_mean},
        {"user_age", &UserProjectRow::user_age},
        {"project_age", &UserProjectRow::project_age},
        {"watchers", &UserProjectRow::watchers},
        {"forks", &UserProjectRow::forks},
        {"followers", &UserProjectRow::followers},
        {"owned_repos", &UserProjectRow::owned_repos},
        {"description_len", &UserProjectRow::description_len},
        {"created_pages", &UserProjectRow::created_pages},
        {"edit_size", &UserProjectRow::edit_size},
    };
    return fields;
}

using GroupField = double GroupFeatureRow::*;

const std::vector<std::pair<std::string, GroupField>>& group_fields() {
    static const std::vector<std::pair<std::string, GroupField>> fields = {
        {"group_size", &GroupFeatureRow::group_size},
        {"total_work", &GroupFeatureRow::total_work},
        {"effective_size", &GroupFeatureRow::effective_size},
        {"mean_work", &GroupFeatureRow::mean_work},
        {"aggregate_focus", &GroupFeatureRow::aggregate_focus},
        {"mean_focus_share", &GroupFeatureRow::mean_focus_share},
        {"mean_n_projects", &GroupFeatureRow::mean_n_projects},
        {"watchers", &GroupFeatureRow::watchers},
        {"forks", &GroupFeatureRow::forks},
        {"description_len", &GroupFeatureRow::description_len},
        {"project_age", &GroupFeatureRow::project_age},
    };
    return fields;
}

template <typename Fields>
auto find_field(const Fields& fields, std::string_view name) {
    for (const auto& [n, ptr] : fields) {
        if (n == name) return ptr;
    }
    throw Error("unknown feature '" + std::string(name) + "'");
}

}  // namespace

const std::vector<std::string>& row_feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [n, ptr] : row_fields()) out.push_back(n);
        return out;
    }();
    return names;
}

double row_feature(const UserProjectRow& row, std::string_view name) {
    return row.*find_field(row_fields(), name);
}

std::string feature_notation(std::string_view name) {
    static const std::map<std::string, std::string, std::less<>> symbols = {
        {"w", "w"},
        {"group_size", "N"},
        {"effective_size", "n"},
        {"focus_share", "c"},
        {"aggregate_focus", "F"},
        {"mean_focus_share", "F_bar"},
        {"n_projects", "G_s"},
        {"mean_n_projects", "G_s_bar"},
        {"user_work", "W_user"},
        {"group_work", "W"},
        {"total_work", "W"},
        {"mean_work", "W_bar"},
        {"n_max", "N_max"},
        {"n_min", "N_min"},
        {"n_mean", "N_bar"},
        {"user_age", "A_u"},
        {"project_age", "A_r"},
        {"watchers", "W_c"},
        {"forks", "F_o"},
        {"followers", "F_l"},
        {"owned_repos", "O_r"},
        {"description_len", "D_sc"},
        {"created_pages", "P_c"},
        {"edit_size", "E_s"},
    };
    auto it = symbols.find(name);
    return it == symbols.end() ? std::string(name) : it->second;
}

FeatureMatrix rows_to_matrix(std::span<const UserProjectRow> rows, std::span<const std::string> columns) {
    std::vector<RowField> ptrs;
    for (const auto& c : columns) ptrs.push_back(find_field(row_fields(), c));
    FeatureMatrix m(std::vector<std::string>(columns.begin(), columns.end()), rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < ptrs.size(); ++c) m.at(r, c) = rows[r].*ptrs[c];
    }
    return m;
}

RowAssembly assemble_rows(std::span<const GroupRecord> groups, const ProjectIndex& projects, const UserIndex& users,
                          const AssembleOptions& options) {
    RowAssembly out;
    if (groups.empty()) return out;

    Timestamp data_end = groups.front().last_event;
    for (const auto& g : groups) data_end = std::max(data_end, g.last_event);
    if (options.data_end) data_end = *options.data_end;

    struct UserStats {
        std::int64_t total = 0;
        std::int64_t groups = 0;
        std::int64_t n_max = std::numeric_limits<std::int64_t>::min();
        std::int64_t n_min = std::numeric_limits<std::int64_t>::max();
        std::int64_t size_sum = 0;
    };
    std::unordered_map<std::string, UserStats> stats;
    for (const auto& g : groups) {
        for (const auto& [user, w] : g.member_work) {
            auto& s = stats[user];
            s.total += w;
            ++s.groups;
            s.n_max = std::max(s.n_max, g.size);
            s.n_min = std::min(s.n_min, g.size);
            s.size_sum += g.size;
        }
    }
    UserTotals totals;
    for (const auto& [user, s] : stats) totals[user] = s.total;

    const double fill = options.default_fill;
    for (const auto& g : groups) {
        const double focus = aggregate_focus(g, totals);
        auto pit = projects.find(g.project_id);
        const ProjectProfile* project = pit == projects.end() ? nullptr : &pit->second;
        if (!project) ++out.missing_project_profiles;
        for (const auto& [user, w] : g.member_work) {
            const auto& s = stats.at(user);
            UserProjectRow row;
            row.user_id = user;
            row.project_id = g.project_id;
            row.w = static_cast<double>(w);
            row.group_size = static_cast<double>(g.size);
            row.effective_size = g.effective_size;
            row.focus_share = static_cast<double>(w) / static_cast<double>(s.total);
            row.aggregate_focus = focus;
            row.n_projects = static_cast<double>(s.groups);
            row.user_work = static_cast<double>(s.total);
            row.group_work = static_cast<double>(g.total_work);
            row.n_max = static_cast<double>(s.n_max);
            row.n_min = static_cast<double>(s.n_min);
            row.n_mean = static_cast<double>(s.size_sum) / static_cast<double>(s.groups);
            row.edit_size = static_cast<double>(g.member_bytes.at(user));
            row.over_cap = g.over_cap;
            if (project) {
                row.project_age = static_cast<double>(whole_days_between(project->created_at, g.last_event));
                row.watchers = static_cast<double>(project->watchers);
                row.forks = static_cast<double>(project->forks);
                row.description_len = static_cast<double>(project->description_len);
            } else {
                row.project_age = row.watchers = row.forks = row.description_len = fill;
            }
            auto uit = users.find(user);
            if (uit != users.end()) {
                row.user_age = static_cast<double>(whole_days_between(uit->second.account_created_at, data_end));
                row.followers = static_cast<double>(uit->second.followers);
                row.owned_repos = static_cast<double>(uit->second.owned_repos);
                row.created_pages = static_cast<double>(uit->second.created_pages);
            } else {
                ++out.missing_user_profiles;
                row.user_age = row.followers = row.owned_repos = row.created_pages = fill;
            }
            out.rows.push_back(std::move(row));
        }
    }
    return out;
}

const std::vector<std::string>& group_feature_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [n, ptr] : group_fields()) out.push_back(n);
        return out;
    }();
    return names;
}

double group_feature(const GroupFeatureRow& row, std::string_view name) {
    return row.*find_field(group_fields(), name);
}

std::vector<GroupFeatureRow> assemble_group_rows(std::span<const GroupRecord> groups,
                                                 std::span<const UserProjectRow> rows) {
    struct Acc {
        double focus_share = 0, n_projects = 0, count = 0;
        const UserProjectRow* any = nullptr;
    };
    std::unordered_map<std::string, Acc> acc;
    for (const auto& r : rows) {
        auto& a = acc[r.project_id];
        a.focus_share += r.focus_share;
        a.n_projects += r.n_projects;
        a.count += 1;
        a.any = &r;
    }
    std::vector<GroupFeatureRow> out;
    out.reserve(groups.size());
    for (const auto& g : groups) {
        auto it = acc.find(g.project_id);
        if (it == acc.end()) throw Error("no membership rows for project '" + g.project_id + "'");
        const Acc& a = it->second;
        GroupFeatureRow row;
        row.project_id = g.project_id;
        row.group_size = static_cast<double>(g.size);
        row.total_work = static_cast<double>(g.total_work);
        row.effective_size = g.effective_size;
        row.mean_work = g.mean_work;
        row.aggregate_focus = a.any->aggregate_focus;
        row.mean_focus_share = a.focus_share / a.count;
        row.mean_n_projects = a.n_projects / a.count;
        row.watchers = a.any->watchers;
        row.forks = a.any->forks;
        row.description_len = a.any->description_len;
        row.project_age = a.any->project_age;
        row.over_cap = g.over_cap;
        out.push_back(std::move(row));
    }
    return out;
}

FeatureMatrix group_rows_to_matrix(std::span<const GroupFeatureRow> rows, std::span<const std::string> columns) {
    std::vector<GroupField> ptrs;
    for (const auto& c : columns) ptrs.push_back(find_field(group_fields(), c));
    FeatureMatrix m(std::vector<std::string>(columns.begin(), columns.end()), rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < ptrs.size(); ++c) m.at(r, c) = rows[r].*ptrs[c];
    }
    return m;
}

std::map<std::int64_t, std::int64_t> group_size_distribution(std::span<const GroupRecord> groups) {
    std::map<std::int64_t, std::int64_t> histogram;
    for (const auto& g : groups) ++histogram[g.size];
    return histogram;
}

std::string serialize_group_rows(std::span<const GroupFeatureRow> rows) {
    std::vector<std::string> header = {"project_id"};
    for (const auto& n : group_feature_names()) header.push_back(n);
    header.push_back("over_cap");
    std::string out = join_csv(header) + "\n";
    for (const auto& r : rows) {
        std::vector<std::string> fields = {r.project_id};
        for (const auto& [n, ptr] : group_fields()) fields.push_back(format_number(r.*ptr));
        fields.push_back(r.over_cap ? "1" : "0");
        out += join_csv(fields) + "\n";
    }
    return out;
}

std::string serialize_rows(std::span<const UserProjectRow> rows) {
    std::vector<std::string> header = {"user_id", "project_id"};
    for (const auto& n : row_feature_names()) header.push_back(n);
    header.push_back("over_cap");
    std::string out = join_csv(header) + "\n";
    for (const auto& r : rows) {
        std::vector<std::string> fields = {r.user_id, r.project_id};
        for (const auto& [n, ptr] : row_fields()) fields.push_back(format_number(r.*ptr));
        fields.push_back(r.over_cap ? "1" : "0");
        out += join_csv(fields) + "\n";
    }
    return out;
}

std::vector<UserProjectRow> parse_rows(std::string_view csv_text) {
    const CsvTable table = parse_csv(csv_text);
    const auto cu = table.require_column("user_id");
    const auto cp = table.require_column("project_id");
    std::vector<std::pair<std::size_t, RowField>> cols;
    for (const auto& [n, ptr] : row_fields()) cols.emplace_back(table.require_column(n), ptr);
    const auto cap = table.column("over_cap");
    std::vector<UserProjectRow> rows;
    rows.reserve(table.records.size());
    for (const auto& rec : table.records) {
        if (rec.fields.size() != table.header.size()) {
            throw InputError("rows.csv line " + std::to_string(rec.line) + ": wrong field count");
        }
        UserProjectRow r;
        r.user_id = rec.fields[cu];
        r.project_id = rec.fields[cp];
        for (const auto& [idx, ptr] : cols) r.*ptr = parse_number(rec.fields[idx]);
        r.over_cap = cap != std::string::npos && rec.fields[cap] == "1";
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<UserProjectRow> load_rows(const std::filesystem::path& path) {
    return parse_rows(read_text_file(path));
}

}  // namespace collab
