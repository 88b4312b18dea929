#include "collab/ingest.hpp"

#include <algorithm>
#include <charconv>

#include <nlohmann/json.hpp>

#include "collab/csv.hpp"
#include "collab/error.hpp"
#include "collab/io.hpp"

namespace collab {

TimeWindow::TimeWindow(int m) : months(m) {
    if (m < 1) throw InputError("time window must be at least one month");
}

ProjectIndex index_projects(std::span<const ProjectProfile> projects) {
    ProjectIndex index;
    for (const auto& p : projects) index.insert_or_assign(p.project_id, p);
    return index;
}

UserIndex index_users(std::span<const UserProfile> users) {
    UserIndex index;
    for (const auto& u : users) index.insert_or_assign(u.user_id, u);
    return index;
}

EventFormat parse_event_format(std::string_view text) {
    if (text == "csv") return EventFormat::csv;
    if (text == "jsonl") return EventFormat::jsonl;
    throw InputError("unknown event format '" + std::string(text) + "' (expected csv or jsonl)");
}

namespace {

std::optional<std::int64_t> parse_count(std::string_view text) {
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || value < 0) return std::nullopt;
    return value;
}

std::optional<bool> parse_flag(std::string_view text) {
    if (text.empty() || text == "false" || text == "0") return false;
    if (text == "true" || text == "1") return true;
    return std::nullopt;
}

// Returns an error message, or empty on success.
std::string event_from_fields(std::string_view user, std::string_view project, std::string_view ts,
                              std::string_view size, std::string_view bot, ContributionEvent& out) {
    if (user.empty()) return "empty user_id";
    if (project.empty()) return "empty project_id";
    auto parsed = parse_timestamp(ts);
    if (!parsed) return "invalid timestamp '" + std::string(ts) + "'";
    out.user_id = std::string(user);
    out.project_id = std::string(project);
    out.timestamp = *parsed;
    out.size_bytes.reset();
    if (!size.empty()) {
        auto bytes = parse_count(size);
        if (!bytes) return "invalid size_bytes '" + std::string(size) + "'";
        out.size_bytes = *bytes;
    }
    auto flag = parse_flag(bot);
    if (!flag) return "invalid is_bot '" + std::string(bot) + "'";
    out.is_bot = *flag;
    return {};
}

void parse_csv_events(std::string_view text, EventLoadResult& result, std::size_t& total) {
    const CsvTable table = parse_csv(text);
    const std::size_t cu = table.require_column("user_id");
    const std::size_t cp = table.require_column("project_id");
    const std::size_t ct = table.require_column("timestamp");
    const std::size_t cs = table.column("size_bytes");
    const std::size_t cb = table.column("is_bot");
    for (const auto& rec : table.records) {
        ++total;
        if (rec.fields.size() != table.header.size()) {
            result.malformed.push_back({rec.line, "expected " + std::to_string(table.header.size()) +
                                                      " fields, got " + std::to_string(rec.fields.size())});
            continue;
        }
        auto field = [&](std::size_t idx) -> std::string_view {
            return idx == std::string::npos ? std::string_view{} : std::string_view{rec.fields[idx]};
        };
        ContributionEvent ev;
        auto err = event_from_fields(field(cu), field(cp), field(ct), field(cs), field(cb), ev);
        if (err.empty()) {
            result.events.push_back(std::move(ev));
        } else {
            result.malformed.push_back({rec.line, std::move(err)});
        }
    }
}

void parse_jsonl_events(std::string_view text, EventLoadResult& result, std::size_t& total) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        ++total;
        auto obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            result.malformed.push_back({line_no, "not a JSON object"});
            continue;
        }
        auto str = [&](const char* key) -> std::string {
            auto it = obj.find(key);
            return (it != obj.end() && it->is_string()) ? it->get<std::string>() : std::string{};
        };
        std::string size;
        if (auto it = obj.find("size_bytes"); it != obj.end() && !it->is_null()) {
            size = it->is_number_integer() ? std::to_string(it->get<std::int64_t>()) : it->dump();
        }
        std::string bot;
        if (auto it = obj.find("is_bot"); it != obj.end() && !it->is_null()) {
            bot = it->is_boolean() ? (it->get<bool>() ? "true" : "false") : it->dump();
        }
        ContributionEvent ev;
        auto err = event_from_fields(str("user_id"), str("project_id"), str("timestamp"), size, bot, ev);
        if (err.empty()) {
            result.events.push_back(std::move(ev));
        } else {
            result.malformed.push_back({line_no, std::move(err)});
        }
    }
}

}  // namespace

EventLoadResult parse_events(std::string_view text, EventFormat format, const LoadOptions& options) {
    EventLoadResult result;
    std::size_t total = 0;
    if (format == EventFormat::csv) {
        parse_csv_events(text, result, total);
    } else {
        parse_jsonl_events(text, result, total);
    }
    if (total > 0 &&
        static_cast<double>(result.malformed.size()) > options.max_malformed_fraction * static_cast<double>(total)) {
        std::string msg = std::to_string(result.malformed.size()) + " of " + std::to_string(total) +
                          " event rows are malformed; rows:";
        const std::size_t shown = std::min<std::size_t>(result.malformed.size(), 20);
        for (std::size_t i = 0; i < shown; ++i) {
            msg += " " + std::to_string(result.malformed[i].line) + " (" + result.malformed[i].reason + ")";
        }
        if (shown < result.malformed.size()) msg += " ...";
        throw InputError(msg);
    }
    return result;
}

EventLoadResult load_events(const std::filesystem::path& path, EventFormat format, const LoadOptions& options) {
    return parse_events(read_text_file(path), format, options);
}

std::string serialize_events(std::span<const ContributionEvent> events, EventFormat format) {
    std::string out;
    if (format == EventFormat::csv) {
        out = "user_id,project_id,timestamp,size_bytes,is_bot\n";
        for (const auto& ev : events) {
            out += join_csv({ev.user_id, ev.project_id, format_timestamp(ev.timestamp),
                             ev.size_bytes ? std::to_string(*ev.size_bytes) : std::string{},
                             ev.is_bot ? "true" : "false"});
            out.push_back('\n');
        }
        return out;
    }
    for (const auto& ev : events) {
        nlohmann::ordered_json obj;
        obj["user_id"] = ev.user_id;
        obj["project_id"] = ev.project_id;
        obj["timestamp"] = format_timestamp(ev.timestamp);
        obj["size_bytes"] = ev.size_bytes ? nlohmann::ordered_json(*ev.size_bytes) : nlohmann::ordered_json(nullptr);
        obj["is_bot"] = ev.is_bot;
        out += obj.dump();
        out.push_back('\n');
    }
    return out;
}

void write_events(const std::filesystem::path& path, std::span<const ContributionEvent> events,
                  EventFormat format) {
    write_file_atomic(path, serialize_events(events, format));
}

namespace {

Timestamp require_timestamp(std::string_view text, std::size_t line) {
    auto ts = parse_timestamp(text);
    if (!ts) throw InputError("line " + std::to_string(line) + ": invalid timestamp '" + std::string(text) + "'");
    return *ts;
}

std::int64_t require_count(std::string_view text, std::size_t line) {
    if (text.empty()) return 0;
    auto v = parse_count(text);
    if (!v) throw InputError("line " + std::to_string(line) + ": invalid count '" + std::string(text) + "'");
    return *v;
}

bool require_flag(std::string_view text, std::size_t line) {
    auto v = parse_flag(text);
    if (!v) throw InputError("line " + std::to_string(line) + ": invalid flag '" + std::string(text) + "'");
    return *v;
}

}  // namespace

std::vector<ProjectProfile> load_project_profiles(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    const auto cid = table.require_column("project_id");
    const auto ccreated = table.require_column("created_at");
    const auto cw = table.column("watchers");
    const auto cf = table.column("forks");
    const auto cd = table.column("description_len");
    const auto cr = table.column("is_redirect");
    std::vector<ProjectProfile> out;
    out.reserve(table.records.size());
    for (const auto& rec : table.records) {
        if (rec.fields.size() != table.header.size()) {
            throw InputError(path.string() + " line " + std::to_string(rec.line) + ": wrong field count");
        }
        auto field = [&](std::size_t idx) -> std::string_view {
            return idx == std::string::npos ? std::string_view{} : std::string_view{rec.fields[idx]};
        };
        ProjectProfile p;
        p.project_id = rec.fields[cid];
        p.created_at = require_timestamp(field(ccreated), rec.line);
        p.watchers = require_count(field(cw), rec.line);
        p.forks = require_count(field(cf), rec.line);
        p.description_len = require_count(field(cd), rec.line);
        p.is_redirect = require_flag(field(cr), rec.line);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<UserProfile> load_user_profiles(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path);
    const auto cid = table.require_column("user_id");
    const auto ccreated = table.require_column("account_created_at");
    const auto cf = table.column("followers");
    const auto co = table.column("owned_repos");
    const auto cp = table.column("created_pages");
    std::vector<UserProfile> out;
    out.reserve(table.records.size());
    for (const auto& rec : table.records) {
        if (rec.fields.size() != table.header.size()) {
            throw InputError(path.string() + " line " + std::to_string(rec.line) + ": wrong field count");
        }
        auto field = [&](std::size_t idx) -> std::string_view {
            return idx == std::string::npos ? std::string_view{} : std::string_view{rec.fields[idx]};
        };
        UserProfile u;
        u.user_id = rec.fields[cid];
        u.account_created_at = require_timestamp(field(ccreated), rec.line);
        u.followers = require_count(field(cf), rec.line);
        u.owned_repos = require_count(field(co), rec.line);
        u.created_pages = require_count(field(cp), rec.line);
        out.push_back(std::move(u));
    }
    return out;
}

std::string serialize_project_profiles(std::span<const ProjectProfile> projects) {
    std::string out = "project_id,created_at,watchers,forks,description_len,is_redirect\n";
    for (const auto& p : projects) {
        out += join_csv({p.project_id, format_timestamp(p.created_at), std::to_string(p.watchers),
                         std::to_string(p.forks), std::to_string(p.description_len),
                         p.is_redirect ? "true" : "false"});
        out.push_back('\n');
    }
    return out;
}

std::string serialize_user_profiles(std::span<const UserProfile> users) {
    std::string out = "user_id,account_created_at,followers,owned_repos,created_pages\n";
    for (const auto& u : users) {
        out += join_csv({u.user_id, format_timestamp(u.account_created_at), std::to_string(u.followers),
                         std::to_string(u.owned_repos), std::to_string(u.created_pages)});
        out.push_back('\n');
    }
    return out;
}

std::unordered_set<std::string> load_id_list(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    std::unordered_set<std::string> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        ids.insert(std::move(line));
    }
    return ids;
}

void mark_bots(std::vector<ContributionEvent>& events, const std::unordered_set<std::string>& bots) {
    for (auto& ev : events) {
        if (bots.contains(ev.user_id)) ev.is_bot = true;
    }
}

WindowResult filter_window(std::span<const ContributionEvent> events, const ProjectIndex& projects,
                           TimeWindow window, UnknownProjectPolicy policy) {
    WindowResult result;
    // Window ends are computed once per project.
    std::unordered_map<std::string, Timestamp> window_end;
    for (const auto& ev : events) {
        if (ev.is_bot) {
            ++result.dropped_bot;
            continue;
        }
        auto it = projects.find(ev.project_id);
        if (it == projects.end()) {
            if (policy == UnknownProjectPolicy::fatal) {
                throw InputError("event references unknown project '" + ev.project_id + "'");
            }
            ++result.dropped_unknown_project;
            continue;
        }
        const ProjectProfile& profile = it->second;
        if (profile.is_redirect) {
            ++result.dropped_redirect;
            continue;
        }
        auto [end_it, inserted] = window_end.try_emplace(ev.project_id);
        if (inserted) end_it->second = add_months(profile.created_at, window.months);
        if (ev.timestamp >= profile.created_at && ev.timestamp < end_it->second) {
            result.events.push_back(ev);
        } else {
            ++result.outside_window;
        }
    }
    return result;
}

std::vector<ActivityFraction> compute_activity_fraction(std::span<const ContributionEvent> events,
                                                        const ProjectIndex& projects,
                                                        std::span<const Horizon> horizons) {
    if (events.empty()) throw Error("no events");
    std::vector<std::chrono::seconds> offsets;
    offsets.reserve(events.size());
    for (const auto& ev : events) {
        auto it = projects.find(ev.project_id);
        if (it == projects.end()) continue;
        offsets.push_back(ev.timestamp - it->second.created_at);
    }
    if (offsets.empty()) throw Error("no events");
    std::sort(offsets.begin(), offsets.end());
    const auto first_nonneg = std::lower_bound(offsets.begin(), offsets.end(), std::chrono::seconds{0});
    const double total = static_cast<double>(offsets.size());

    std::vector<ActivityFraction> out;
    out.reserve(horizons.size());
    for (const auto& h : horizons) {
        double fraction = 1.0;
        if (h) {
            const auto last = std::upper_bound(first_nonneg, offsets.end(), *h);
            fraction = static_cast<double>(last - first_nonneg) / total;
        }
        out.push_back({h, fraction});
    }
    return out;
}

}  // namespace collab
