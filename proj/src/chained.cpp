#include "collab/chained.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "collab/csv.hpp"
#include "collab/error.hpp"
#include "collab/io.hpp"
#include "collab/stats.hpp"

namespace collab {

RangeSpec RangeSpec::for_mode(Mode mode) {
    if (mode == Mode::wikipedia) return RangeSpec{9, 3, 1, 70};
    return RangeSpec{6, 1, 1, 20};
}

std::vector<SizeRange> make_ranges(const RangeSpec& spec) {
    if (spec.span < 2) throw Error("range span must be at least 2");
    if (spec.stride < 1) throw Error("range stride must be at least 1");
    if (spec.hi < spec.lo) throw Error("empty group-size domain");
    if (spec.span > spec.hi - spec.lo + 1) throw Error("range span exceeds the group-size domain");
    std::vector<SizeRange> out;
    for (int m = spec.lo; m + spec.span - 1 <= spec.hi; m += spec.stride) out.push_back({m, m + spec.span - 1});
    // stride may stop short of hi; close the domain with one flush range
    if (out.back().hi < spec.hi) out.push_back({spec.hi - spec.span + 1, spec.hi});
    return out;
}

const std::vector<std::string>& confound_set(Mode mode) {
    static const std::vector<std::string> github = {"group_size", "effective_size", "watchers", "user_age",
                                                    "aggregate_focus", "owned_repos", "followers", "n_projects"};
    static const std::vector<std::string> wikipedia = {"group_size", "effective_size", "n_projects", "group_work",
                                                       "n_max", "project_age", "n_mean", "created_pages"};
    return mode == Mode::wikipedia ? wikipedia : github;
}

namespace {

const std::string kGain = "group_size";

RangeFit fit_range(std::span<const UserProjectRow> rows, SizeRange range, const std::vector<std::string>& fixed,
                   const LmeOptions& lme) {
    RangeFit out;
    out.range = range;
    std::vector<std::size_t> in_range;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].group_size >= range.lo && rows[i].group_size <= range.hi) in_range.push_back(i);
    }
    const auto eligible = filter_eligible(rows, in_range);
    if (eligible.empty()) {
        out.skip_reason = "no user with two rows of different group sizes";
        return out;
    }
    std::vector<UserProjectRow> sub;
    sub.reserve(eligible.size());
    for (auto i : eligible) sub.push_back(rows[i]);
    const FeatureMatrix m = rows_to_matrix(sub, fixed);

    // Confounds that are collinear with the ones before them are dropped.
    std::vector<std::string> kept = {kGain};
    for (const auto& c : fixed) {
        if (c == kGain) continue;
        auto candidate = kept;
        candidate.push_back(c);
        if (find_collinear_columns(m.select_columns(candidate)).empty()) {
            kept = std::move(candidate);
        } else {
            out.dropped_confounds.push_back(c);
        }
    }
    out.fixed = kept;
    std::vector<std::size_t> all(sub.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    try {
        out.fit = fit_user_random_intercept(sub, all, "w", kept, lme);
    } catch (const Error& e) {
        out.skip_reason = e.what();
        return out;
    }
    const auto& c = out.fit->coefficient(kGain);
    out.fitted = true;
    out.beta = c.estimate;
    out.se = c.std_error;
    out.ci_low = c.estimate - kZ95 * c.std_error;
    out.ci_high = c.estimate + kZ95 * c.std_error;
    out.n_obs = out.fit->n_obs;
    out.n_bins = out.fit->n_groups;
    out.mean_bin_size = static_cast<double>(out.n_obs) / static_cast<double>(out.n_bins);
    return out;
}

}  // namespace

ChainedFit fit_chained(std::span<const UserProjectRow> rows, const RangeSpec& spec, Mode mode,
                       const ChainedOptions& options) {
    ChainedFit out;
    out.spec = spec;
    out.mode = mode;
    out.rows_in = rows.size();
    const auto ranges = make_ranges(spec);

    std::vector<std::string> fixed = options.fixed ? *options.fixed : confound_set(mode);
    if (std::find(fixed.begin(), fixed.end(), kGain) == fixed.end()) fixed.insert(fixed.begin(), kGain);

    std::vector<UserProjectRow> kept;
    if (options.outlier_percentile && !rows.empty()) {
        std::vector<double> w(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) w[i] = rows[i].w;
        for (auto i : outlier_keep_indices(w, *options.outlier_percentile)) kept.push_back(rows[i]);
        rows = kept;
    }
    out.rows_after_outliers = rows.size();
    for (const auto& r : ranges) out.ranges.push_back(fit_range(rows, r, fixed, options.lme));
    return out;
}

const UnifiedPoint& UnifiedCurve::at(int k) const {
    if (points.empty() || k < points.front().k || k > points.back().k) {
        throw Error("group size " + std::to_string(k) + " outside the unified curve");
    }
    return points[static_cast<std::size_t>(k - points.front().k)];
}

namespace {

// Left-to-right stitch with one slope per range; returns mean prediction per k.
std::vector<double> stitch(std::span<const RangeLine> lines, int lo, int hi, double wb1, double RangeLine::*slope) {
    std::vector<std::vector<double>> preds(static_cast<std::size_t>(hi - lo + 1));
    auto mean_at = [&](int k) {
        const auto& v = preds[static_cast<std::size_t>(k - lo)];
        return mean(v);
    };
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& l = lines[i];
        double base = wb1;
        if (i > 0) {
            if (!preds[static_cast<std::size_t>(l.range.lo - lo)].empty()) {
                base = mean_at(l.range.lo);
            } else {
                // Adjacent, non-overlapping range: step in from the previous size.
                base = mean_at(l.range.lo - 1) + l.*slope;
            }
        }
        for (int k = l.range.lo; k <= l.range.hi; ++k) {
            preds[static_cast<std::size_t>(k - lo)].push_back(base + l.*slope * (k - l.range.lo));
        }
    }
    std::vector<double> out;
    out.reserve(preds.size());
    for (int k = lo; k <= hi; ++k) out.push_back(mean_at(k));
    return out;
}

}  // namespace

UnifiedCurve unify(std::span<const RangeLine> lines, double wb1) {
    if (lines.empty()) throw Error("nothing to unify: no fitted ranges");
    std::vector<RangeLine> sorted(lines.begin(), lines.end());
    for (const auto& l : sorted) {
        if (l.range.hi < l.range.lo) throw Error("invalid range");
    }
    std::stable_sort(sorted.begin(), sorted.end(), [](const RangeLine& a, const RangeLine& b) {
        return a.range.lo != b.range.lo ? a.range.lo < b.range.lo : a.range.hi < b.range.hi;
    });
    sorted.erase(std::unique(sorted.begin(), sorted.end(),
                             [](const RangeLine& a, const RangeLine& b) {
                                 return a.range == b.range && a.beta == b.beta && a.ci_low == b.ci_low &&
                                        a.ci_high == b.ci_high;
                             }),
                 sorted.end());

    const int lo = sorted.front().range.lo;
    int hi = lo;
    int covered = lo - 1;
    for (const auto& l : sorted) {
        if (l.range.lo > covered + 1) {
            throw Error("gap in range coverage: sizes " + std::to_string(covered + 1) + "-" +
                        std::to_string(l.range.lo - 1) + " have no fitted range");
        }
        covered = std::max(covered, l.range.hi);
        hi = std::max(hi, l.range.hi);
    }

    const auto w = stitch(sorted, lo, hi, wb1, &RangeLine::beta);
    const auto low = stitch(sorted, lo, hi, wb1, &RangeLine::ci_low);
    const auto high = stitch(sorted, lo, hi, wb1, &RangeLine::ci_high);

    UnifiedCurve curve;
    curve.base = wb1;
    for (int k = lo; k <= hi; ++k) {
        const auto i = static_cast<std::size_t>(k - lo);
        UnifiedPoint p;
        p.k = k;
        p.w = w[i];
        p.ci_low = std::min({w[i], low[i], high[i]});
        p.ci_high = std::max({w[i], low[i], high[i]});
        for (const auto& l : sorted) p.models += (k >= l.range.lo && k <= l.range.hi) ? 1 : 0;
        curve.points.push_back(p);
    }
    return curve;
}

UnifiedCurve unify(const ChainedFit& chained, double wb1) {
    std::vector<RangeLine> lines;
    for (const auto& r : chained.ranges) {
        if (r.fitted) lines.push_back({r.range, r.beta, r.ci_low, r.ci_high});
    }
    return unify(lines, wb1);
}

std::vector<MarginalGainRow> marginal_gain_report(const ChainedFit& chained) {
    std::vector<MarginalGainRow> out;
    for (const auto& r : chained.ranges) {
        if (!r.fitted) continue;
        MarginalGainRow row;
        row.range = r.range;
        row.midpoint = 0.5 * (r.range.lo + r.range.hi);
        row.beta = r.beta;
        row.ci_low = r.ci_low;
        row.ci_high = r.ci_high;
        row.sub_linear = r.beta <= 0.0;
        out.push_back(row);
    }
    return out;
}

std::string serialize_chained(const ChainedFit& chained) {
    std::string out = "range,r_l,r_u,beta,se,ci_low,ci_high,n_obs,n_bins,mean_bin_size,status,note\n";
    for (const auto& r : chained.ranges) {
        std::string note = r.skip_reason;
        if (r.fitted && !r.dropped_confounds.empty()) {
            note = "dropped collinear:";
            for (const auto& c : r.dropped_confounds) note += " " + c;
        }
        out += join_csv({std::to_string(r.range.lo) + "-" + std::to_string(r.range.hi), std::to_string(r.range.lo),
                         std::to_string(r.range.hi), format_number(r.beta), format_number(r.se),
                         format_number(r.ci_low), format_number(r.ci_high), std::to_string(r.n_obs),
                         std::to_string(r.n_bins), format_number(r.mean_bin_size), r.fitted ? "fitted" : "skipped",
                         note}) +
               "\n";
    }
    return out;
}

std::string serialize_unified(const UnifiedCurve& curve) {
    std::string out = "k,w,ci_low,ci_high,models\n";
    for (const auto& p : curve.points) {
        out += join_csv({std::to_string(p.k), format_number(p.w), format_number(p.ci_low), format_number(p.ci_high),
                         std::to_string(p.models)}) +
               "\n";
    }
    return out;
}

namespace {

int parse_int(std::string_view text) { return static_cast<int>(parse_number(text)); }

}  // namespace

ChainedFit parse_chained(std::string_view csv_text) {
    const CsvTable t = parse_csv(csv_text);
    const auto lo = t.require_column("r_l"), hi = t.require_column("r_u"), beta = t.require_column("beta"),
               se = t.require_column("se"), cl = t.require_column("ci_low"), ch = t.require_column("ci_high"),
               nobs = t.require_column("n_obs"), nb = t.require_column("n_bins"), st = t.require_column("status");
    const auto note = t.column("note");
    ChainedFit out;
    for (const auto& rec : t.records) {
        if (rec.fields.size() != t.header.size()) {
            throw InputError("chained.csv line " + std::to_string(rec.line) + ": wrong field count");
        }
        RangeFit r;
        r.range = {parse_int(rec.fields[lo]), parse_int(rec.fields[hi])};
        r.beta = parse_number(rec.fields[beta]);
        r.se = parse_number(rec.fields[se]);
        r.ci_low = parse_number(rec.fields[cl]);
        r.ci_high = parse_number(rec.fields[ch]);
        r.n_obs = static_cast<std::size_t>(parse_number(rec.fields[nobs]));
        r.n_bins = static_cast<std::size_t>(parse_number(rec.fields[nb]));
        r.mean_bin_size = r.n_bins ? static_cast<double>(r.n_obs) / static_cast<double>(r.n_bins) : 0.0;
        r.fitted = rec.fields[st] == "fitted";
        if (!r.fitted && note != std::string::npos) r.skip_reason = rec.fields[note];
        out.ranges.push_back(std::move(r));
    }
    if (!out.ranges.empty()) {
        out.spec.lo = out.ranges.front().range.lo;
        out.spec.hi = out.ranges.back().range.hi;
        out.spec.span = out.ranges.front().range.hi - out.ranges.front().range.lo + 1;
        out.spec.stride = out.ranges.size() > 1 ? out.ranges[1].range.lo - out.ranges[0].range.lo : 1;
    }
    return out;
}

UnifiedCurve parse_unified(std::string_view csv_text) {
    const CsvTable t = parse_csv(csv_text);
    const auto k = t.require_column("k"), w = t.require_column("w"), lo = t.require_column("ci_low"),
               hi = t.require_column("ci_high");
    const auto models = t.column("models");
    UnifiedCurve out;
    for (const auto& rec : t.records) {
        if (rec.fields.size() != t.header.size()) {
            throw InputError("unified.csv line " + std::to_string(rec.line) + ": wrong field count");
        }
        UnifiedPoint p;
        p.k = parse_int(rec.fields[k]);
        p.w = parse_number(rec.fields[w]);
        p.ci_low = parse_number(rec.fields[lo]);
        p.ci_high = parse_number(rec.fields[hi]);
        if (models != std::string::npos) p.models = static_cast<std::size_t>(parse_number(rec.fields[models]));
        out.points.push_back(p);
    }
    if (!out.points.empty()) out.base = out.points.front().w;
    return out;
}

}  // namespace collab
