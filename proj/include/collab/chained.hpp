#pragma once

// Chained random-intercept fits over overlapping group-size ranges, and the
// stitched curve obtained by anchoring each range's line at the mean of the
// values already estimated at its lower bound.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "collab/lme.hpp"
#include "collab/metrics.hpp"
#include "collab/mode.hpp"

namespace collab {

struct RangeSpec {
    int span = 6;    // consecutive sizes per range
    int stride = 1;  // step between range starts
    int lo = 1;
    int hi = 20;

    static RangeSpec for_mode(Mode mode);
};

struct SizeRange {
    int lo = 0;
    int hi = 0;

    bool operator==(const SizeRange&) const = default;
};

std::vector<SizeRange> make_ranges(const RangeSpec& spec);

// Fixed effects of the per-range model, group size first.
const std::vector<std::string>& confound_set(Mode mode);

struct RangeFit {
    SizeRange range;
    bool fitted = false;
    std::string skip_reason;
    double beta = 0;  // marginal gain
    double se = 0;
    double ci_low = 0;
    double ci_high = 0;
    std::size_t n_obs = 0;
    std::size_t n_bins = 0;  // users in the random-intercept model
    double mean_bin_size = 0;
    std::vector<std::string> fixed;            // effects actually fitted
    std::vector<std::string> dropped_confounds;  // collinear within the range
    std::optional<LmeFit> fit;
};

struct ChainedOptions {
    std::optional<double> outlier_percentile = 95.0;  // on w, before ranging
    std::optional<std::vector<std::string>> fixed;    // defaults to confound_set(mode)
    LmeOptions lme;
};

struct ChainedFit {
    RangeSpec spec;
    Mode mode = Mode::github;
    std::vector<RangeFit> ranges;
    std::size_t rows_in = 0;
    std::size_t rows_after_outliers = 0;
};

ChainedFit fit_chained(std::span<const UserProjectRow> rows, const RangeSpec& spec, Mode mode,
                       const ChainedOptions& options = {});

// One range's straight line, anchored at its lower bound.
struct RangeLine {
    SizeRange range;
    double beta = 0;
    double ci_low = 0;
    double ci_high = 0;
};

struct UnifiedPoint {
    int k = 0;
    double w = 0;
    double ci_low = 0;
    double ci_high = 0;
    std::size_t models = 0;  // ranges covering k
};

struct UnifiedCurve {
    double base = 1.0;
    std::vector<UnifiedPoint> points;  // consecutive k

    const UnifiedPoint& at(int k) const;
};

// Ranges are folded left to right by lower bound; exact duplicates count
// once. A size not covered by any range between the first and last bound
// is an error.
UnifiedCurve unify(std::span<const RangeLine> lines, double wb1 = 1.0);
// Uses the fitted ranges only.
UnifiedCurve unify(const ChainedFit& chained, double wb1 = 1.0);

struct MarginalGainRow {
    SizeRange range;
    double midpoint = 0;
    double beta = 0;
    double ci_low = 0;
    double ci_high = 0;
    bool sub_linear = false;  // beta <= 0
};

std::vector<MarginalGainRow> marginal_gain_report(const ChainedFit& chained);

std::string serialize_chained(const ChainedFit& chained);
std::string serialize_unified(const UnifiedCurve& curve);
ChainedFit parse_chained(std::string_view csv_text);
UnifiedCurve parse_unified(std::string_view csv_text);

}  // namespace collab
