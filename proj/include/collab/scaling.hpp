#pragma once

// Log-log least-squares power-law fits: mean work per member against group
// size, the integrated total-work curve, and edit size against edit count.

#include <cstddef>
#include <span>
#include <vector>

#include "collab/metrics.hpp"

namespace collab {

struct Point {
    double x = 0;
    double y = 0;
};

// y = c * x^alpha, with c stored as ln c.
struct PowerLawFit {
    double alpha = 0;
    double ln_c = 0;
    double r2 = 0;
    double se_alpha = 0;  // OLS slope standard error; NaN with two points
    std::size_t point_count = 0;

    double c() const;
    double ci_low() const;   // alpha - 1.96 SE
    double ci_high() const;  // alpha + 1.96 SE
};

enum class Aggregation {
    per_size_mean,  // average y within each distinct x before fitting
    raw,
};

// Throws "log-domain violation" on any nonpositive x or y, and when fewer
// than two distinct x remain.
PowerLawFit fit_power_law(std::span<const Point> points, Aggregation aggregation);

// c * N^alpha.
double predict_mean_work(const PowerLawFit& fit, double group_size);

// W(N) = c/(alpha+1) * N^(alpha+1) + C.
struct TotalWorkCurve {
    double alpha = 0;
    double ln_c = 0;
    double integration_constant = 0;

    static TotalWorkCurve from_fit(const PowerLawFit& fit, double integration_constant = 0.0);
};

double total_work(const TotalWorkCurve& curve, double group_size);

// Fits E_s = E_n^beta * c over rows, with E_n = w and E_s = edit_size.
// Rows without a positive edit size are skipped.
PowerLawFit fit_edit_size_scaling(std::span<const UserProjectRow> rows);

// Mean work per member by group size with a 95% normal band over groups.
struct MeanWorkPoint {
    double group_size = 0;
    double mean = 0;
    double ci_low = 0;
    double ci_high = 0;
    std::size_t groups = 0;
};

std::vector<MeanWorkPoint> mean_work_by_size(std::span<const GroupRecord> groups);
std::vector<Point> mean_work_points(std::span<const GroupRecord> groups);

}  // namespace collab
