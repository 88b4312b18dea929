#include "collab/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "collab/error.hpp"
#include "collab/stats.hpp"

namespace collab {

double PowerLawFit::c() const { return std::exp(ln_c); }
double PowerLawFit::ci_low() const { return alpha - kZ95 * se_alpha; }
double PowerLawFit::ci_high() const { return alpha + kZ95 * se_alpha; }

PowerLawFit fit_power_law(std::span<const Point> points, Aggregation aggregation) {
    for (const auto& p : points) {
        if (!(p.x > 0.0) || !(p.y > 0.0)) throw Error("log-domain violation");
    }
    std::vector<Point> used;
    if (aggregation == Aggregation::per_size_mean) {
        std::map<double, std::pair<double, std::size_t>> acc;
        for (const auto& p : points) {
            auto& [sum, count] = acc[p.x];
            sum += p.y;
            ++count;
        }
        for (const auto& [x, sc] : acc) used.push_back({x, sc.first / static_cast<double>(sc.second)});
    } else {
        used.assign(points.begin(), points.end());
    }

    const std::size_t n = used.size();
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        lx[i] = std::log(used[i].x);
        ly[i] = std::log(used[i].y);
    }
    if (n < 2 || std::all_of(lx.begin(), lx.end(), [&](double v) { return v == lx.front(); })) {
        throw Error("power-law fit needs at least two distinct x values");
    }
    const double mx = mean(lx);
    const double my = mean(ly);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    PowerLawFit fit;
    fit.point_count = n;
    fit.alpha = sxy / sxx;
    fit.ln_c = my - fit.alpha * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ly[i] - (fit.ln_c + fit.alpha * lx[i]);
        ss_res += r * r;
    }
    // Constant response: nothing to explain and nothing left unexplained.
    const bool flat = syy <= 1e-24 * static_cast<double>(n) * std::max(1.0, my * my);
    fit.r2 = !flat ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
    fit.se_alpha = n > 2 ? std::sqrt(ss_res / static_cast<double>(n - 2) / sxx) : std::nan("");
    return fit;
}

double predict_mean_work(const PowerLawFit& fit, double group_size) {
    if (group_size < 1.0) throw Error("group size must be at least 1");
    return std::exp(fit.ln_c) * std::pow(group_size, fit.alpha);
}

TotalWorkCurve TotalWorkCurve::from_fit(const PowerLawFit& fit, double integration_constant) {
    return TotalWorkCurve{fit.alpha, fit.ln_c, integration_constant};
}

double total_work(const TotalWorkCurve& curve, double group_size) {
    if (curve.alpha == -1.0) throw Error("total work is logarithmic for alpha = -1 and not supported");
    if (group_size < 1.0) throw Error("group size must be at least 1");
    const double exponent = curve.alpha + 1.0;
    return std::exp(curve.ln_c) / exponent * std::pow(group_size, exponent) + curve.integration_constant;
}

PowerLawFit fit_edit_size_scaling(std::span<const UserProjectRow> rows) {
    std::vector<Point> points;
    points.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.edit_size > 0.0) points.push_back({r.w, r.edit_size});
    }
    return fit_power_law(points, Aggregation::raw);
}

std::vector<MeanWorkPoint> mean_work_by_size(std::span<const GroupRecord> groups) {
    std::map<std::int64_t, std::vector<double>> by_size;
    for (const auto& g : groups) by_size[g.size].push_back(g.mean_work);
    std::vector<MeanWorkPoint> out;
    for (const auto& [size, values] : by_size) {
        MeanWorkPoint p;
        p.group_size = static_cast<double>(size);
        p.groups = values.size();
        p.mean = mean(values);
        const double se = std::sqrt(sample_variance(values) / static_cast<double>(values.size()));
        p.ci_low = p.mean - kZ95 * se;
        p.ci_high = p.mean + kZ95 * se;
        out.push_back(p);
    }
    return out;
}

std::vector<Point> mean_work_points(std::span<const GroupRecord> groups) {
    std::vector<Point> points;
    points.reserve(groups.size());
    for (const auto& g : groups) points.push_back({static_cast<double>(g.size), g.mean_work});
    return points;
}

}  // namespace collab
