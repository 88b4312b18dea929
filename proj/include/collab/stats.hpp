#pragma once

#include <span>

namespace collab {

double mean(std::span<const double> values);
double sample_variance(std::span<const double> values);

// Linear-interpolation percentile (p in [0,100]) on the sorted values:
// position p/100 * (n-1).
double percentile(std::span<const double> values, double p);

// NaN when either column has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Two-sided p-values.
double normal_two_sided_p(double z);
double student_t_two_sided_p(double t, double dof);

inline constexpr double kZ95 = 1.96;

}  // namespace collab
