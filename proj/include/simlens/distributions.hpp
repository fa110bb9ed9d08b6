#pragma once

namespace simlens::dist {

double normal_cdf(double x);

// Inverse of the standard normal CDF on (0, 1).
double normal_quantile(double p);

// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
double incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);

// Inverse Student-t CDF on (0, 1) for df > 0 (non-integer df allowed).
double student_t_quantile(double p, double df);

// Two-sided critical values at level alpha.
inline double normal_critical(double alpha) { return normal_quantile(1.0 - alpha / 2.0); }
inline double t_critical(double alpha, double df) { return student_t_quantile(1.0 - alpha / 2.0, df); }

}  // namespace simlens::dist
