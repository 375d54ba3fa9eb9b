#pragma once

#include <span>
#include <vector>

namespace convtree::stats {

struct TestResult {
  double statistic = 0.0;
  double p = 1.0;
  double df1 = 0.0;
  double df2 = 0.0;
};

double mean(std::span<const double> xs);
/// Unbiased (n - 1) sample variance.
double variance(std::span<const double> xs);
double median(std::vector<double> xs);

/// I_x(a, b) by Lentz continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double dof);
double f_cdf(double x, double d1, double d2);

/// Two-sided Welch t-test; df from Welch-Satterthwaite.
TestResult welch_t_test(std::span<const double> a, std::span<const double> b);

/// F = var(a) / var(b), two-sided p.
TestResult f_test_variance(std::span<const double> a, std::span<const double> b);

/// log density of the location-scale Student t.
double student_t_log_pdf(double x, double nu, double mu, double sigma);
/// d/dx of student_t_log_pdf.
double student_t_log_pdf_grad(double x, double nu, double mu, double sigma);

}  // namespace convtree::stats
