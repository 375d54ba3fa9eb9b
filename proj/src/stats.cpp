#include "convtree/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "convtree/error.hpp"

namespace convtree::stats {

double mean(std::span<const double> xs) {
  require(!xs.empty(), ErrorKind::EmptySet, "mean of empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
  require(xs.size() >= 2, ErrorKind::DomainError, "variance needs at least two values");
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

double median(std::vector<double> xs) {
  require(!xs.empty(), ErrorKind::EmptySet, "median of empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  require(a > 0 && b > 0, ErrorKind::DomainError, "incomplete beta needs a, b > 0");
  require(x >= 0 && x <= 1, ErrorKind::DomainError, "incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  require(dof > 0, ErrorKind::DomainError, "t distribution needs dof > 0");
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t >= 0 ? 1.0 - tail : tail;
}

double f_cdf(double x, double d1, double d2) {
  require(d1 > 0 && d2 > 0, ErrorKind::DomainError, "F distribution needs positive dof");
  if (x <= 0) return 0.0;
  return regularized_incomplete_beta(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2));
}

TestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, ErrorKind::DomainError,
          "welch_t_test needs at least two values per sample");
  const double va = variance(a) / static_cast<double>(a.size());
  const double vb = variance(b) / static_cast<double>(b.size());
  require(va > 0 || vb > 0, ErrorKind::DegenerateVariance, "both samples have zero variance");
  const double se2 = va + vb;
  const double t = (mean(a) - mean(b)) / std::sqrt(se2);
  const double df = se2 * se2 / (va * va / static_cast<double>(a.size() - 1) +
                                 vb * vb / static_cast<double>(b.size() - 1));
  const double p = regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return {t, std::clamp(p, 0.0, 1.0), df, 0.0};
}

TestResult f_test_variance(std::span<const double> a, std::span<const double> b) {
  require(a.size() >= 2 && b.size() >= 2, ErrorKind::DomainError,
          "f_test_variance needs at least two values per sample");
  const double va = variance(a);
  const double vb = variance(b);
  require(va > 0 && vb > 0, ErrorKind::DegenerateVariance, "F ratio needs nonzero variances");
  const double f = va / vb;
  const double d1 = static_cast<double>(a.size() - 1);
  const double d2 = static_cast<double>(b.size() - 1);
  // lower and upper tails computed separately to keep precision in both
  const double lower = regularized_incomplete_beta(0.5 * d1, 0.5 * d2, d1 * f / (d1 * f + d2));
  const double upper = regularized_incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d1 * f + d2));
  const double p = std::min(1.0, 2.0 * std::min(lower, upper));
  return {f, p, d1, d2};
}

double student_t_log_pdf(double x, double nu, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * std::numbers::pi) - std::log(sigma) -
         0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

double student_t_log_pdf_grad(double x, double nu, double mu, double sigma) {
  const double dx = x - mu;
  return -(nu + 1.0) * dx / (nu * sigma * sigma + dx * dx);
}

}  // namespace convtree::stats
