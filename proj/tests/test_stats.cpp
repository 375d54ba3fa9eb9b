#include <doctest.h>

#include <random>

#include "convtree/error.hpp"
#include "convtree/stats.hpp"
#include "oracle.hpp"

using namespace convtree;

TEST_CASE("mean, variance, median") {
  std::vector<double> xs{4, 1, 3, 2};
  CHECK(stats::mean(xs) == doctest::Approx(2.5));
  CHECK(stats::variance(xs) == doctest::Approx(5.0 / 3.0));
  CHECK(stats::median(xs) == doctest::Approx(2.5));
  CHECK(stats::median({5, 1, 3}) == doctest::Approx(3));
}

TEST_CASE("incomplete beta against known values") {
  CHECK(stats::regularized_incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3));
  CHECK(stats::regularized_incomplete_beta(2, 2, 0.5) == doctest::Approx(0.5));
  // I_x(a, 1) = x^a
  CHECK(stats::regularized_incomplete_beta(3, 1, 0.4) == doctest::Approx(0.064));
}

TEST_CASE("t and F cdfs match boost") {
  for (double dof : {1.0, 2.5, 7.0, 40.0})
    for (double t : {-3.0, -0.4, 0.0, 1.1, 5.0}) {
      boost::math::students_t d(dof);
      CHECK(stats::student_t_cdf(t, dof) == doctest::Approx(boost::math::cdf(d, t)).epsilon(1e-10));
    }
  for (double x : {0.2, 1.0, 3.7}) {
    boost::math::fisher_f d(4, 11);
    CHECK(stats::f_cdf(x, 4, 11) == doctest::Approx(boost::math::cdf(d, x)).epsilon(1e-10));
  }
}

TEST_CASE("welch and F tests match the oracle on random samples") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 1);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(5 + rng() % 40), b(5 + rng() % 40);
    const double shift = 0.1 * (rng() % 10), spread = 0.5 + 0.1 * (rng() % 20);
    for (double& v : a) v = g(rng);
    for (double& v : b) v = shift + spread * g(rng);
    const auto w = stats::welch_t_test(a, b);
    const auto wo = oracle::welch(a, b);
    CHECK(w.statistic == doctest::Approx(wo.statistic).epsilon(1e-12));
    CHECK(w.df1 == doctest::Approx(wo.df1).epsilon(1e-12));
    CHECK(std::abs(w.p - wo.p) < 1e-9);
    const auto f = stats::f_test_variance(a, b);
    const auto fo = oracle::variance_ratio(a, b);
    CHECK(f.statistic == doctest::Approx(fo.statistic).epsilon(1e-12));
    CHECK(std::abs(f.p - fo.p) < 1e-9);
  }
}

TEST_CASE("degenerate samples") {
  std::vector<double> flat{1, 1, 1}, one{2};
  try {
    stats::welch_t_test(flat, flat);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVariance);
  }
  CHECK_THROWS_AS(stats::welch_t_test(one, flat), Error);
  CHECK_THROWS_AS(stats::f_test_variance(flat, std::vector<double>{1, 2, 3}), Error);
}

TEST_CASE("student t log density and gradient") {
  boost::math::students_t d(2.0);
  CHECK(stats::student_t_log_pdf(0.7, 2.0, 0.0, 1.0) == doctest::Approx(std::log(boost::math::pdf(d, 0.7))));
  CHECK(stats::student_t_log_pdf(1.7, 2.0, 1.0, 2.0) ==
        doctest::Approx(std::log(boost::math::pdf(d, 0.35)) - std::log(2.0)));
  const double h = 1e-6;
  for (double x : {-2.0, 0.3, 4.0}) {
    const double fd = (stats::student_t_log_pdf(x + h, 2, 0.5, 1.5) - stats::student_t_log_pdf(x - h, 2, 0.5, 1.5)) / (2 * h);
    CHECK(stats::student_t_log_pdf_grad(x, 2, 0.5, 1.5) == doctest::Approx(fd).epsilon(1e-7));
  }
}
