#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "convtree/error.hpp"
#include "convtree/numerics.hpp"

using namespace convtree;

TEST_CASE("softmax is shift invariant and sums to one") {
  Vector v(4);
  v << 1.0, -2.0, 0.5, 3.0;
  const Vector a = softmax(v);
  const Vector b = softmax((v.array() + 1000.0).matrix());
  CHECK(a.sum() == doctest::Approx(1.0).epsilon(1e-15));
  for (int i = 0; i < 4; ++i) CHECK(a(i) == doctest::Approx(b(i)).epsilon(1e-14));
  CHECK(a(3) > a(0));
}

TEST_CASE("softmax of large values stays finite") {
  Vector v(3);
  v << 1e300, 1e300, -1e300;
  const Vector p = softmax(v);
  CHECK(p(0) == doctest::Approx(0.5));
  CHECK(p(2) == 0.0);
}

TEST_CASE("softmax rejects empty and non-finite input") {
  CHECK_THROWS_AS(softmax(Vector(0)), Error);
  Vector v(2);
  v << 1.0, std::nan("");
  try {
    softmax(v);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteInput);
  }
}

TEST_CASE("softmax works in float") {
  Eigen::VectorXf v(2);
  v << 0.0f, 0.0f;
  CHECK(softmax(v)(0) == doctest::Approx(0.5f));
}

TEST_CASE("beta density integrates to one") {
  for (double a : {1.0, 2.0, 4.0})
    for (double b : {1.0, 2.0, 4.0}) {
      const double area = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          [&](double x) { return beta_pdf(x, a, b); }, 0.0, 1.0, 10, 1e-12);
      CHECK(area == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("beta density closed forms") {
  CHECK(std::abs(beta_pdf(0.5, 2.0, 2.0) - 1.5) < 1e-12);
  CHECK(beta_pdf(0.3, 1.0, 1.0) == doctest::Approx(1.0));
  // Beta(4, 1): 4 x^3
  CHECK(beta_pdf(0.7, 4.0, 1.0) == doctest::Approx(4 * 0.343).epsilon(1e-12));
  CHECK(beta_pdf(0.0, 2.0, 2.0) == 0.0);
  CHECK(beta_pdf(1.0, 4.0, 1.0) == doctest::Approx(4.0));
  CHECK(std::isinf(beta_pdf(0.0, 0.5, 2.0)));
}

TEST_CASE("beta density domain errors") {
  auto kind = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind([] { beta_pdf(1.2, 2.0, 2.0); }) == ErrorKind::DomainError);
  CHECK(kind([] { beta_pdf(0.5, 0.0, 2.0); }) == ErrorKind::DomainError);
  CHECK(kind([] { beta_pdf(-0.1, 1.0, 1.0); }) == ErrorKind::DomainError);
}

TEST_CASE("cosine similarity") {
  Vector a(3), b(3), c(3);
  a << 1, 0, 0;
  b << 0, 2, 0;
  c << -3, 0, 0;
  CHECK(cosine_sim(a, a) == doctest::Approx(1.0));
  CHECK(cosine_sim(a, b) == doctest::Approx(0.0));
  CHECK(cosine_sim(a, c) == doctest::Approx(-1.0));
  Vector big(2), tiny(2);
  big << 1e200, 1e200;
  tiny << 1e-200, 1e-200;
  CHECK(cosine_sim(big, big) == doctest::Approx(1.0));
  CHECK(cosine_sim(tiny, tiny) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_sim(a, Vector::Zero(3).eval()), Error);
  CHECK_THROWS_AS(cosine_sim(a, Vector::Ones(2).eval()), Error);
}
