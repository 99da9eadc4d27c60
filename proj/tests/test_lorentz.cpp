#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lpose/lorentz.hpp"

using namespace lpose;

namespace {

template <typename T>
std::vector<T> random_tangent(std::mt19937_64& rng, std::size_t d, T max_norm) {
  std::uniform_real_distribution<T> dist(-1.0, 1.0);
  std::vector<T> v(d);
  T n2 = 0;
  for (auto& e : v) {
    e = dist(rng);
    n2 += e * e;
  }
  std::uniform_real_distribution<T> rad(static_cast<T>(1e-3), max_norm);
  T target = rad(rng);
  T scale = target / std::sqrt(n2);
  for (auto& e : v) e *= scale;
  return v;
}

template <typename T>
std::vector<T> random_point(std::mt19937_64& rng, std::size_t d, T max_norm) {
  auto v = random_tangent<T>(rng, d, max_norm);
  std::vector<T> p(d + 1);
  lorentz::exp_origin<T>(v, p, lorentz::MapSite::kOther);
  return p;
}

}  // namespace

TEST_CASE("lorentz inner product matches the definition") {
  std::vector<double> o = {1, 0, 0};
  CHECK(lorentz::inner<double>(o, o) == doctest::Approx(-1.0).epsilon(1e-15));

  const double s2 = std::sqrt(2.0);
  std::vector<double> x = {s2, 1, 0}, y = {s2, 0, 1};
  // -sqrt2*sqrt2 + 1*0 + 0*1 = -2
  CHECK(lorentz::inner<double>(x, y) == doctest::Approx(-2.0).epsilon(1e-15));
  // on-manifold check: -2 + 1 = -1
  CHECK(lorentz::inner<double>(x, x) == doctest::Approx(-1.0).epsilon(1e-15));

  std::vector<double> bad = {1, 0};
  CHECK_THROWS_AS((void)lorentz::inner<double>(x, bad), std::invalid_argument);
}

TEST_CASE("geodesic distance closed-form examples") {
  const double s2 = std::sqrt(2.0);
  std::vector<double> o = {1, 0, 0}, x = {s2, 1, 0}, y = {s2, 0, 1};
  CHECK(lorentz::geodesic_distance<double>(o, o) == 0.0);  // exact, arg clamped to 1
  // -<o,x> = sqrt2; frozen oracle value acosh(sqrt2)
  CHECK(lorentz::geodesic_distance<double>(o, x) == doctest::Approx(0.8813735870195430).epsilon(1e-12));
  // -<x,y> = 2
  CHECK(lorentz::geodesic_distance<double>(x, y) == doctest::Approx(1.3169578969248166).epsilon(1e-12));
}

TEST_CASE("geodesic distance rejects off-manifold input in checked mode") {
  lorentz::CheckedGuard guard(true);
  std::vector<double> o = {1, 0, 0}, off = {1.5, 0, 0};
  CHECK_THROWS_AS((void)lorentz::geodesic_distance<double>(o, off), std::domain_error);
  lorentz::CheckedGuard unchecked(false);
  CHECK_NOTHROW((void)lorentz::geodesic_distance<double>(o, off));
}

TEST_CASE_TEMPLATE("exp_origin basics", T, float, double) {
  std::vector<T> zero(4, T(0)), out(5);
  lorentz::exp_origin<T>(zero, out);
  CHECK(out[0] == doctest::Approx(1.0));
  for (int i = 1; i < 5; ++i) CHECK(out[static_cast<std::size_t>(i)] == T(0));

  std::vector<T> e1 = {1, 0, 0};
  std::vector<T> p(4);
  lorentz::exp_origin<T>(e1, p);
  CHECK(p[0] == doctest::Approx(1.5430806348152437).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1.1752011936438014).epsilon(1e-6));
  CHECK(p[2] == T(0));
}

TEST_CASE("log_origin examples") {
  std::vector<double> o = {1, 0, 0}, v(2);
  lorentz::log_origin<double>(o, v);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);

  const double s2 = std::sqrt(2.0);
  std::vector<double> x = {s2, 1, 0};
  lorentz::log_origin<double>(x, v);
  CHECK(v[0] == doctest::Approx(0.8813735870195430).epsilon(1e-12));
  CHECK(v[1] == 0.0);

  std::vector<double> below = {0.5, 0, 0};
  CHECK_THROWS_AS(lorentz::log_origin<double>(below, v), std::domain_error);
}

TEST_CASE("exp/log roundtrip relative error <= 1e-9 in fp64 up to norm 5") {
  std::mt19937_64 rng(7);
  double worst = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t d = 1 + static_cast<std::size_t>(rng() % 16);
    auto v = random_tangent<double>(rng, d, 5.0);
    std::vector<double> p(d + 1), back(d);
    lorentz::exp_origin<double>(v, p);
    lorentz::log_origin<double>(p, back);
    double err2 = 0, n2 = 0;
    for (std::size_t i = 0; i < d; ++i) {
      err2 += (back[i] - v[i]) * (back[i] - v[i]);
      n2 += v[i] * v[i];
    }
    worst = std::max(worst, std::sqrt(err2 / n2));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("hyperboloid projection examples and closure") {
  std::vector<double> zero = {0, 0}, p(3);
  lorentz::project_hyperboloid<double>(zero, p);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 0.0);

  std::vector<double> e1 = {1, 0};
  lorentz::project_hyperboloid<double>(e1, p);
  CHECK(p[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(p[1] == 1.0);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  double worst = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> phi(8), y(9);
    for (auto& e : phi) e = dist(rng);
    lorentz::project_hyperboloid<double>(phi, y);
    worst = std::max(worst, std::abs(lorentz::inner<double>(y, y) + 1.0));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("parallel transport is a tangency-preserving isometry") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const std::size_t d = 6;

  SUBCASE("identity at the base point") {
    std::vector<double> o(d + 1, 0.0);
    o[0] = 1.0;
    std::vector<double> v(d + 1, 0.0);
    for (std::size_t i = 1; i <= d; ++i) v[i] = dist(rng);
    std::vector<double> out(d + 1);
    lorentz::parallel_transport<double>(o, o, v, out);
    for (std::size_t i = 0; i <= d; ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-14));
  }

  SUBCASE("tangency and isometry on random pairs") {
    double worst_tangency = 0, worst_isometry = 0;
    for (int trial = 0; trial < 300; ++trial) {
      auto x = random_point<double>(rng, d, 2.0);
      auto y = random_point<double>(rng, d, 2.0);
      // build v tangent at x: take a random w and project out <x,w> component:
      // v = w + <x,w> x works since <x,x> = -1
      std::vector<double> w(d + 1), v(d + 1), out(d + 1);
      for (auto& e : w) e = dist(rng);
      double xw = lorentz::inner<double>(x, w);
      for (std::size_t i = 0; i <= d; ++i) v[i] = w[i] + xw * x[i];
      lorentz::parallel_transport<double>(x, y, v, out);
      worst_tangency = std::max(worst_tangency, std::abs(lorentz::inner<double>(y, out)));
      worst_isometry = std::max(
          worst_isometry, std::abs(lorentz::inner<double>(out, out) - lorentz::inner<double>(v, v)));
    }
    CHECK(worst_tangency <= 1e-10);
    CHECK(worst_isometry <= 1e-9);
  }

  SUBCASE("linearity on tangent pairs") {
    auto x = random_point<double>(rng, d, 2.0);
    auto y = random_point<double>(rng, d, 2.0);
    auto tangent_at = [&](std::vector<double> w) {
      double xw = lorentz::inner<double>(x, w);
      for (std::size_t i = 0; i <= d; ++i) w[i] += xw * x[i];
      return w;
    };
    std::vector<double> w1(d + 1), w2(d + 1);
    for (auto& e : w1) e = dist(rng);
    for (auto& e : w2) e = dist(rng);
    auto v1 = tangent_at(w1), v2 = tangent_at(w2);
    std::vector<double> combo(d + 1), t1(d + 1), t2(d + 1), tc(d + 1);
    for (std::size_t i = 0; i <= d; ++i) combo[i] = 2.0 * v1[i] - 0.5 * v2[i];
    lorentz::parallel_transport<double>(x, y, v1, t1);
    lorentz::parallel_transport<double>(x, y, v2, t2);
    lorentz::parallel_transport<double>(x, y, combo, tc);
    for (std::size_t i = 0; i <= d; ++i)
      CHECK(tc[i] == doctest::Approx(2.0 * t1[i] - 0.5 * t2[i]).epsilon(1e-10));
  }
}

TEST_CASE("clip_tangent_norm rescales only outside the ball") {
  std::vector<double> zero = {0, 0, 0}, out(3);
  lorentz::clip_tangent_norm<double>(zero, 3.0, out);
  for (double e : out) CHECK(e == 0.0);

  std::vector<double> v = {6, 0, 0};
  lorentz::clip_tangent_norm<double>(v, 3.0, out);
  CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(out[1] == 0.0);

  std::vector<double> inside = {1, 2, 0};
  lorentz::clip_tangent_norm<double>(inside, 3.0, out);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);

  CHECK_THROWS_AS(lorentz::clip_tangent_norm<double>(v, -1.0, out), std::invalid_argument);
}

TEST_CASE("stability constants from the clip bounds") {
  // cosh(3) ~ 10 keeps |<q,k>| around 1e2; cosh(15) saturates softmax
  CHECK(std::cosh(3.0) == doctest::Approx(10.067661995777765).epsilon(1e-12));
  CHECK(std::cosh(3.0) * std::cosh(3.0) < 1.05e2 * 2.0);  // |<q,k>| <= cosh(2*Rq) = O(1e2)
  CHECK(std::cosh(6.0) == doctest::Approx(201.7156361224559).epsilon(1e-12));
}

TEST_CASE("manifold drift diagnostic") {
  std::vector<double> o = {1, 0, 0};
  CHECK(lorentz::manifold_drift<double>(o, 3) == 0.0);

  // fp32 drift after exp_o with norm exactly 5 in d = 512
  std::mt19937_64 rng(17);
  float worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto v = random_tangent<float>(rng, 512, 5.0f);
    float n2 = 0;
    for (float e : v) n2 += e * e;
    float fix = 5.0f / std::sqrt(n2);
    for (auto& e : v) e *= fix;  // push to the worst-case radius
    std::vector<float> p(513);
    lorentz::exp_origin<float>(v, p);
    worst = std::max(worst, lorentz::manifold_drift<float>(p, 513));
  }
  CHECK(worst <= 3.4e-1f);

  // fp64 drift at the same radius is far below the fp32 bound
  auto v = random_tangent<double>(rng, 512, 5.0);
  std::vector<double> p(513);
  lorentz::exp_origin<double>(v, p);
  CHECK(lorentz::manifold_drift<double>(p, 513) <= 1e-12);
}

TEST_CASE("distance axioms and the monotone cosh link on random samples") {
  std::mt19937_64 rng(19);
  const std::size_t d = 5;
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_point<double>(rng, d, 2.5);
    auto y = random_point<double>(rng, d, 2.5);
    auto z = random_point<double>(rng, d, 2.5);
    double dxy = lorentz::geodesic_distance<double>(x, y);
    double dyx = lorentz::geodesic_distance<double>(y, x);
    double dxz = lorentz::geodesic_distance<double>(x, z);
    double dzy = lorentz::geodesic_distance<double>(z, y);
    CHECK(dxy == doctest::Approx(dyx).epsilon(1e-12));
    CHECK(dxy >= 0.0);
    CHECK(dxy <= dxz + dzy + 1e-10);  // triangle inequality
    // d(x,x) = 0 within tolerance: fp drift of lifted points can push
    // -<x,x> slightly above 1, and acosh(1+delta) ~ sqrt(2*delta)
    CHECK(lorentz::geodesic_distance<double>(x, x) <= 1e-6);
    // monotone link: -<x,y> = cosh(d) >= 1
    double a = -lorentz::inner<double>(x, y);
    CHECK(a >= 1.0);
    CHECK(a == doctest::Approx(std::cosh(dxy)).epsilon(1e-9));
  }
}

TEST_CASE("pairwise squared distances match the naive oracle") {
  std::vector<double> z = {0.0};
  std::vector<double> out1(1);
  lorentz::pairwise_sqdist_expanded<double>(z, 1, z, 1, 1, out1);
  CHECK(out1[0] == 0.0);

  std::vector<double> e1 = {1, 0}, e2 = {0, 1};
  lorentz::pairwise_sqdist_expanded<double>(e1, 1, e2, 1, 2, out1);
  CHECK(out1[0] == doctest::Approx(2.0).epsilon(1e-15));

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  const std::size_t n = 8, m = 8, d = 16;
  std::vector<double> a(n * d), b(m * d), got(n * m);
  for (auto& e : a) e = dist(rng);
  for (auto& e : b) e = dist(rng);
  lorentz::pairwise_sqdist_expanded<double>(a, n, b, m, d, got);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        double diff = a[i * d + k] - b[j * d + k];
        s += diff * diff;
      }
      worst = std::max(worst, std::abs(s - got[i * m + j]));
      CHECK(got[i * m + j] >= 0.0);
    }
  CHECK(worst <= 1e-10);
}

TEST_CASE("origin map call counters are tagged by site") {
  lorentz::reset_map_call_counts();
  std::vector<double> v = {0.5, 0.5}, p(3), back(2);
  lorentz::exp_origin<double>(v, p, lorentz::MapSite::kAttentionLift);
  lorentz::exp_origin<double>(v, p, lorentz::MapSite::kAttentionLift);
  lorentz::log_origin<double>(p, back, lorentz::MapSite::kEmbedding);
  const auto& counts = lorentz::map_call_counts();
  CHECK(counts.exp_origin[static_cast<int>(lorentz::MapSite::kAttentionLift)] == 2);
  CHECK(counts.exp_origin[static_cast<int>(lorentz::MapSite::kEmbedding)] == 0);
  CHECK(counts.log_origin[static_cast<int>(lorentz::MapSite::kEmbedding)] == 1);
  CHECK(counts.exp_total() == 2);
  CHECK(counts.log_total() == 1);
  lorentz::reset_map_call_counts();
  CHECK(lorentz::map_call_counts().exp_total() == 0);
}
