#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pvae/dists.hpp"

using namespace pvae;

namespace {

Matrix constant(Eigen::Index rows, double v) { return Matrix::Constant(rows, 1, v); }

struct Moments {
  double mean = 0, var = 0, se = 0;
};

Moments moments(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Moments m;
  m.mean = v.mean();
  m.var = (v.array() - m.mean).square().sum() / static_cast<double>(v.size() - 1);
  m.se = std::sqrt(m.var / static_cast<double>(v.size()));
  return m;
}

Eigen::VectorXd column(const Matrix& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

}  // namespace

TEST_CASE("hard Poisson samples have Poisson moments") {
  RngStream rng(1, 0);
  const auto s = poisson_rsample(constant(100000, 4.0), adaptive_n_exp(4.0), 0.0, rng);
  const auto m = moments(column(s.counts));
  CHECK(std::abs(m.mean - 4.0) <= 3.0 * std::sqrt(4.0 / 1e5));
  CHECK(m.var == doctest::Approx(4.0).epsilon(0.03));
  CHECK((s.counts.array() == s.counts.array().round()).all());
}

TEST_CASE("tiny rate gives almost only zeros") {
  RngStream rng(2, 0);
  const auto s = poisson_rsample(constant(100000, 0.001), adaptive_n_exp(0.001), 0.0, rng);
  CHECK((s.counts.array() == 0.0).cast<double>().mean() >= 0.998);
}

TEST_CASE("pathwise gradient matches finite differences under common random numbers") {
  const double rate = 1.0, t = 0.2, h = 1e-5;
  const std::int64_t n_exp = adaptive_n_exp(rate + h);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream r0(seed, 9), rp(seed, 9), rm(seed, 9);
    const auto s = poisson_rsample(constant(4, rate), n_exp, t, r0);
    const Matrix g = poisson_rsample_grad(s, constant(4, rate));
    const Matrix up = poisson_rsample(constant(4, rate + h), n_exp, t, rp).counts;
    const Matrix down = poisson_rsample(constant(4, rate - h), n_exp, t, rm).counts;
    const Matrix fd = (up - down) / (2 * h);
    for (Eigen::Index i = 0; i < 4; ++i) {
      CHECK(std::abs(fd(i) - g(i)) <= 1e-5 * std::max(std::abs(g(i)), 1e-3));
    }
  }
}

TEST_CASE("expected pathwise gradient approaches one for large rates") {
  RngStream rng(3, 0);
  const double rate = 30.0;
  const auto s = poisson_rsample(constant(20000, rate), adaptive_n_exp(rate), 0.1, rng);
  const Matrix g = poisson_rsample_grad(s, constant(20000, rate));
  CHECK(g.mean() == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("saturated sigmoids give zero gradient") {
  RngStream rng(4, 0);
  const auto s = poisson_rsample(constant(1000, 1e-4), 3, 0.01, rng);
  // With rate 1e-4 nearly every arrival lands far beyond the unit window.
  const Matrix g = poisson_rsample_grad(s, constant(1000, 1e-4));
  int saturated = 0;
  for (Eigen::Index i = 0; i < 1000; ++i) {
    if (s.arrival_times[0](i) > 2.0) {
      ++saturated;
      CHECK(std::abs(g(i)) < 1e-12);
    }
  }
  CHECK(saturated > 950);
}

TEST_CASE("relaxed sampler rejects bad inputs") {
  RngStream rng(5, 0);
  CHECK_THROWS_AS(poisson_rsample(constant(2, -1.0), 3, 0.1, rng), DomainError);
  CHECK_THROWS_AS(poisson_rsample(constant(2, 1.0), 0, 0.1, rng), DomainError);
  CHECK_THROWS_AS(poisson_rsample(constant(2, 1.0), 3, -0.1, rng), DomainError);
  const auto hard = poisson_rsample(constant(2, 1.0), 3, 0.0, rng);
  CHECK_THROWS_AS(poisson_rsample_grad(hard, constant(2, 1.0)), DomainError);
}

TEST_CASE("fused sampler reproduces the cached sampler") {
  RngStream rng_init(6, 0);
  const Matrix rate = random_matrix(64, 33, rng_init, [](RngStream& g) { return 0.01 + 5.0 * g.uniform(); });
  const std::int64_t n_exp = adaptive_n_exp(rate.maxCoeff());
  for (double t : {0.0, 0.05, 0.5}) {
    RngStream a(7, 1), b(7, 1);
    const auto cached = poisson_rsample(rate, n_exp, t, a);
    const double back = t > 0 ? t : 0.3;
    const auto fused = poisson_rsample_fused(rate, n_exp, t, back, PoissonBackward::kRelaxed, b);
    CHECK((cached.counts - fused.counts).cwiseAbs().maxCoeff() <= 1e-12);
    if (t > 0) {
      const Matrix g = poisson_rsample_grad(cached, rate);
      CHECK((g - fused.dcounts).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK(a.next_u64() == b.next_u64());
  }
  RngStream c(7, 1);
  const auto st = poisson_rsample_fused(rate, n_exp, 0.0, 0.0, PoissonBackward::kStraightThrough, c);
  CHECK((st.dcounts.array() == 1.0).all());
}

TEST_CASE("Poisson KL examples") {
  Vector r(3);
  r << 2.0, 3.0, 0.7;
  Matrix dr(1, 3);
  dr << std::numbers::e, 0.0, 1.0;
  const Matrix kl = kl_poisson(r, dr);
  CHECK(kl(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(kl(0, 1) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::abs(kl(0, 2)) <= 1e-12);
  CHECK_THROWS_AS(kl_poisson(r, Matrix::Ones(1, 2)), ShapeError);
}

TEST_CASE("quadratic Poisson KL approximation") {
  Vector r2 = Vector::Constant(1, 2.0);
  CHECK(kl_poisson_quadratic(r2, Matrix::Constant(1, 1, 0.1))(0, 0) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(kl_poisson_quadratic(r2, Matrix::Zero(1, 1))(0, 0) == 0.0);
  Vector r1 = Vector::Constant(1, 1.0);
  const double eps = 0.01;
  const double exact = kl_poisson(r1, Matrix::Constant(1, 1, 1 + eps))(0, 0);
  const double quad = kl_poisson_quadratic(r1, Matrix::Constant(1, 1, eps))(0, 0);
  // (1+e)log(1+e) - e = e^2/2 - e^3/6 + ..., so the remainder is below e^3/6 + e^4.
  CHECK(std::abs(exact - quad) <= std::pow(eps, 3) / 6 + std::pow(eps, 4));
}

TEST_CASE("Gaussian and Laplace KL examples") {
  GaussianParams g{Matrix(1, 3), Matrix(1, 3)};
  g.mean << 0, 1, 0;
  g.log_std << 0, 0, std::log(2.0);
  const Matrix kg = kl_gaussian_std(g);
  CHECK(kg(0, 0) == doctest::Approx(0.0));
  CHECK(kg(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(kg(0, 2) == doctest::Approx(0.5 * (4 - std::log(4.0) - 1)).epsilon(1e-12));

  LaplaceParams l{Matrix(1, 2), Matrix::Zero(1, 2)};
  l.location << 0, 1;
  const Matrix kl = kl_laplace_std(l);
  CHECK(std::abs(kl(0, 0)) <= 1e-15);
  CHECK(kl(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("all KLs are nonnegative on random parameters") {
  RngStream rng(8, 0);
  const auto n = [](RngStream& g) { return 2.0 * g.normal(); };
  const Matrix a = random_matrix(100, 100, rng, n), b = random_matrix(100, 100, rng, n);
  Vector r = random_matrix(100, 1, rng, [](RngStream& g) { return 0.01 + 3 * g.uniform(); });
  CHECK((kl_poisson(r, b.array().exp().matrix()).array() >= 0).all());
  CHECK((kl_gaussian_std({a, b}).array() >= -1e-15).all());
  CHECK((kl_laplace_std({a, b}).array() >= -1e-15).all());
  CHECK(kl_poisson(r, Matrix::Ones(3, 100)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("Monte-Carlo KL estimates agree with the closed forms") {
  const Eigen::Index n = 1000000;
  RngStream rng(9, 0);

  {  // Laplace(1, 1) against Laplace(0, 1)
    LaplaceParams p{Matrix::Ones(n, 1), Matrix::Zero(n, 1)};
    const Matrix z = laplace_rsample(p, rng);
    const Eigen::VectorXd log_ratio = (-(z.array() - 1.0).abs() + z.array().abs()).matrix();
    const auto m = moments(log_ratio);
    CHECK(std::abs(m.mean - std::exp(-1.0)) <= 3 * m.se);
  }
  {  // N(0, 4) against N(0, 1)
    GaussianParams p{Matrix::Zero(n, 1), Matrix::Constant(n, 1, std::log(2.0))};
    const Matrix z = gaussian_rsample(p, rng);
    const Eigen::VectorXd log_ratio =
        (-std::log(2.0) - z.array().square() / 8.0 + z.array().square() / 2.0).matrix();
    const auto m = moments(log_ratio);
    CHECK(std::abs(m.mean - kl_gaussian_std({Matrix::Zero(1, 1), Matrix::Constant(1, 1, std::log(2.0))})(0, 0)) <=
          3 * m.se);
  }
  {  // Pois(2e) against Pois(2)
    const double r = 2.0, dr = std::numbers::e;
    const auto s = poisson_rsample_fused(constant(n, r * dr), adaptive_n_exp(r * dr), 0.0, 0.0,
                                        PoissonBackward::kStraightThrough, rng);
    const Eigen::VectorXd log_ratio = (s.counts.array() * std::log(dr) - r * (dr - 1.0)).matrix().reshaped();
    const auto m = moments(log_ratio);
    CHECK(std::abs(m.mean - 2.0) <= 3 * m.se);
  }
}

TEST_CASE("continuous reparameterized samplers") {
  RngStream rng(10, 0);
  const Eigen::Index n = 100000;
  GaussianParams tight{Matrix::Constant(3, 2, 1.5), Matrix::Constant(3, 2, -800.0)};
  CHECK(gaussian_rsample(tight, rng) == tight.mean);

  GaussianParams g{Matrix::Constant(n, 1, -2.0), Matrix::Constant(n, 1, std::log(0.5))};
  const auto mg = moments(column(gaussian_rsample(g, rng)));
  CHECK(std::abs(mg.mean + 2.0) <= 3 * 0.5 / std::sqrt(double(n)));

  LaplaceParams l{Matrix::Constant(n, 1, 0.5), Matrix::Constant(n, 1, std::log(1.5))};
  const auto ml = moments(column(laplace_rsample(l, rng)));
  CHECK(std::abs(ml.mean - 0.5) <= 3 * std::sqrt(2 * 1.5 * 1.5 / double(n)));
  CHECK(ml.var == doctest::Approx(2 * 1.5 * 1.5).epsilon(0.03));
}
