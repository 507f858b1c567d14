#pragma once

#include <cstdint>
#include <vector>

#include "pvae/numkit.hpp"

namespace pvae {

/// Output of the relaxed Poisson sampler.
///
/// counts(b, k) = sum_j sigmoid((1 - S_j) / T) where S_j is the j-th arrival
/// time of a rate-lambda(b, k) Poisson process; at T = 0 the sigmoid is the
/// hard step 1[S_j <= 1] and counts are exact Poisson draws (truncated at
/// n_exp events).
struct RelaxedPoissonSample {
  Matrix counts;
  std::vector<Matrix> inter_event_times;  // n_exp slices of B x K
  std::vector<Matrix> arrival_times;      // prefix sums of the above
  double temperature = 0.0;
  std::int64_t n_exp = 0;

  bool has_cache() const { return !arrival_times.empty(); }
};

RelaxedPoissonSample poisson_rsample(const Matrix& rate, std::int64_t n_exp, double temperature,
                                     RngStream& rng);

/// Pathwise derivative d counts / d rate of a cached relaxed sample.
///
/// Arrival times scale as S_j = E_j / rate for fixed unit-rate noise E_j, so
/// dS_j/drate = -S_j / rate and
///   dz/drate = sum_j sigmoid'((1 - S_j)/T) * S_j / (T * rate).
Matrix poisson_rsample_grad(const RelaxedPoissonSample& sample, const Matrix& rate);

/// How the backward pass treats the Poisson sampler.
enum class PoissonBackward {
  kRelaxed,          // pathwise through the sigmoid at the backward temperature
  kStraightThrough,  // dz/drate := 1
};

struct PoissonDraw {
  Matrix counts;
  Matrix dcounts;  // d counts / d rate
};

/// Single-pass sampler used by training: draws the same noise, in the same
/// order, as poisson_rsample but keeps no per-event cache. The forward
/// counts use `forward_temperature` (0 gives integer counts) while the
/// derivative uses `backward_temperature`, which allows hard-forward
/// (surrogate-gradient) training.
PoissonDraw poisson_rsample_fused(const Matrix& rate, std::int64_t n_exp, double forward_temperature,
                                  double backward_temperature, PoissonBackward backward,
                                  RngStream& rng);

/// Residual f(y) = 1 - y + y log y with the continuous limit f(0) = 1.
template <typename Derived>
auto poisson_residual(const Eigen::ArrayBase<Derived>& y) {
  using Scalar = typename Derived::Scalar;
  return (y > Scalar(0)).select(Scalar(1) - y + y * y.max(Scalar(1e-300)).log(), Scalar(1));
}

/// KL(Pois(r * dr) || Pois(r)) = r * f(dr), per sample (rows) and latent (cols).
Matrix kl_poisson(const Vector& prior_rate, const Matrix& delta_rate);

/// Second-order approximation r * eps^2 / 2 of kl_poisson at dr = 1 + eps.
/// Diagnostic only; not used in any objective.
Matrix kl_poisson_quadratic(const Vector& prior_rate, const Matrix& eps);

struct GaussianParams {
  Matrix mean;
  Matrix log_std;

  Matrix stddev() const { return log_std.array().exp().matrix(); }
};

struct LaplaceParams {
  Matrix location;
  Matrix log_scale;

  Matrix scale() const { return log_scale.array().exp().matrix(); }
};

/// KL(N(mu, sigma^2) || N(0, 1)) = (mu^2 + sigma^2 - log sigma^2 - 1) / 2.
template <typename DerivedMu, typename DerivedSigma>
auto gaussian_kl_terms(const Eigen::ArrayBase<DerivedMu>& mu, const Eigen::ArrayBase<DerivedSigma>& sigma) {
  return 0.5 * (mu.square() + sigma.square() - 2.0 * sigma.log() - 1.0);
}

/// KL(Laplace(mu, b) || Laplace(0, 1)) = -log b + b exp(-|mu|/b) + |mu| - 1.
template <typename DerivedMu, typename DerivedScale>
auto laplace_kl_terms(const Eigen::ArrayBase<DerivedMu>& mu, const Eigen::ArrayBase<DerivedScale>& b) {
  return -b.log() + b * (-mu.abs() / b).exp() + mu.abs() - 1.0;
}

Matrix kl_gaussian_std(const GaussianParams& params);
Matrix kl_laplace_std(const LaplaceParams& params);

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, RngStream& rng);
/// Uniform on (-1/2, 1/2), the Laplace reparameterization noise.
Matrix centered_uniform(Eigen::Index rows, Eigen::Index cols, RngStream& rng);

/// mu + sigma * xi with xi ~ N(0, 1).
Matrix gaussian_rsample(const GaussianParams& params, RngStream& rng);
/// mu - b * sign(u) * log(1 - 2|u|) with u ~ U(-1/2, 1/2).
Matrix laplace_rsample(const LaplaceParams& params, RngStream& rng);

/// Laplace reparameterization for given noise; also the pathwise map used
/// by the models module.
template <typename DerivedU>
auto laplace_noise_transform(const Eigen::ArrayBase<DerivedU>& u) {
  return -u.sign() * (1.0 - 2.0 * u.abs()).log();
}

}  // namespace pvae
