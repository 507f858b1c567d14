#include "pvae/dists.hpp"

#include <cmath>

namespace pvae {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_rates(const Matrix& rate, std::int64_t n_exp, const char* who) {
  if (n_exp < 1) throw DomainError(std::string(who) + ": n_exp must be at least 1");
  if (!(rate.array() > 0.0).all() || !rate.allFinite()) {
    throw DomainError(std::string(who) + ": rates must be positive and finite");
  }
}

void check_temperature(double t, const char* who) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError(std::string(who) + ": temperature must be >= 0");
}

}  // namespace

RelaxedPoissonSample poisson_rsample(const Matrix& rate, std::int64_t n_exp, double temperature,
                                     RngStream& rng) {
  check_rates(rate, n_exp, "poisson_rsample");
  check_temperature(temperature, "poisson_rsample");

  RelaxedPoissonSample out;
  out.temperature = temperature;
  out.n_exp = n_exp;
  out.counts = Matrix::Zero(rate.rows(), rate.cols());
  out.inter_event_times.assign(static_cast<std::size_t>(n_exp), Matrix(rate.rows(), rate.cols()));
  out.arrival_times.assign(static_cast<std::size_t>(n_exp), Matrix(rate.rows(), rate.cols()));

  for (Eigen::Index e = 0; e < rate.size(); ++e) {
    const double lambda = rate.data()[e];
    double arrival = 0.0;
    double count = 0.0;
    for (std::int64_t j = 0; j < n_exp; ++j) {
      const double dt = rng.exponential(lambda);
      arrival += dt;
      out.inter_event_times[j].data()[e] = dt;
      out.arrival_times[j].data()[e] = arrival;
      count += temperature > 0.0 ? sigmoid((1.0 - arrival) / temperature) : (arrival <= 1.0 ? 1.0 : 0.0);
    }
    out.counts.data()[e] = count;
  }
  return out;
}

Matrix poisson_rsample_grad(const RelaxedPoissonSample& sample, const Matrix& rate) {
  if (!(sample.temperature > 0.0)) {
    throw DomainError("poisson_rsample_grad: no pathwise gradient at temperature 0");
  }
  if (!sample.has_cache()) throw StateError("poisson_rsample_grad: sample carries no arrival-time cache");
  if (rate.rows() != sample.counts.rows() || rate.cols() != sample.counts.cols()) {
    throw ShapeError("poisson_rsample_grad: rate shape differs from sample shape");
  }
  const double t = sample.temperature;
  Matrix grad = Matrix::Zero(rate.rows(), rate.cols());
  for (const Matrix& times : sample.arrival_times) {
    for (Eigen::Index e = 0; e < rate.size(); ++e) {
      const double s = times.data()[e];
      const double sig = sigmoid((1.0 - s) / t);
      grad.data()[e] += sig * (1.0 - sig) * s / (t * rate.data()[e]);
    }
  }
  return grad;
}

// Arrivals this many temperatures past the window add terms below 5e-18.
constexpr double kTailCutoff = 40.0;

PoissonDraw poisson_rsample_fused(const Matrix& rate, std::int64_t n_exp, double forward_temperature,
                                  double backward_temperature, PoissonBackward backward,
                                  RngStream& rng) {
  check_rates(rate, n_exp, "poisson_rsample_fused");
  check_temperature(forward_temperature, "poisson_rsample_fused");
  if (backward == PoissonBackward::kRelaxed && !(backward_temperature > 0.0)) {
    throw DomainError("poisson_rsample_fused: relaxed backward pass needs a positive temperature");
  }

  PoissonDraw out{Matrix(rate.rows(), rate.cols()), Matrix(rate.rows(), rate.cols())};
  const bool relaxed = backward == PoissonBackward::kRelaxed;
  const double tail = kTailCutoff * std::max(forward_temperature, relaxed ? backward_temperature : 0.0);
  for (Eigen::Index e = 0; e < rate.size(); ++e) {
    const double lambda = rate.data()[e];
    double arrival = 0.0;
    double count = 0.0;
    double dcount = 0.0;
    for (std::int64_t j = 0; j < n_exp; ++j) {
      arrival += rng.exponential(lambda);
      count += forward_temperature > 0.0 ? sigmoid((1.0 - arrival) / forward_temperature)
                                         : (arrival <= 1.0 ? 1.0 : 0.0);
      if (relaxed) {
        const double sig = sigmoid((1.0 - arrival) / backward_temperature);
        dcount += sig * (1.0 - sig) * arrival;
      }
      // Later arrivals only add terms below exp(-tail_cutoff); skip their
      // draws so the next element starts at the same stream position.
      if (arrival - 1.0 > tail) {
        rng.discard(static_cast<std::uint64_t>(n_exp - 1 - j));
        break;
      }
    }
    out.counts.data()[e] = count;
    out.dcounts.data()[e] = relaxed ? dcount / (backward_temperature * lambda) : 1.0;
  }
  return out;
}

Matrix kl_poisson(const Vector& prior_rate, const Matrix& delta_rate) {
  if (prior_rate.size() != delta_rate.cols()) throw ShapeError("kl_poisson: prior length != latent count");
  if ((prior_rate.array() < 0.0).any() || (delta_rate.array() < 0.0).any()) {
    throw DomainError("kl_poisson: rates must be nonnegative");
  }
  Matrix out = poisson_residual(delta_rate.array()).matrix();
  return out * prior_rate.asDiagonal();
}

Matrix kl_poisson_quadratic(const Vector& prior_rate, const Matrix& eps) {
  if (prior_rate.size() != eps.cols()) throw ShapeError("kl_poisson_quadratic: prior length != latent count");
  Matrix out = (0.5 * eps.array().square()).matrix();
  return out * prior_rate.asDiagonal();
}

Matrix kl_gaussian_std(const GaussianParams& params) {
  if (params.mean.rows() != params.log_std.rows() || params.mean.cols() != params.log_std.cols()) {
    throw ShapeError("kl_gaussian_std: mean and log-std shapes differ");
  }
  // sigma^2 - log sigma^2 written through log_std to stay exact for tiny sigma.
  const auto s = params.log_std.array();
  return (0.5 * (params.mean.array().square() + (2.0 * s).exp() - 2.0 * s - 1.0)).matrix();
}

Matrix kl_laplace_std(const LaplaceParams& params) {
  if (params.location.rows() != params.log_scale.rows() || params.location.cols() != params.log_scale.cols()) {
    throw ShapeError("kl_laplace_std: location and log-scale shapes differ");
  }
  const Eigen::ArrayXXd b = params.log_scale.array().exp();
  if (!(b > 0.0).all()) throw DomainError("kl_laplace_std: scale must be positive");
  return laplace_kl_terms(params.location.array(), b).matrix();
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  return random_matrix(rows, cols, rng, [](RngStream& r) { return r.normal(); });
}

Matrix centered_uniform(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  return random_matrix(rows, cols, rng, [](RngStream& r) { return r.uniform() - 0.5; });
}

Matrix gaussian_rsample(const GaussianParams& params, RngStream& rng) {
  const Matrix xi = standard_normal(params.mean.rows(), params.mean.cols(), rng);
  return (params.mean.array() + params.log_std.array().exp() * xi.array()).matrix();
}

Matrix laplace_rsample(const LaplaceParams& params, RngStream& rng) {
  const Matrix u = centered_uniform(params.location.rows(), params.location.cols(), rng);
  return (params.location.array() + params.log_scale.array().exp() * laplace_noise_transform(u.array()))
      .matrix();
}

}  // namespace pvae
