#include "pvae/models.hpp"

#include <algorithm>
#include <cmath>

namespace pvae {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::kPoisson: return "poisson";
    case Family::kGaussian: return "gaussian";
    case Family::kLaplace: return "laplace";
  }
  return "?";
}

std::string_view to_string(EncoderKind k) { return k == EncoderKind::kLinear ? "linear" : "mlp1"; }

std::string_view to_string(GradMode m) {
  switch (m) {
    case GradMode::kExact: return "ex";
    case GradMode::kMonteCarlo: return "mc";
    case GradMode::kStraightThrough: return "st";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "poisson" || s == "p") return Family::kPoisson;
  if (s == "gaussian" || s == "g") return Family::kGaussian;
  if (s == "laplace" || s == "l") return Family::kLaplace;
  throw ConfigError("unknown family '" + std::string(s) + "'");
}

EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "linear" || s == "lin") return EncoderKind::kLinear;
  if (s == "mlp1") return EncoderKind::kMlp1;
  throw ConfigError("unknown encoder kind '" + std::string(s) + "'");
}

GradMode parse_grad_mode(std::string_view s) {
  if (s == "ex" || s == "exact") return GradMode::kExact;
  if (s == "mc") return GradMode::kMonteCarlo;
  if (s == "st") return GradMode::kStraightThrough;
  throw ConfigError("unknown gradient mode '" + std::string(s) + "'");
}

VaeParams VaeParams::zeros_like() const {
  VaeParams out;
  const auto zero = [](const Matrix& m) { return Matrix::Zero(m.rows(), m.cols()).eval(); };
  out.hidden_w = zero(hidden_w);
  out.hidden_b = zero(hidden_b);
  out.loc_w = zero(loc_w);
  out.loc_b = zero(loc_b);
  out.scale_w = zero(scale_w);
  out.scale_b = zero(scale_b);
  out.phi = zero(phi);
  out.log_rate = zero(log_rate);
  return out;
}

double VaeParams::squared_norm() const {
  double s = 0.0;
  for_each([&s](const char*, const Matrix& m) { s += m.squaredNorm(); });
  return s;
}

Eigen::Index VaeParams::size() const {
  Eigen::Index n = 0;
  for_each([&n](const char*, const Matrix& m) { n += m.size(); });
  return n;
}

Vector LinearVae::prior_rate() const {
  if (family != Family::kPoisson) throw ConfigError("prior_rate: only Poisson models carry prior rates");
  return params.log_rate.col(0).array().exp().matrix();
}

LinearVae make_vae(Family family, EncoderSpec encoder, Eigen::Index input_dim, Eigen::Index latent_dim,
                   double beta, GradMode mode, RngStream& rng) {
  if (input_dim < 1 || latent_dim < 1) throw ConfigError("make_vae: dimensions must be positive");
  if (!(beta > 0.0)) throw ConfigError("make_vae: beta must be positive");
  if (encoder.kind == EncoderKind::kMlp1 && encoder.hidden < 1) throw ConfigError("make_vae: hidden width must be positive");
  if (mode == GradMode::kStraightThrough && family != Family::kPoisson) {
    throw ConfigError("make_vae: straight-through is defined for the Poisson family only");
  }

  LinearVae vae;
  vae.family = family;
  vae.encoder = encoder;
  vae.beta = beta;
  vae.mode = mode;

  const auto uniform_init = [&rng](Eigen::Index rows, Eigen::Index cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    return random_matrix(rows, cols, rng, [bound](RngStream& r) { return bound * (2.0 * r.uniform() - 1.0); });
  };

  Eigen::Index head_in = input_dim;
  VaeParams& p = vae.params;
  if (encoder.kind == EncoderKind::kMlp1) {
    p.hidden_w = uniform_init(encoder.hidden, input_dim);
    p.hidden_b = Matrix::Zero(encoder.hidden, 1);
    head_in = encoder.hidden;
  }
  p.loc_w = uniform_init(latent_dim, head_in);
  if (encoder.kind == EncoderKind::kMlp1) p.loc_b = Matrix::Zero(latent_dim, 1);
  if (family != Family::kPoisson) {
    p.scale_w = uniform_init(latent_dim, head_in);
    if (encoder.kind == EncoderKind::kMlp1) p.scale_b = Matrix::Zero(latent_dim, 1);
  }

  p.phi = standard_normal(input_dim, latent_dim, rng);
  p.phi.colwise().normalize();
  if (family == Family::kPoisson) p.log_rate = Matrix::Zero(latent_dim, 1);
  return vae;
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix affine(const Matrix& in, const Matrix& w, const Matrix& b) {
  Matrix out = in * w.transpose();
  if (b.size() > 0) out.rowwise() += b.col(0).transpose();
  return out;
}

// Row vector of squared dictionary column norms, diag(Phi^T Phi).
Eigen::RowVectorXd column_energy(const Matrix& phi) { return phi.colwise().squaredNorm(); }

}  // namespace

Matrix Posterior::mean() const { return family == Family::kPoisson ? rate : loc; }

Matrix Posterior::variance() const {
  switch (family) {
    case Family::kPoisson: return rate;
    case Family::kGaussian: return scale.array().square().matrix();
    case Family::kLaplace: return (2.0 * scale.array().square()).matrix();
  }
  return {};
}

Posterior encode(const LinearVae& model, const Matrix& x) {
  const VaeParams& p = model.params;
  if (x.cols() != model.input_dim()) {
    throw ShapeError("encode: input has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(model.input_dim()));
  }
  Posterior post;
  post.family = model.family;
  const Matrix* features = &x;
  if (model.encoder.kind == EncoderKind::kMlp1) {
    post.hidden_pre = affine(x, p.hidden_w, p.hidden_b);
    post.hidden = post.hidden_pre.unaryExpr([](double v) { return v * sigmoid(v); });
    features = &post.hidden;
  }
  post.loc = affine(*features, p.loc_w, p.loc_b);
  if (model.family == Family::kPoisson) {
    post.delta_rate = post.loc.array().exp().matrix();
    post.rate = post.delta_rate * model.prior_rate().asDiagonal();
  } else {
    post.log_scale = affine(*features, p.scale_w, p.scale_b);
    post.scale = post.log_scale.array().max(kMinLogScale).exp().matrix();
  }
  return post;
}

Matrix kl_per_sample(const LinearVae& model, const Posterior& post) {
  switch (model.family) {
    case Family::kPoisson: {
      // r f(dr) with log dr known exactly: f(dr) = 1 - dr + dr * log dr.
      const Matrix f = (1.0 - post.delta_rate.array() + post.delta_rate.array() * post.loc.array()).matrix();
      return f * model.prior_rate().asDiagonal();
    }
    case Family::kGaussian: {
      const auto s = post.log_scale.array().max(kMinLogScale);
      return (0.5 * (post.loc.array().square() + (2.0 * s).exp() - 2.0 * s - 1.0)).matrix();
    }
    case Family::kLaplace:
      return laplace_kl_terms(post.loc.array(), post.scale.array()).matrix();
  }
  return {};
}

namespace {

// Backpropagate head-output gradients (already divided by the batch size)
// into the encoder weights.
void encoder_backward(const LinearVae& model, const Matrix& x, const Posterior& post, const Matrix& g_loc,
                      const Matrix& g_scale, VaeParams& grad) {
  const VaeParams& p = model.params;
  const bool has_scale = model.family != Family::kPoisson;
  if (model.encoder.kind == EncoderKind::kLinear) {
    grad.loc_w.noalias() = g_loc.transpose() * x;
    if (has_scale) grad.scale_w.noalias() = g_scale.transpose() * x;
    return;
  }
  grad.loc_w.noalias() = g_loc.transpose() * post.hidden;
  grad.loc_b = g_loc.colwise().sum().transpose();
  Matrix g_hidden = g_loc * p.loc_w;
  if (has_scale) {
    grad.scale_w.noalias() = g_scale.transpose() * post.hidden;
    grad.scale_b = g_scale.colwise().sum().transpose();
    g_hidden.noalias() += g_scale * p.scale_w;
  }
  const Matrix swish_grad = post.hidden_pre.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s + v * s * (1.0 - s);
  });
  const Matrix g_pre = g_hidden.cwiseProduct(swish_grad);
  grad.hidden_w.noalias() = g_pre.transpose() * x;
  grad.hidden_b = g_pre.colwise().sum().transpose();
}

}  // namespace

LossAndGrad loss_and_grad(const LinearVae& model, const Matrix& x, const StepOptions& opts, RngStream* rng) {
  const Posterior post = encode(model, x);
  const VaeParams& p = model.params;
  const Eigen::Index batch = x.rows();
  const Eigen::Index latents = model.latent_dim();
  if (batch == 0) throw DomainError("loss_and_grad: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double w = opts.kl_weight;
  const bool poisson = model.family == Family::kPoisson;

  if (opts.mode == GradMode::kStraightThrough && !poisson) {
    throw ConfigError("straight-through estimator is defined for the Poisson family only");
  }
  if (opts.mode != GradMode::kExact) {
    if (rng == nullptr) throw ConfigError("sampling estimators need a random stream");
    if (opts.n_samples < 1) throw ConfigError("n_samples must be at least 1");
  }
  if (opts.mode == GradMode::kMonteCarlo && poisson && !(opts.temperature > 0.0) &&
      !(opts.backward_temperature > 0.0)) {
    throw ConfigError("Monte-Carlo Poisson estimator needs a positive temperature");
  }

  LossAndGrad out;
  const Matrix kl = kl_per_sample(model, post);
  out.report.per_latent_kl = kl.colwise().mean().transpose();
  out.report.kl = out.report.per_latent_kl.sum();

  const Eigen::RowVectorXd energy = column_energy(p.phi);
  Matrix g_rate;   // d loss / d rate (Poisson), summed over the batch
  Matrix g_loc;    // d loss / d head outputs
  Matrix g_scale;  // d loss / d raw log-scale
  if (opts.want_grad) {
    out.grad = p.zeros_like();
    if (poisson) {
      g_rate = Matrix::Zero(batch, latents);
    } else {
      g_loc = Matrix::Zero(batch, latents);
      g_scale = Matrix::Zero(batch, latents);
    }
  }

  double recon = 0.0;
  if (opts.mode == GradMode::kExact) {
    const Matrix mean = post.mean();
    const Matrix var = post.variance();
    const Matrix resid = x - mean * p.phi.transpose();
    recon = (resid.rowwise().squaredNorm().sum() + (var * energy.transpose()).sum()) * inv_b;
    if (opts.want_grad) {
      const Matrix g_mean = -2.0 * resid * p.phi;
      out.grad.phi.noalias() = resid.transpose() * mean;
      out.grad.phi *= -2.0 * inv_b;
      out.grad.phi.array() += p.phi.array().rowwise() * ((2.0 * inv_b) * var.colwise().sum()).array();
      switch (model.family) {
        case Family::kPoisson:
          g_rate = g_mean;
          g_rate.rowwise() += energy;
          break;
        case Family::kGaussian:
          g_loc = g_mean;
          g_scale = (2.0 * post.scale.array().square()).matrix() * energy.asDiagonal();
          break;
        case Family::kLaplace:
          g_loc = g_mean;
          g_scale = (4.0 * post.scale.array().square()).matrix() * energy.asDiagonal();
          break;
      }
    }
  } else {
    const double inv_s = 1.0 / opts.n_samples;
    const std::int64_t n_exp = poisson ? adaptive_n_exp(post.rate.maxCoeff()) : 0;
    for (int s = 0; s < opts.n_samples; ++s) {
      Matrix z;
      Matrix dz;  // d z / d rate (Poisson) or d z / d raw log-scale
      if (poisson) {
        PoissonDraw draw;
        if (opts.mode == GradMode::kStraightThrough) {
          draw = poisson_rsample_fused(post.rate, n_exp, 0.0, 0.0, PoissonBackward::kStraightThrough, *rng);
        } else {
          const double back = opts.temperature > 0.0 ? opts.temperature : opts.backward_temperature;
          draw = poisson_rsample_fused(post.rate, n_exp, opts.temperature, back, PoissonBackward::kRelaxed, *rng);
        }
        z = std::move(draw.counts);
        dz = std::move(draw.dcounts);
      } else if (model.family == Family::kGaussian) {
        const Matrix xi = standard_normal(batch, latents, *rng);
        dz = post.scale.cwiseProduct(xi);
        z = post.loc + dz;
      } else {
        const Matrix u = centered_uniform(batch, latents, *rng);
        dz = (post.scale.array() * laplace_noise_transform(u.array())).matrix();
        z = post.loc + dz;
      }
      const Matrix resid = x - z * p.phi.transpose();
      recon += resid.rowwise().squaredNorm().sum() * inv_b * inv_s;
      if (opts.want_grad) {
        const Matrix g_z = -2.0 * resid * p.phi;
        Matrix g_phi;
        g_phi.noalias() = resid.transpose() * z;
        out.grad.phi += (-2.0 * inv_b * inv_s) * g_phi;
        if (poisson) {
          g_rate.noalias() += inv_s * g_z.cwiseProduct(dz);
        } else {
          g_loc.noalias() += inv_s * g_z;
          g_scale.noalias() += inv_s * g_z.cwiseProduct(dz);
        }
      }
    }
  }

  out.report.recon = recon;
  out.report.total = recon + w * out.report.kl;
  if (!std::isfinite(out.report.total)) throw NumericalError("loss_and_grad: non-finite loss");
  if (!opts.want_grad) return out;

  switch (model.family) {
    case Family::kPoisson: {
      // rate = exp(log_rate + loc): d rate / d loc = d rate / d log_rate = rate.
      const Matrix g_rate_chain = g_rate.cwiseProduct(post.rate);
      g_loc = g_rate_chain + w * post.rate.cwiseProduct(post.loc);
      out.grad.log_rate = (g_rate_chain.colwise().sum().transpose() * inv_b) + w * out.report.per_latent_kl;
      break;
    }
    case Family::kGaussian: {
      g_loc.noalias() += w * post.loc;
      g_scale.array() += w * (post.scale.array().square() - 1.0);
      break;
    }
    case Family::kLaplace: {
      const Eigen::ArrayXXd mu = post.loc.array();
      const Eigen::ArrayXXd b = post.scale.array();
      const Eigen::ArrayXXd decay = (-mu.abs() / b).exp();
      g_loc.array() += w * mu.sign() * (1.0 - decay);
      g_scale.array() += w * (decay * (b + mu.abs()) - 1.0);
      break;
    }
  }
  if (!poisson) {
    // The floored log-scale is constant below the floor.
    g_scale = (post.log_scale.array() < kMinLogScale).select(0.0, g_scale.array()).matrix();
  }
  g_loc *= inv_b;
  if (!poisson) g_scale *= inv_b;
  encoder_backward(model, x, post, g_loc, g_scale, out.grad);
  return out;
}

LossReport loss_exact(const LinearVae& model, const Matrix& x) {
  StepOptions opts;
  opts.mode = GradMode::kExact;
  opts.kl_weight = model.beta;
  opts.want_grad = false;
  return loss_and_grad(model, x, opts, nullptr).report;
}

VaeParams grad_exact(const LinearVae& model, const Matrix& x) {
  StepOptions opts;
  opts.mode = GradMode::kExact;
  opts.kl_weight = model.beta;
  return loss_and_grad(model, x, opts, nullptr).grad;
}

namespace {

StepOptions mc_options(const LinearVae& model, int n_samples, double temperature, bool want_grad) {
  if (model.family == Family::kPoisson && !(temperature > 0.0)) {
    throw ConfigError("Monte-Carlo mode needs temperature > 0 for the Poisson family");
  }
  StepOptions opts;
  opts.mode = GradMode::kMonteCarlo;
  opts.kl_weight = model.beta;
  opts.n_samples = n_samples;
  opts.temperature = temperature;
  opts.backward_temperature = temperature;
  opts.want_grad = want_grad;
  return opts;
}

StepOptions st_options(const LinearVae& model, bool want_grad) {
  if (model.family != Family::kPoisson) throw ConfigError("straight-through is defined for the Poisson family only");
  StepOptions opts;
  opts.mode = GradMode::kStraightThrough;
  opts.kl_weight = model.beta;
  opts.want_grad = want_grad;
  return opts;
}

}  // namespace

LossReport loss_mc(const LinearVae& model, const Matrix& x, int n_samples, double temperature, RngStream& rng) {
  return loss_and_grad(model, x, mc_options(model, n_samples, temperature, false), &rng).report;
}

VaeParams grad_mc(const LinearVae& model, const Matrix& x, int n_samples, double temperature, RngStream& rng) {
  return loss_and_grad(model, x, mc_options(model, n_samples, temperature, true), &rng).grad;
}

LossReport loss_st(const LinearVae& model, const Matrix& x, RngStream& rng) {
  return loss_and_grad(model, x, st_options(model, false), &rng).report;
}

VaeParams grad_st(const LinearVae& model, const Matrix& x, RngStream& rng) {
  return loss_and_grad(model, x, st_options(model, true), &rng).grad;
}

LossReport evaluate_exact(const LinearVae& model, const Matrix& x, Eigen::Index chunk) {
  if (x.rows() == 0) throw DomainError("evaluate_exact: empty dataset");
  StepOptions opts;
  opts.mode = GradMode::kExact;
  opts.kl_weight = 1.0;
  opts.want_grad = false;
  LossReport acc;
  acc.per_latent_kl = Vector::Zero(model.latent_dim());
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index rows = std::min(chunk, x.rows() - start);
    const LossReport part = loss_and_grad(model, x.middleRows(start, rows), opts, nullptr).report;
    const double weight = static_cast<double>(rows) / n;
    acc.total += weight * part.total;
    acc.recon += weight * part.recon;
    acc.kl += weight * part.kl;
    acc.per_latent_kl += weight * part.per_latent_kl;
  }
  return acc;
}

double elbo_report(const LinearVae& model, const Matrix& x, Eigen::Index chunk) {
  return evaluate_exact(model, x, chunk).total;
}

double linlin_poisson_loss_expanded(const LinearVae& model, const Matrix& x) {
  if (model.family != Family::kPoisson || model.encoder.kind != EncoderKind::kLinear) {
    throw ConfigError("expanded lin|lin loss needs a Poisson model with a linear encoder");
  }
  const VaeParams& p = model.params;
  const double beta = model.beta;
  const Matrix act = x * p.loc_w.transpose();
  const Vector r = model.prior_rate();
  const Matrix lam = act.array().exp().matrix() * r.asDiagonal();
  const Matrix gram = p.phi.transpose() * p.phi;
  const Eigen::RowVectorXd diag_shift = gram.diagonal().transpose().array() - beta;

  const double quad = ((lam * gram).cwiseProduct(lam)).sum();
  const double diag = (lam * diag_shift.transpose()).sum();
  const double cross = lam.cwiseProduct(beta * act - 2.0 * x * p.phi).sum();
  const double n = static_cast<double>(x.rows());
  return (quad + diag + cross) / n + beta * r.sum() + x.rowwise().squaredNorm().sum() / n;
}

Matrix representation(const LinearVae& model, const Matrix& x) { return encode(model, x).loc; }

Matrix posterior_sample(const LinearVae& model, const Matrix& x, RngStream& rng) {
  const Posterior post = encode(model, x);
  switch (model.family) {
    case Family::kPoisson:
      return poisson_rsample_fused(post.rate, adaptive_n_exp(post.rate.maxCoeff()), 0.0, 0.0,
                                   PoissonBackward::kStraightThrough, rng)
          .counts;
    case Family::kGaussian:
      return gaussian_rsample(GaussianParams{post.loc, post.log_scale.array().max(kMinLogScale).matrix()}, rng);
    case Family::kLaplace:
      return laplace_rsample(LaplaceParams{post.loc, post.log_scale.array().max(kMinLogScale).matrix()}, rng);
  }
  return {};
}

}  // namespace pvae
