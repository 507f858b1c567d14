#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "pvae/dists.hpp"
#include "pvae/numkit.hpp"

namespace pvae {

enum class Family : std::uint8_t { kPoisson = 0, kGaussian = 1, kLaplace = 2 };
enum class EncoderKind : std::uint8_t { kLinear = 0, kMlp1 = 1 };
enum class GradMode : std::uint8_t { kExact = 0, kMonteCarlo = 1, kStraightThrough = 2 };

std::string_view to_string(Family f);
std::string_view to_string(EncoderKind k);
std::string_view to_string(GradMode m);
Family parse_family(std::string_view s);
EncoderKind parse_encoder_kind(std::string_view s);
GradMode parse_grad_mode(std::string_view s);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::kLinear;
  Eigen::Index hidden = 512;  // mlp1 only
};

/// Every learnable tensor of a linear-decoder VAE. Doubles as the gradient
/// container: a gradient has exactly the shapes of the parameters.
///
/// Encoder heads read from the input (linear) or from the swish hidden layer
/// (mlp1). For the Poisson family `loc` is the log-deviation head,
/// log dr = loc(x); for Gaussian/Laplace it is the location head and `scale`
/// the log-scale head. Vectors are stored as single-column matrices.
struct VaeParams {
  Matrix hidden_w;  // H x M
  Matrix hidden_b;  // H x 1
  Matrix loc_w;     // K x D
  Matrix loc_b;     // K x 1 (mlp1)
  Matrix scale_w;   // K x D (Gaussian, Laplace)
  Matrix scale_b;   // K x 1 (mlp1, Gaussian, Laplace)
  Matrix phi;       // M x K decoder dictionary
  Matrix log_rate;  // K x 1 log prior rates (Poisson)

  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  VaeParams zeros_like() const;
  double squared_norm() const;
  Eigen::Index size() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    const auto apply = [&f](const char* name, auto& m) {
      if (m.size() > 0) f(name, m);
    };
    apply("hidden_w", self.hidden_w);
    apply("hidden_b", self.hidden_b);
    apply("loc_w", self.loc_w);
    apply("loc_b", self.loc_b);
    apply("scale_w", self.scale_w);
    apply("scale_b", self.scale_b);
    apply("phi", self.phi);
    apply("log_rate", self.log_rate);
  }
};

struct LinearVae {
  Family family = Family::kPoisson;
  EncoderSpec encoder;
  double beta = 1.0;
  GradMode mode = GradMode::kExact;
  VaeParams params;

  Eigen::Index input_dim() const { return params.phi.rows(); }
  Eigen::Index latent_dim() const { return params.phi.cols(); }
  Vector prior_rate() const;
};

/// Encoder weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, unit-norm
/// random dictionary columns, prior rates 1.
LinearVae make_vae(Family family, EncoderSpec encoder, Eigen::Index input_dim, Eigen::Index latent_dim,
                   double beta, GradMode mode, RngStream& rng);

/// Floor applied to Gaussian/Laplace log-scales before exponentiation.
inline constexpr double kMinLogScale = -10.0;

/// Posterior parameters for a batch. Hidden activations are kept for the
/// backward pass of the mlp1 encoder.
struct Posterior {
  Family family = Family::kPoisson;
  Matrix hidden_pre;  // B x H (mlp1)
  Matrix hidden;      // B x H (mlp1)
  Matrix loc;         // Poisson: log dr; otherwise location
  Matrix log_scale;   // raw head output (Gaussian, Laplace)
  Matrix scale;       // sigma or b after flooring
  Matrix delta_rate;  // dr (Poisson)
  Matrix rate;        // r * dr (Poisson)

  Matrix mean() const;
  Matrix variance() const;
};

Posterior encode(const LinearVae& model, const Matrix& x);

/// Batch-averaged loss pieces. total = recon + kl_weight * kl.
struct LossReport {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  Vector per_latent_kl;
};

/// Per-latent KL of each sample (B x K).
Matrix kl_per_sample(const LinearVae& model, const Posterior& post);

/// Closed-form loss for a linear decoder:
///   recon = ||x - Phi m||^2 + v . diag(Phi^T Phi)
/// with (m, v) the posterior mean and variance, plus beta * KL.
LossReport loss_exact(const LinearVae& model, const Matrix& x);

/// Gradient of loss_exact with respect to every parameter.
VaeParams grad_exact(const LinearVae& model, const Matrix& x);

/// Monte-Carlo reconstruction with reparameterized samples (relaxed Poisson
/// at `temperature` for the Poisson family); KL stays closed form.
LossReport loss_mc(const LinearVae& model, const Matrix& x, int n_samples, double temperature, RngStream& rng);

/// Straight-through: integer Poisson samples forward, dz/dlambda := 1 backward.
LossReport loss_st(const LinearVae& model, const Matrix& x, RngStream& rng);

/// Settings for one combined loss/gradient evaluation.
struct StepOptions {
  GradMode mode = GradMode::kExact;
  double kl_weight = 1.0;
  int n_samples = 1;
  double temperature = 1.0;           // forward temperature (Poisson MC)
  double backward_temperature = 1.0;  // used when forward temperature is 0 in MC mode
  bool want_grad = true;
};

struct LossAndGrad {
  LossReport report;
  VaeParams grad;  // empty tensors when want_grad is false
};

/// The engine behind loss_exact/loss_mc/loss_st/grad_exact. In MC mode a
/// forward temperature of 0 with a positive backward temperature gives the
/// hard-forward (surrogate gradient) variant.
LossAndGrad loss_and_grad(const LinearVae& model, const Matrix& x, const StepOptions& opts, RngStream* rng);

/// MC gradient estimate (pathwise), the companion of loss_mc.
VaeParams grad_mc(const LinearVae& model, const Matrix& x, int n_samples, double temperature, RngStream& rng);
/// Straight-through gradient estimate, the companion of loss_st.
VaeParams grad_st(const LinearVae& model, const Matrix& x, RngStream& rng);

/// Mean closed-form loss at beta = 1 (the negative ELBO per sample),
/// evaluated in chunks of `chunk` rows.
double elbo_report(const LinearVae& model, const Matrix& x, Eigen::Index chunk = 1024);

/// Validation summary at beta = 1: negative ELBO, reconstruction and KL,
/// plus the per-latent KL averaged over the set.
LossReport evaluate_exact(const LinearVae& model, const Matrix& x, Eigen::Index chunk = 1024);

/// Expanded lin|lin Poisson loss:
///   l^T Phi^T Phi l + l^T diag(Phi^T Phi - beta I) + l^T (beta W - 2 Phi^T) x
///   + beta sum r + x^T x,   l = r * exp(W x).
/// Batch mean. Linear Poisson encoders only.
double linlin_poisson_loss_expanded(const LinearVae& model, const Matrix& x);

/// Representation used by the geometry metrics: log dr for Poisson,
/// posterior mean otherwise.
Matrix representation(const LinearVae& model, const Matrix& x);

/// Integer posterior samples at temperature 0 (Poisson) or reparameterized
/// samples (Gaussian, Laplace).
Matrix posterior_sample(const LinearVae& model, const Matrix& x, RngStream& rng);

}  // namespace pvae
