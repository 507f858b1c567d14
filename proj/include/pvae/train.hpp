#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pvae/checkpoint.hpp"
#include "pvae/models.hpp"

namespace pvae {

enum class TemperatureShape { kLinear, kExponential };

std::string_view to_string(TemperatureShape s);
TemperatureShape parse_temperature_shape(std::string_view s);

struct Schedules {
  double lr0 = 0.005;
  int total_epochs = 100;
  double t_start = 1.0;
  double t_final = 0.05;
  TemperatureShape t_shape = TemperatureShape::kLinear;
  double kl_ramp = 0.5;  // fraction of training over which the KL weight ramps to beta
  std::optional<int> hard_forward_after;

  void validate() const;
};

double cosine_lr(double epoch, double total, double lr0);
/// Scheduled temperature: annealed over the first half of training, flat after.
double temperature_at(double epoch, const Schedules& s);
/// Temperature used by the forward pass: 0 once hard-forward is active.
double forward_temperature_at(double epoch, const Schedules& s);
double kl_weight_at(double epoch, const Schedules& s, double beta);

struct AdaMaxState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  VaeParams m;
  VaeParams u;
};

AdaMaxState make_adamax(const VaeParams& like);

/// m <- b1 m + (1-b1) g; u <- max(b2 u, |g|); p <- p - lr/(1-b1^t) m/(u+eps).
void adamax_step(AdaMaxState& state, VaeParams& params, const VaeParams& grads, double lr);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double temperature = 0.0;
  double beta_eff = 0.0;
  double train_loss = 0.0;
  double val_nelbo = 0.0;
  double val_mse = 0.0;
  double val_kl = 0.0;
};

struct TrainConfig {
  Schedules schedules;
  Eigen::Index batch_size = 256;
  int n_samples = 1;
  std::uint64_t seed = 0;
  /// Checkpoints (best.ckpt, last.ckpt, abort.ckpt) and metrics.csv go here when set.
  std::string out_dir;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  LinearVae final_model;
  LinearVae best_model;
  double initial_val_nelbo = 0.0;
  double best_val_nelbo = 0.0;
  int best_epoch = -1;  // -1: the initial model
  std::vector<EpochMetrics> log;
};

/// Resumable state carried in checkpoint extras.
std::vector<NamedTensor> training_state_tensors(const AdaMaxState& opt, int next_epoch, double best_val,
                                                int best_epoch, double initial_val);

/// Minibatch training. Validation NELBO is evaluated with the closed form at
/// beta = 1 (equivalently T = 0 samples in expectation) after every epoch.
/// Throws NumericalError on a non-finite training loss after writing
/// abort.ckpt when an output directory is configured.
TrainResult train(LinearVae model, const Matrix& train_x, const Matrix& val_x, const TrainConfig& cfg);

/// Continues a run from last.ckpt written by `train` with the same config.
TrainResult resume(const Checkpoint& last, const LinearVae& best, const Matrix& train_x, const Matrix& val_x,
                   const TrainConfig& cfg);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

}  // namespace pvae
