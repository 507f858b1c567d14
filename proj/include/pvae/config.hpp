#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pvae/models.hpp"
#include "pvae/sparsecode.hpp"
#include "pvae/train.hpp"

namespace pvae {

struct DataSpec {
  std::string source = "mnist";  // mnist | cache | patches | synthetic
  std::string mnist_dir = "mnist";
  std::string train_cache;
  std::string val_cache;
  std::string image_dir = "images";
  int patch_size = 16;
  std::int64_t train_count = 0;  // 0 keeps every sample (mnist, cache)
  std::int64_t val_count = 0;
  std::int64_t synth_dim = 64;
  std::int64_t synth_atoms = 100;
  std::int64_t synth_active = 3;
  double synth_noise = 0.01;
  std::uint64_t seed = 1234;  // patch sampling and synthetic data

  bool operator==(const DataSpec&) const = default;
};

struct ModelSpec {
  Family family = Family::kPoisson;
  EncoderKind encoder = EncoderKind::kLinear;
  std::int64_t hidden = 512;
  std::int64_t latents = 512;
  double beta = 1.0;
  GradMode mode = GradMode::kExact;

  bool operator==(const ModelSpec&) const = default;
};

struct TrainSpec {
  int epochs = 100;
  std::int64_t batch_size = 256;
  double lr = 0.005;
  double t_start = 1.0;
  double t_final = 0.05;
  TemperatureShape t_shape = TemperatureShape::kLinear;
  double kl_ramp = 0.5;
  int hard_forward_after = -1;  // -1 disables
  int n_samples = 1;

  Schedules schedules() const;
  bool operator==(const TrainSpec&) const = default;
};

struct SparseSpec {
  Solver solver = Solver::kLca;
  double beta = 0.1;
  int n_iters = 500;
  double step_size = 0.0;
  bool nonnegative = true;
  Threshold threshold = Threshold::kHard;
  double lr = 1e-2;
  int epochs = 100;
  std::int64_t atoms = 512;
  std::int64_t batch_size = 256;
  double beta_start = 0.1;
  double beta_end = 0.1;
  double beta_step = 0.0;
  int beta_interval = 5;
  std::vector<double> betas = {0.05, 0.1, 0.2, 0.4, 0.8};  // sc-infer grid

  SparseCodeConfig inference() const;
  bool operator==(const SparseSpec&) const = default;
};

struct RunSpec {
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir = "runs";
  int jobs = 1;
  std::vector<GradMode> compare_modes = {GradMode::kExact, GradMode::kMonteCarlo};
  std::vector<double> betas = {0.2, 0.6, 1.0, 2.0};  // sweep grid

  bool operator==(const RunSpec&) const = default;
};

struct RunConfig {
  DataSpec data;
  ModelSpec model;
  TrainSpec train;
  SparseSpec sparse;
  RunSpec run;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// INI text: "[section]" headers and "key = value" lines; '#' and ';' start
/// comments. Unknown sections or keys are rejected.
RunConfig parse_config(const std::string& text);
/// {"section": {"key": value}} with the same keys as the INI form.
RunConfig parse_config_json(const std::string& text);
/// Reads INI, or JSON when the path ends in .json.
RunConfig load_config(const std::string& path);
std::string render_config(const RunConfig& cfg);

/// "0,2,5" or ranges such as "0-4"; throws ConfigError when empty or malformed.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace pvae
