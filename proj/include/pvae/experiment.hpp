#pragma once

#include <functional>
#include <string>

#include "pvae/config.hpp"
#include "pvae/data.hpp"
#include "pvae/metrics.hpp"
#include "pvae/train.hpp"

namespace pvae {

/// $PVAE_DATA_DIR, else the directory configured at build time.
std::string default_data_root();
/// Absolute paths pass through; relative ones are taken under `root`.
std::string resolve_data_path(const std::string& path, const std::string& root);

struct Datasets {
  DatasetSplit train;
  DatasetSplit val;
  std::optional<WhiteningTransform> whitening;
  Eigen::Index dropped_patches = 0;
  double whitening_condition = 0.0;
  Matrix true_dictionary;  // synthetic source only
};

Datasets load_datasets(const DataSpec& spec, const std::string& data_root);

// Stream id for model initialization under the run seed.
inline constexpr std::uint64_t kInitStream = 100;
inline constexpr std::uint64_t kEvalStream = 200;

struct RunOutcome {
  std::uint64_t seed = 0;
  GradMode mode = GradMode::kExact;
  double beta = 1.0;
  TrainResult result;
  LossReport val;  // best model, closed form at beta = 1
  ActiveNeurons active;
  double sparsity = 0.0;  // mean lifetime sparsity of T = 0 samples on val
  // The same for the last epoch's model. Best-checkpoint selection scores
  // beta = 1, so a beta sweep reads its rate-distortion points from here.
  LossReport final_val;
  double final_sparsity = 0.0;
  std::string out_dir;
};

struct RunRequest {
  std::uint64_t seed = 0;
  GradMode mode = GradMode::kExact;
  double beta = 1.0;
  std::string out_dir;  // empty: nothing written
  bool resume = false;
};

LinearVae initial_model(const ModelSpec& spec, Eigen::Index input_dim, std::uint64_t seed, GradMode mode,
                        double beta);

RunOutcome run_training(const RunConfig& cfg, const Datasets& data, const RunRequest& req);

/// Runs f(0..n-1) on up to `jobs` threads; the first exception is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& f);

RepresentationSet representation_set(const LinearVae& model, const DatasetSplit& split);
double mean_lifetime_sparsity(const LinearVae& model, const Matrix& x, std::uint64_t seed);

struct KnnSummary {
  Eigen::Index n_labeled = 0;
  double mean = 0.0;
  double ci99 = 0.0;
};

/// Splits `split` into two halves (first half labeled pool, second half test)
/// and averages knn_accuracy over `repeats` labeled subsets per size.
std::vector<KnnSummary> knn_grid(const LinearVae& model, const DatasetSplit& split,
                                 const std::vector<Eigen::Index>& sizes, int repeats, std::uint64_t seed, int k = 5);
ShatteringResult shattering_halves(const LinearVae& model, const DatasetSplit& split);

}  // namespace pvae
