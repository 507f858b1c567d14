#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "pvae/numkit.hpp"

namespace pvae {

/// Column-normalized basis. Atoms are the columns of `phi` (M x K).
class Dictionary {
 public:
  Dictionary() = default;
  /// Takes ownership and normalizes every column. A zero column is replaced
  /// with a random unit vector drawn from `rng` when given, otherwise
  /// rejected with DomainError.
  explicit Dictionary(Matrix phi, RngStream* rng = nullptr);

  const Matrix& phi() const { return phi_; }
  const Vector& column_norms() const { return norms_; }
  Eigen::Index input_dim() const { return phi_.rows(); }
  Eigen::Index atoms() const { return phi_.cols(); }

  /// Adds `delta` and renormalizes columns.
  void update(const Matrix& delta, RngStream* rng = nullptr);

 private:
  void normalize(RngStream* rng);

  Matrix phi_;
  Vector norms_;  // norms before the last renormalization
};

enum class Threshold { kHard, kSoft };

/// beta stepped from `start` by `step` every `interval` epochs, capped at `end`.
struct BetaSchedule {
  double start = 0.1;
  double end = 0.1;
  double step = 0.0;
  int interval = 5;

  double at(int epoch) const;
};

struct SparseCodeConfig {
  double beta = 0.1;
  int n_iters = 500;
  double step_size = 0.0;  // 0 picks 1/L from a power-iteration estimate
  bool nonnegative = false;
  Threshold lca_threshold = Threshold::kHard;
  double tolerance = 1e-6;  // relative change in z for early exit
  /// Learning only: overrides `beta` per epoch when set.
  std::optional<BetaSchedule> schedule;

  void validate() const;
};

/// Largest eigenvalue of phi^T phi by power iteration.
double lipschitz_constant(const Matrix& phi, int iters = 100);

/// 0.5 |x - phi z|^2 + beta |z|_1 summed over rows of x (B x M) and z (B x K).
double sparse_objective(const Matrix& x, const Matrix& phi, const Matrix& z, double beta);

struct InferenceTrace {
  std::vector<double> objective;  // per iterate, starting with z = 0
  int iterations = 0;
  bool converged = false;
};

/// Rows of x are independent problems; returns B x K codes.
Matrix ista_infer(const Matrix& x, const Matrix& phi, const SparseCodeConfig& cfg, InferenceTrace* trace = nullptr);
Matrix lca_infer(const Matrix& x, const Matrix& phi, const SparseCodeConfig& cfg, InferenceTrace* trace = nullptr);

enum class Solver { kIsta, kLca };

struct DictLearnConfig {
  SparseCodeConfig inference;
  Solver solver = Solver::kIsta;
  int epochs = 10;
  Eigen::Index batch_size = 256;
  double learning_rate = 1e-2;
  std::function<void(int epoch, const Dictionary&)> on_epoch;
};

/// Alternating minimization: sparse inference per batch, then
/// phi += lr (X - Z phi^T)^T Z / B and column renormalization.
Dictionary dict_learn(const Matrix& data, Eigen::Index atoms, const DictLearnConfig& cfg, RngStream& rng,
                      const Matrix* init = nullptr);

struct RateDistortionPoint {
  double beta = 0.0;
  double mse = 0.0;       // mean over samples of |x - phi z|^2
  double sparsity = 0.0;  // mean lifetime sparsity
  double l0 = 0.0;        // mean active coefficients per sample
};

std::vector<RateDistortionPoint> lca_on_fixed_dictionary(const Matrix& phi, const Matrix& data,
                                                         const std::vector<double>& betas,
                                                         SparseCodeConfig cfg = {});

struct GridCandidate {
  double learning_rate;
  int n_iters;
  BetaSchedule schedule;
};

/// 3 learning rates x 3 iteration limits x 6 beta schedules.
std::vector<GridCandidate> default_sparse_grid();

}  // namespace pvae
