#include "pvae/sparsecode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pvae/metrics.hpp"

namespace pvae {

Dictionary::Dictionary(Matrix phi, RngStream* rng) : phi_(std::move(phi)) {
  if (phi_.size() == 0) throw ShapeError("Dictionary: empty basis");
  require_finite(phi_, "Dictionary");
  normalize(rng);
}

void Dictionary::update(const Matrix& delta, RngStream* rng) {
  if (delta.rows() != phi_.rows() || delta.cols() != phi_.cols()) throw ShapeError("Dictionary::update: shape");
  phi_ += delta;
  require_finite(phi_, "Dictionary::update");
  normalize(rng);
}

void Dictionary::normalize(RngStream* rng) {
  norms_ = phi_.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < phi_.cols(); ++j) {
    if (norms_(j) > 1e-12) {
      phi_.col(j) /= norms_(j);
      continue;
    }
    if (rng == nullptr) throw DomainError("Dictionary: zero column " + std::to_string(j));
    for (Eigen::Index i = 0; i < phi_.rows(); ++i) phi_(i, j) = rng->normal();
    phi_.col(j).normalize();
  }
}

double BetaSchedule::at(int epoch) const {
  if (interval <= 0 || step <= 0.0) return start;
  const double v = start + step * static_cast<double>(epoch / interval);
  return std::min(v, end);
}

void SparseCodeConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("sparse coding: beta must be nonnegative");
  if (n_iters < 1) throw ConfigError("sparse coding: n_iters must be positive");
  if (step_size < 0.0) throw ConfigError("sparse coding: step size must be positive (0 selects 1/L)");
  if (schedule && schedule->start > schedule->end) throw ConfigError("sparse coding: beta schedule start > end");
}

double lipschitz_constant(const Matrix& phi, int iters) {
  const Matrix gram = phi.transpose() * phi;
  Vector v = Vector::Ones(gram.rows()) / std::sqrt(static_cast<double>(gram.rows()));
  double value = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vector w = gram * v;
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    v = w / next;
    const bool done = std::abs(next - value) <= 1e-12 * next;
    value = next;
    if (done) break;
  }
  return value;
}

double sparse_objective(const Matrix& x, const Matrix& phi, const Matrix& z, double beta) {
  return 0.5 * (x - z * phi.transpose()).squaredNorm() + beta * z.cwiseAbs().sum();
}

namespace {

double soft(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

double threshold(double u, double beta, Threshold kind, bool nonnegative) {
  if (nonnegative && u <= 0.0) return 0.0;
  if (kind == Threshold::kSoft) return soft(u, beta);
  return std::abs(u) > beta ? u : 0.0;
}

double default_step(const Matrix& phi, double requested) {
  if (requested > 0.0) return requested;
  const double lip = lipschitz_constant(phi, 1000);
  // Power iteration approaches L from below; keep a margin so the step
  // stays under 1/L.
  return lip > 0.0 ? 0.99 / lip : 1.0;
}

// Counts consecutive objective increases and raises once the run is long.
class DivergenceGuard {
 public:
  explicit DivergenceGuard(const char* who, double ceiling) : who_(who), ceiling_(ceiling) {}

  void observe(double objective) {
    if (!std::isfinite(objective)) throw StepSizeError(std::string(who_) + ": objective became non-finite");
    streak_ = objective > last_ ? streak_ + 1 : 0;
    last_ = objective;
    if (streak_ >= 10 && objective > ceiling_) {
      throw StepSizeError(std::string(who_) + ": objective increased for 10 consecutive iterations");
    }
  }

 private:
  const char* who_;
  double ceiling_;
  double last_ = std::numeric_limits<double>::infinity();
  int streak_ = 0;
};

void check_shapes(const Matrix& x, const Matrix& phi, const char* who) {
  if (x.cols() != phi.rows()) {
    throw ShapeError(std::string(who) + ": input dimension " + std::to_string(x.cols()) + " vs dictionary rows " +
                     std::to_string(phi.rows()));
  }
}

bool converged(const Matrix& prev, const Matrix& next, double tol) {
  const double scale = std::max(next.norm(), 1e-300);
  return (next - prev).norm() <= tol * scale;
}

}  // namespace

Matrix ista_infer(const Matrix& x, const Matrix& phi, const SparseCodeConfig& cfg, InferenceTrace* trace) {
  cfg.validate();
  check_shapes(x, phi, "ista_infer");
  const double eta = default_step(phi, cfg.step_size);
  const double shrink = eta * cfg.beta;

  Matrix z = Matrix::Zero(x.rows(), phi.cols());
  // Any increasing run is divergence for ISTA; no ceiling.
  DivergenceGuard guard("ista_infer", -std::numeric_limits<double>::infinity());
  if (trace) *trace = InferenceTrace{};
  Matrix residual = x;
  for (int it = 0; it < cfg.n_iters; ++it) {
    const double objective = 0.5 * residual.squaredNorm() + cfg.beta * z.cwiseAbs().sum();
    if (trace) trace->objective.push_back(objective);
    guard.observe(objective);

    Matrix next = z + eta * (residual * phi);
    next = next.unaryExpr([&](double v) {
      const double s = soft(v, shrink);
      return cfg.nonnegative ? std::max(s, 0.0) : s;
    });
    const bool done = converged(z, next, cfg.tolerance);
    z = std::move(next);
    residual = x - z * phi.transpose();
    if (trace) trace->iterations = it + 1;
    if (done) {
      if (trace) trace->converged = true;
      break;
    }
  }
  if (trace) trace->objective.push_back(0.5 * residual.squaredNorm() + cfg.beta * z.cwiseAbs().sum());
  return z;
}

Matrix lca_infer(const Matrix& x, const Matrix& phi, const SparseCodeConfig& cfg, InferenceTrace* trace) {
  cfg.validate();
  check_shapes(x, phi, "lca_infer");
  const double lip = lipschitz_constant(phi, 1000);
  const double eta = cfg.step_size > 0.0 ? cfg.step_size : std::min(1.0, lip > 0.0 ? 0.99 / lip : 1.0);

  const Matrix drive = x * phi;  // B x K
  Matrix gram = phi.transpose() * phi;
  gram.diagonal().array() -= 1.0;

  const auto activate = [&](const Matrix& u) {
    return u.unaryExpr([&](double v) { return threshold(v, cfg.beta, cfg.lca_threshold, cfg.nonnegative); }).eval();
  };

  Matrix u = Matrix::Zero(x.rows(), phi.cols());
  Matrix a = u;
  // LCA is not a descent method: when many units cross threshold together
  // the reconstruction can overshoot by up to the dictionary gain. Only a
  // climb well past that overshoot counts as divergence.
  DivergenceGuard guard("lca_infer", 10.0 * (1.0 + lip) * (1.0 + lip) * 0.5 * x.squaredNorm());
  if (trace) *trace = InferenceTrace{};
  for (int it = 0; it < cfg.n_iters; ++it) {
    const double objective = sparse_objective(x, phi, a, cfg.beta);
    if (trace) trace->objective.push_back(objective);
    guard.observe(objective);

    Matrix next = u + eta * (drive - u - a * gram);
    const bool done = converged(u, next, cfg.tolerance);
    u = std::move(next);
    a = activate(u);
    if (trace) trace->iterations = it + 1;
    if (done) {
      if (trace) trace->converged = true;
      break;
    }
  }
  if (trace) trace->objective.push_back(sparse_objective(x, phi, a, cfg.beta));
  return a;
}

Dictionary dict_learn(const Matrix& data, Eigen::Index atoms, const DictLearnConfig& cfg, RngStream& rng,
                      const Matrix* init) {
  cfg.inference.validate();
  if (atoms < 1) throw ConfigError("dict_learn: need at least one atom");
  if (cfg.batch_size < 1) throw ConfigError("dict_learn: batch size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("dict_learn: learning rate must be positive");
  if (data.rows() == 0) throw DataError("dict_learn: empty dataset");

  Dictionary dict = init ? Dictionary(*init, &rng)
                         : Dictionary(random_matrix(data.cols(), atoms, rng, [](RngStream& r) { return r.normal(); }),
                                      &rng);
  if (dict.input_dim() != data.cols() || dict.atoms() != atoms) throw ShapeError("dict_learn: initial dictionary");

  const Eigen::Index n = data.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Matrix batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    SparseCodeConfig inference = cfg.inference;
    if (inference.schedule) inference.beta = inference.schedule->at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min(cfg.batch_size, n - start);
      batch.resize(b, data.cols());
      for (Eigen::Index i = 0; i < b; ++i) batch.row(i) = data.row(order[static_cast<std::size_t>(start + i)]);
      const Matrix z = cfg.solver == Solver::kIsta ? ista_infer(batch, dict.phi(), inference)
                                                   : lca_infer(batch, dict.phi(), inference);
      const Matrix residual = batch - z * dict.phi().transpose();
      dict.update(cfg.learning_rate / static_cast<double>(b) * residual.transpose() * z, &rng);
    }
    if (cfg.on_epoch) cfg.on_epoch(epoch, dict);
  }
  return dict;
}

std::vector<RateDistortionPoint> lca_on_fixed_dictionary(const Matrix& phi, const Matrix& data,
                                                         const std::vector<double>& betas, SparseCodeConfig cfg) {
  check_shapes(data, phi, "lca_on_fixed_dictionary");
  std::vector<RateDistortionPoint> out;
  for (const double beta : betas) {
    cfg.beta = beta;
    const Matrix z = lca_infer(data, phi, cfg);
    RateDistortionPoint p;
    p.beta = beta;
    p.mse = (data - z * phi.transpose()).rowwise().squaredNorm().mean();
    p.sparsity = lifetime_sparsity(z).mean();
    p.l0 = static_cast<double>((z.array() != 0.0).count()) / static_cast<double>(z.rows());
    out.push_back(p);
  }
  return out;
}

std::vector<GridCandidate> default_sparse_grid() {
  const BetaSchedule schedules[] = {
      {0.05, 0.7, 0.1, 5}, {0.01, 0.1, 0.01, 5}, {0.1, 1.0, 0.1, 5},
      {0.05, 0.7, 0.05, 5}, {0.05, 0.5, 0.05, 5}, {0.1, 0.1, 0.0, 5},
  };
  std::vector<GridCandidate> grid;
  for (const double lr : {1e-1, 1e-2, 1e-3}) {
    for (const int iters : {100, 500, 900}) {
      for (const auto& s : schedules) grid.push_back({lr, iters, s});
    }
  }
  return grid;
}

}  // namespace pvae
