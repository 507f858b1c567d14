#include "pvae/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

namespace pvae {

Vector lifetime_sparsity(const Matrix& responses) {
  const Eigen::Index n = responses.rows();
  if (n < 2) throw DomainError("lifetime_sparsity: need at least two stimuli");
  const double nd = static_cast<double>(n);
  Vector s(responses.cols());
  for (Eigen::Index j = 0; j < responses.cols(); ++j) {
    const double sum = responses.col(j).sum();
    const double sum_sq = responses.col(j).squaredNorm();
    if (sum_sq <= 0.0) {
      s(j) = 1.0;
      continue;
    }
    const double v = (1.0 - sum * sum / (nd * sum_sq)) / (1.0 - 1.0 / nd);
    s(j) = std::clamp(v, 0.0, 1.0);
  }
  return s;
}

ActiveNeurons dead_neuron_fraction(const Vector& per_latent_kl, int bins) {
  const Eigen::Index k = per_latent_kl.size();
  if (k < 2) throw DomainError("dead_neuron_fraction: need at least two latents");
  if (bins < 2) throw DomainError("dead_neuron_fraction: need at least two bins");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (per_latent_kl(i) > 0.0) {
      const double v = std::log10(per_latent_kl(i));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  ActiveNeurons out;
  out.threshold = 0.0;
  if (!std::isfinite(lo) || hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    // One populated bin at most: no gap to cut at.
    return out;
  }
  const double width = (hi - lo) / bins;
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (Eigen::Index i = 0; i < k; ++i) {
    int b = 0;
    if (per_latent_kl(i) > 0.0) {
      b = static_cast<int>(std::floor((std::log10(per_latent_kl(i)) - lo) / width));
      b = std::clamp(b, 0, bins - 1);
    }
    ++counts[static_cast<std::size_t>(b)];
  }

  int best_start = -1;
  int best_len = 0;
  for (int b = 0; b < bins;) {
    if (counts[static_cast<std::size_t>(b)] != 0) {
      ++b;
      continue;
    }
    int e = b;
    while (e < bins && counts[static_cast<std::size_t>(e)] == 0) ++e;
    // Runs touching the histogram ends do not separate two masses.
    if (b > 0 && e < bins && e - b > best_len) {
      best_len = e - b;
      best_start = b;
    }
    b = e;
  }
  if (best_start < 0) return out;

  const double cut_log = lo + width * (best_start + best_len);
  out.threshold = std::pow(10.0, cut_log);
  out.gap_found = true;
  Eigen::Index active = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    if (per_latent_kl(i) > 0.0 && std::log10(per_latent_kl(i)) > cut_log) ++active;
  }
  out.active_fraction = static_cast<double>(active) / static_cast<double>(k);
  return out;
}

double knn_accuracy(const RepresentationSet& train, const RepresentationSet& test, int k, Eigen::Index n_labeled,
                    RngStream& rng) {
  if (train.features.rows() != train.labels.size() || test.features.rows() != test.labels.size()) {
    throw ShapeError("knn_accuracy: feature rows and label counts differ");
  }
  if (train.features.cols() != test.features.cols()) throw ShapeError("knn_accuracy: feature dimensions differ");
  if (n_labeled < 1 || n_labeled > train.features.rows()) throw DomainError("knn_accuracy: n_labeled out of range");
  if (k < 1 || k > n_labeled) throw DomainError("knn_accuracy: k out of range");

  std::vector<Eigen::Index> pool(static_cast<std::size_t>(train.features.rows()));
  std::iota(pool.begin(), pool.end(), 0);
  for (Eigen::Index i = 0; i < n_labeled; ++i) {
    const auto span = static_cast<std::uint64_t>(pool.size()) - static_cast<std::uint64_t>(i);
    const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(rng.next_u64() % span);
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  Matrix labeled(n_labeled, train.features.cols());
  IntVector labeled_y(n_labeled);
  for (Eigen::Index i = 0; i < n_labeled; ++i) {
    labeled.row(i) = train.features.row(pool[static_cast<std::size_t>(i)]);
    labeled_y(i) = train.labels(pool[static_cast<std::size_t>(i)]);
  }

  const int max_label = std::max(labeled_y.maxCoeff(), 0);
  Eigen::Index correct = 0;
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n_labeled));
  std::vector<int> votes(static_cast<std::size_t>(max_label) + 1);
  for (Eigen::Index t = 0; t < test.features.rows(); ++t) {
    for (Eigen::Index i = 0; i < n_labeled; ++i) {
      dist[static_cast<std::size_t>(i)] = {(labeled.row(i) - test.features.row(t)).squaredNorm(), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    int top = 0;
    for (int i = 0; i < k; ++i) {
      top = std::max(top, ++votes[static_cast<std::size_t>(labeled_y(dist[static_cast<std::size_t>(i)].second))]);
    }
    int predicted = -1;
    for (int i = 0; i < k && predicted < 0; ++i) {
      const int label = labeled_y(dist[static_cast<std::size_t>(i)].second);
      if (votes[static_cast<std::size_t>(label)] == top) predicted = label;
    }
    if (predicted == test.labels(t)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.features.rows());
}

Vector LogisticModel::decision(const Matrix& features) const {
  return (features * weights).array() + bias;
}

double LogisticModel::accuracy(const Matrix& features, const IntVector& labels01) const {
  const Vector d = decision(features);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) correct += (d(i) > 0.0 ? 1 : 0) == labels01(i);
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

namespace {

// log(1 + exp(v)) without overflow.
double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

double logistic(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

LogisticModel logistic_regression_fit(const Matrix& features, const IntVector& labels01, double l2_weight,
                                      int max_iters) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (labels01.size() != n) throw ShapeError("logistic_regression_fit: label count differs from rows");
  if (n == 0) throw DomainError("logistic_regression_fit: empty training set");
  const Eigen::Index positives = (labels01.array() == 1).count();
  if ((labels01.array() != 0 && labels01.array() != 1).any()) {
    throw DomainError("logistic_regression_fit: labels must be 0 or 1");
  }
  if (positives == 0 || positives == n) throw DomainError("logistic_regression_fit: both classes must be present");
  if (l2_weight < 0.0) throw DomainError("logistic_regression_fit: negative l2 weight");

  // Augmented design [X 1]; the bias is not regularized.
  Matrix design(n, d + 1);
  design.leftCols(d) = features;
  design.col(d).setOnes();
  const Vector y = labels01.cast<double>();
  const double inv_n = 1.0 / static_cast<double>(n);

  Vector theta = Vector::Zero(d + 1);
  Vector reg = Vector::Constant(d + 1, l2_weight);
  reg(d) = 0.0;

  const auto objective = [&](const Vector& th) {
    const Vector margin = design * th;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) loss += softplus(margin(i)) - y(i) * margin(i);
    return loss * inv_n + 0.5 * (reg.array() * th.array().square()).sum();
  };

  LogisticModel out;
  double value = objective(theta);
  for (int it = 0; it < max_iters; ++it) {
    const Vector margin = design * theta;
    const Vector prob = margin.unaryExpr([](double v) { return logistic(v); });
    const Vector grad = design.transpose() * (prob - y) * inv_n + reg.cwiseProduct(theta);
    out.gradient_norm = grad.norm();
    out.iterations = it;
    if (out.gradient_norm <= 1e-6) break;

    const Vector curvature = prob.cwiseProduct(Vector::Ones(n) - prob) * inv_n;
    Matrix hessian = design.transpose() * curvature.asDiagonal() * design;
    hessian.diagonal() += reg + Vector::Constant(d + 1, 1e-10);
    const Vector step = hessian.ldlt().solve(grad);

    // Backtracking keeps the separable (l2 = 0) case monotone.
    double t = 1.0;
    Vector candidate = theta - step;
    double cand_value = objective(candidate);
    while (cand_value > value - 1e-4 * t * grad.dot(step) && t > 1e-10) {
      t *= 0.5;
      candidate = theta - t * step;
      cand_value = objective(candidate);
    }
    if (cand_value >= value) break;
    theta = candidate;
    value = cand_value;
    out.iterations = it + 1;
  }
  out.weights = theta.head(d);
  out.bias = theta(d);
  out.train_accuracy = out.accuracy(features, labels01);
  return out;
}

ShatteringResult shattering_dim(const RepresentationSet& train, const RepresentationSet& test, double l2_weight,
                                int max_iters) {
  constexpr int kClasses = 10;
  for (const auto* set : {&train, &test}) {
    if (set->features.rows() != set->labels.size()) throw ShapeError("shattering_dim: rows and labels differ");
    for (int c = 0; c < kClasses; ++c) {
      if ((set->labels.array() == c).count() == 0) {
        throw DomainError("shattering_dim: class " + std::to_string(c) + " missing");
      }
    }
  }
  if (train.features.cols() != test.features.cols()) throw ShapeError("shattering_dim: feature dimensions differ");

  const Eigen::RowVectorXd mean = train.features.colwise().mean();
  Eigen::RowVectorXd sd = (train.features.rowwise() - mean).colwise().norm() /
                          std::sqrt(static_cast<double>(train.features.rows()));
  sd = sd.unaryExpr([](double v) { return v > 1e-12 ? v : 1.0; });
  const Matrix xtr = (train.features.rowwise() - mean).array().rowwise() / sd.array();
  const Matrix xte = (test.features.rowwise() - mean).array().rowwise() / sd.array();

  ShatteringResult out;
  for (unsigned mask = 0; mask < (1u << kClasses); ++mask) {
    if (std::popcount(mask) != kClasses / 2) continue;
    const auto relabel = [mask](const IntVector& labels) {
      return labels.unaryExpr([mask](int c) { return static_cast<int>((mask >> c) & 1u); }).eval();
    };
    const LogisticModel fit = logistic_regression_fit(xtr, relabel(train.labels), l2_weight, max_iters);
    out.per_dichotomy.push_back(fit.accuracy(xte, relabel(test.labels)));
  }
  out.mean_accuracy = std::accumulate(out.per_dichotomy.begin(), out.per_dichotomy.end(), 0.0) /
                      static_cast<double>(out.per_dichotomy.size());
  return out;
}

double t_interval_halfwidth(const std::vector<double>& values, double confidence) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  const double t = boost::math::quantile(dist, 0.5 + confidence / 2.0);
  return t * sd / std::sqrt(static_cast<double>(n));
}

std::vector<PercentDropRow> percent_drop(const std::vector<LossSample>& samples) {
  if (samples.empty()) throw DomainError("percent_drop: no losses");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) best = std::min(best, s.loss);
  if (!(best > 0.0)) throw DomainError("percent_drop: best loss must be positive");

  std::vector<PercentDropRow> rows;
  for (const auto& s : samples) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const PercentDropRow& r) { return r.method == s.method; });
    if (it == rows.end()) {
      rows.push_back(PercentDropRow{s.method, 0.0, 0.0, {}});
      it = rows.end() - 1;
    }
    it->drops.push_back(100.0 * (s.loss - best) / best);
  }
  for (auto& r : rows) {
    r.mean = std::accumulate(r.drops.begin(), r.drops.end(), 0.0) / static_cast<double>(r.drops.size());
    r.ci99 = t_interval_halfwidth(r.drops, 0.99);
  }
  return rows;
}

}  // namespace pvae
