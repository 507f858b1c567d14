#pragma once

#include <string>
#include <vector>

#include "pvae/numkit.hpp"

namespace pvae {

enum class FeatureKind { kLogDeltaRate, kPosteriorMean, kSamples };

struct RepresentationSet {
  Matrix features;  // N x K
  IntVector labels;
  FeatureKind kind = FeatureKind::kPosteriorMean;
};

/// Per-latent selectivity
///   s_j = (1 - 1/N)^-1 (1 - (sum_i z_ij)^2 / (N sum_i z_ij^2)),
/// with s_j = 1 for a column that never responds. Throws DomainError for N < 2.
Vector lifetime_sparsity(const Matrix& responses);

struct ActiveNeurons {
  double active_fraction = 1.0;
  double threshold = 0.0;  // KL value; latents strictly above it are active
  bool gap_found = false;
};

/// Dead-latent detection from per-latent KL: histogram log10 KL in 50 bins
/// over the observed range (zero KL goes to the lowest bin) and cut at the
/// upper edge of the widest run of empty bins.
ActiveNeurons dead_neuron_fraction(const Vector& per_latent_kl, int bins = 50);

/// k-NN accuracy on `test` using `n_labeled` points drawn without
/// replacement from `train`. Majority vote; ties go to the tied label whose
/// member is closest.
double knn_accuracy(const RepresentationSet& train, const RepresentationSet& test, int k, Eigen::Index n_labeled,
                    RngStream& rng);

struct LogisticModel {
  Vector weights;
  double bias = 0.0;
  double train_accuracy = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;

  Vector decision(const Matrix& features) const;
  double accuracy(const Matrix& features, const IntVector& labels01) const;
};

/// L2-regularized logistic regression by damped Newton iterations on
///   mean_i log(1 + exp(-y_i (w.x_i + b))) + l2/2 |w|^2.
/// Stops at gradient norm <= 1e-6 or after max_iters. Labels are 0/1.
LogisticModel logistic_regression_fit(const Matrix& features, const IntVector& labels01, double l2_weight,
                                      int max_iters = 100);

struct ShatteringResult {
  double mean_accuracy = 0.0;
  std::vector<double> per_dichotomy;  // 252 entries
};

/// Mean validation accuracy of logistic regression over all C(10, 5) = 252
/// balanced class dichotomies (complements counted separately). Features
/// are standardized with training statistics first.
ShatteringResult shattering_dim(const RepresentationSet& train, const RepresentationSet& test,
                                double l2_weight = 1e-4, int max_iters = 50);

struct LossSample {
  std::string method;
  int seed = 0;
  double loss = 0.0;
};

struct PercentDropRow {
  std::string method;
  double mean = 0.0;
  double ci99 = 0.0;  // half-width of the 99% t-interval
  std::vector<double> drops;
};

/// Drop relative to the best loss over every method and seed:
/// 100 (loss - best) / best, summarized per method in first-seen order.
std::vector<PercentDropRow> percent_drop(const std::vector<LossSample>& samples);

/// Half-width of a two-sided t confidence interval for the mean.
double t_interval_halfwidth(const std::vector<double>& values, double confidence = 0.99);

}  // namespace pvae
