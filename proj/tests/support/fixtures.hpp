#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pvae/models.hpp"

namespace pvae::testing {

/// Small model with every parameter randomized (biases and prior rates too)
/// so no gradient entry is trivially zero.
inline LinearVae random_vae(Family family, EncoderKind kind, std::uint64_t seed, Eigen::Index m = 8,
                            Eigen::Index k = 12, Eigen::Index hidden = 6) {
  RngStream rng(seed, 1);
  LinearVae model = make_vae(family, {kind, hidden}, m, k, 1.0, GradMode::kExact, rng);
  model.params.for_each([&](const char*, Matrix& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += 0.3 * rng.normal();
  });
  return model;
}

inline Matrix random_batch(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  RngStream rng(seed, 2);
  return random_matrix(rows, cols, rng, [](RngStream& g) { return g.uniform(); });
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Entry-wise |analytic - fd| / max(|analytic|, |fd|, floor), central
/// differences with step `h` on every parameter.
inline GradCheck check_gradient(LinearVae model, const VaeParams& analytic,
                                const std::function<double(const LinearVae&)>& loss, double h = 1e-5,
                                double floor = 1e-4) {
  GradCheck out;
  std::vector<std::pair<std::string, Matrix*>> slots;
  model.params.for_each([&](const char* name, Matrix& t) { slots.emplace_back(name, &t); });
  std::vector<const Matrix*> grads;
  analytic.for_each([&](const char*, const Matrix& t) { grads.push_back(&t); });
  for (std::size_t s = 0; s < slots.size(); ++s) {
    Matrix& t = *slots[s].second;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double keep = t.data()[i];
      t.data()[i] = keep + h;
      const double up = loss(model);
      t.data()[i] = keep - h;
      const double down = loss(model);
      t.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double a = grads[s]->data()[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = slots[s].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

inline double cosine(const VaeParams& a, const VaeParams& b) {
  double dot = 0, na = 0, nb = 0;
  std::vector<const Matrix*> bs;
  b.for_each([&](const char*, const Matrix& t) { bs.push_back(&t); });
  std::size_t i = 0;
  a.for_each([&](const char*, const Matrix& t) {
    dot += (t.array() * bs[i]->array()).sum();
    na += t.squaredNorm();
    nb += bs[i]->squaredNorm();
    ++i;
  });
  return dot / std::sqrt(na * nb);
}

}  // namespace pvae::testing
