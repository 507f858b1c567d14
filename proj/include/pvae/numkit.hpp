#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>

#include "pvae/errors.hpp"

namespace pvae {

// Every dense quantity in the library: inputs are stored one sample per row.
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixT<double>;
using Vector = VectorT<double>;
using IntVector = Eigen::VectorXi;

/// Shape-checked product a * b.
///
/// Throws ShapeError when a.cols() != b.rows() and NumericalError if the
/// result contains a non-finite entry.
Matrix matmul(const Matrix& a, const Matrix& b);

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": non-finite entry");
}

/// ln(n!). Exact (via the integer factorial) for n <= 20, lgamma beyond.
double log_factorial(std::int64_t n);

/// Poisson pmf evaluated in log space.
double poisson_pmf(std::int64_t k, double rate);

/// P(N <= k) for N ~ Poisson(rate). Throws DomainError for rate <= 0.
double poisson_cdf(std::int64_t k, double rate);

/// Smallest k with poisson_cdf(k, rate) >= p.
std::int64_t poisson_icdf_count(double rate, double p);

/// Number of exponential inter-event times to draw so that a Poisson process
/// with rate `max_rate` has all of its unit-window events covered with
/// probability 0.99999, plus one extra arrival that lands past the window.
std::int64_t adaptive_n_exp(double max_rate);

inline constexpr double kNExpTarget = 0.99999;

/// Counter-based random stream (Philox2x64-10).
///
/// The block counter is (draw index, stream id) and the key is the seed, so
/// any (seed, stream id) pair addresses its own reproducible sequence and
/// streams can be created in any order without coordination.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  double normal();
  /// Exponential with the given rate, by inverse CDF: -log(1-u)/rate.
  double exponential(double rate);

  /// Advance by `n` 64-bit draws in O(1); the stream then continues exactly
  /// as if the draws had been consumed.
  void discard(std::uint64_t n);

  /// Independent child stream; deterministic in (this stream, child).
  RngStream split(std::uint64_t child) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t draws() const { return counter_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::uint64_t buffer_[2] = {0, 0};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Fill a matrix with i.i.d. draws of `draw(rng)`.
template <typename Draw>
Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng, Draw&& draw) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = draw(rng);
  return m;
}

}  // namespace pvae
