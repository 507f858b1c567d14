#include "pvae/numkit.hpp"

#include <algorithm>

#include <array>
#include <cmath>
#include <numbers>

namespace pvae {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out = a * b;
  require_finite(out, "matmul");
  return out;
}

namespace {


const std::array<double, 21>& small_log_factorials() {
  static const std::array<double, 21> table = [] {
    std::array<double, 21> t{};
    std::uint64_t f = 1;
    for (std::uint64_t n = 0; n <= 20; ++n) {
      if (n > 0) f *= n;
      t[n] = std::log(static_cast<double>(f));
    }
    return t;
  }();
  return table;
}

}  // namespace

double log_factorial(std::int64_t n) {
  if (n < 0) throw DomainError("log_factorial: negative argument");
  if (n <= 20) return small_log_factorials()[static_cast<std::size_t>(n)];
  return std::lgamma(static_cast<double>(n) + 1.0);
}

double poisson_pmf(std::int64_t k, double rate) {
  if (!(rate > 0.0)) throw DomainError("poisson_pmf: rate must be positive");
  if (k < 0) return 0.0;
  return std::exp(static_cast<double>(k) * std::log(rate) - rate - log_factorial(k));
}

double poisson_cdf(std::int64_t k, double rate) {
  if (!(rate > 0.0)) throw DomainError("poisson_cdf: rate must be positive");
  if (k < 0) return 0.0;
  double sum = 0.0;
  for (std::int64_t j = 0; j <= k; ++j) {
    sum += poisson_pmf(j, rate);
    // Past the mode the remaining mass is below double resolution.
    if (sum >= 1.0) return 1.0;
    if (static_cast<double>(j) > rate + 40.0 * std::sqrt(rate) + 40.0) break;
  }
  return std::min(sum, 1.0);
}

std::int64_t poisson_icdf_count(double rate, double p) {
  if (!(rate > 0.0)) throw DomainError("poisson_icdf_count: rate must be positive");
  if (!(p > 0.0 && p < 1.0)) throw DomainError("poisson_icdf_count: p must lie in (0, 1)");
  double sum = 0.0;
  for (std::int64_t k = 0;; ++k) {
    sum += poisson_pmf(k, rate);
    if (sum >= p) return k;
    if (static_cast<double>(k) > rate + 40.0 * std::sqrt(rate) + 40.0) return k;
  }
}

std::int64_t adaptive_n_exp(double max_rate) {
  return std::max<std::int64_t>(1, poisson_icdf_count(max_rate, kNExpTarget) + 1);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kPhiloxM = 0xD2B74407B1CE6E93ULL;
constexpr std::uint64_t kPhiloxW = 0x9E3779B97F4A7C15ULL;

std::array<std::uint64_t, 2> philox2x64(std::uint64_t c0, std::uint64_t c1, std::uint64_t key) {
  for (int round = 0; round < 10; ++round) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(kPhiloxM) * c0;
    const auto hi = static_cast<std::uint64_t>(prod >> 64);
    const auto lo = static_cast<std::uint64_t>(prod);
    c0 = hi ^ key ^ c1;
    c1 = lo;
    key += kPhiloxW;
  }
  return {c0, c1};
}

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {}

void RngStream::refill() {
  const auto block = philox2x64(counter_, stream_, seed_);
  ++counter_;
  buffer_[0] = block[0];
  buffer_[1] = block[1];
  buffered_ = 2;
}

std::uint64_t RngStream::next_u64() {
  if (buffered_ == 0) refill();
  return buffer_[2 - buffered_--];
}

void RngStream::discard(std::uint64_t n) {
  const auto from_buffer = std::min<std::uint64_t>(n, static_cast<std::uint64_t>(buffered_));
  buffered_ -= static_cast<int>(from_buffer);
  n -= from_buffer;
  if (n == 0) return;
  counter_ += n / 2;
  if (n % 2 == 1) {
    refill();
    buffered_ = 1;
  }
}

double RngStream::uniform() {
  // (k + 0.5) / 2^53 never hits either endpoint.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double RngStream::exponential(double rate) { return -std::log1p(-uniform()) / rate; }

RngStream RngStream::split(std::uint64_t child) const {
  return RngStream(seed_, mix64(stream_ * kPhiloxW + mix64(child + 0x632BE59BD9B4E019ULL)));
}

}  // namespace pvae
