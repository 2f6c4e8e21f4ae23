#pragma once

// Dense kernels shared by every module: row-major matrices, affine maps,
// activations, a counter-based seeded RNG and a central-difference gradient
// oracle. Everything is 64-bit floating point.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace qamoe {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  // Row-major nested initializer, mostly for tests.
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// result = W x + b
Vector affine(const Matrix& w, std::span<const double> b, std::span<const double> x);
// result = W^T v
Vector matvec_transposed(const Matrix& w, std::span<const double> v);
// g += a b^T
void add_outer(Matrix& g, std::span<const double> a, std::span<const double> b);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

double dot(std::span<const double> a, std::span<const double> b);

Vector softmax(std::span<const double> v);

double softplus(double x);
Vector softplus(std::span<const double> v);
// Inverse of softplus for y > 0.
double softplus_inverse(double y);

double sigmoid(double x);

// Gated linear unit: Wo ((Wa x + ba) * sigmoid(Wb x + bb)) + bo.
Vector glu(std::span<const double> x, const Matrix& wa, std::span<const double> ba,
           const Matrix& wb, std::span<const double> bb, const Matrix& wo,
           std::span<const double> bo);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
// Throws OracleFailure if f returns a non-finite value.
Vector finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> x, double h);

bool all_finite(std::span<const double> v) noexcept;

// 64-bit FNV-1a, used for labels and file fingerprints.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

// Counter-based generator: output i is a SplitMix64 finalizer applied to
// key + i * golden. A substream is a fresh key derived from the parent key and
// a label, so consumers on different substreams never perturb each other.
class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t seed = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  SeededRng split(std::string_view label) const noexcept;
  SeededRng split(std::uint64_t index) const noexcept;

  std::uint64_t next_u64() noexcept;
  std::uint64_t operator()() noexcept { return next_u64(); }
  static constexpr std::uint64_t min() noexcept { return 0; }
  static constexpr std::uint64_t max() noexcept { return ~std::uint64_t{0}; }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  // Standard normal via Box-Muller; both variates of a pair are used.
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  // Uniform integer in [0, n), n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  SeededRng(std::uint64_t seed, std::uint64_t key) noexcept;

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace qamoe
