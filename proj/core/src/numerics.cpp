#include "qamoe/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "qamoe/errors.hpp"

namespace qamoe {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void require(bool ok, const char* what) {
  if (!ok) throw InvalidInput(what);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, "matrix data length does not match shape");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, "ragged matrix initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Vector affine(const Matrix& w, std::span<const double> b, std::span<const double> x) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw InvalidInput("affine: dimension mismatch (W is " + std::to_string(w.rows()) +
                       "x" + std::to_string(w.cols()) + ", b has " +
                       std::to_string(b.size()) + ", x has " + std::to_string(x.size()) +
                       ")");
  }
  Vector out(b.begin(), b.end());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const auto wr = w.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < wr.size(); ++j) acc += wr[j] * x[j];
    out[i] += acc;
  }
  return out;
}

Vector matvec_transposed(const Matrix& w, std::span<const double> v) {
  require(w.rows() == v.size(), "matvec_transposed: dimension mismatch");
  Vector out(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    if (v[i] == 0.0) continue;
    axpy(v[i], w.row(i), out);
  }
  return out;
}

void add_outer(Matrix& g, std::span<const double> a, std::span<const double> b) {
  require(g.rows() == a.size() && g.cols() == b.size(), "add_outer: dimension mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    axpy(a[i], b, g.row(i));
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Vector softmax(std::span<const double> v) {
  require(!v.empty(), "softmax: empty input");
  const double peak = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double& e : out) e /= total;
  return out;
}

double softplus(double x) {
  const double y = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  // exp underflows below about -745; keep the image strictly positive.
  return std::max(y, std::numeric_limits<double>::denorm_min());
}

Vector softplus(std::span<const double> v) {
  Vector out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return softplus(x); });
  return out;
}

double softplus_inverse(double y) {
  require(y > 0.0, "softplus_inverse: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector glu(std::span<const double> x, const Matrix& wa, std::span<const double> ba,
           const Matrix& wb, std::span<const double> bb, const Matrix& wo,
           std::span<const double> bo) {
  Vector hidden = affine(wa, ba, x);
  const Vector gate = affine(wb, bb, x);
  require(hidden.size() == gate.size(), "glu: branch widths differ");
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] *= sigmoid(gate[i]);
  return affine(wo, bo, hidden);
}

Vector finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> x, double h) {
  require(h > 0.0, "finite_diff_grad: step must be positive");
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleFailure("finite_diff_grad: non-finite function value at coordinate " +
                          std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double e) { return std::isfinite(e); });
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis) noexcept {
  std::uint64_t h = basis;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
  return fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

SeededRng::SeededRng(std::uint64_t seed) noexcept : seed_(seed), key_(mix64(seed ^ kGolden)) {}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t key) noexcept
    : seed_(seed), key_(key) {}

SeededRng SeededRng::split(std::string_view label) const noexcept {
  return SeededRng(seed_, mix64(key_ ^ mix64(fnv1a64(label))));
}

SeededRng SeededRng::split(std::uint64_t index) const noexcept {
  return SeededRng(seed_, mix64(key_ + mix64(index * kGolden + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t SeededRng::next_u64() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double SeededRng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) noexcept {
  if (lo == hi) return lo;
  return lo + (hi - lo) * uniform();
}

double SeededRng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

std::uint64_t SeededRng::below(std::uint64_t n) noexcept {
  // Lemire's multiply-and-reject.
  __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<__uint128_t>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

}  // namespace qamoe
