#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>


#include "qamoe/synthdata.hpp"
#include "temp_dir.hpp"

namespace qamoe::testing {

inline DatasetSpec tiny_spec(std::uint64_t n = 10, std::uint64_t seed = 1111) {
  DatasetSpec spec;
  spec.n_train = n;
  spec.n_val = n;
  spec.n_test = n;
  spec.seed = seed;
  return spec;
}

// Temporal mean of one modality, with an appended bias column of 1.
inline Eigen::VectorXd pooled_with_bias(const Sample& s, Modality m) {
  const FeatureMatrix& u = s.feature(m);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(u.cols()) + 1);
  for (std::size_t r = 0; r < u.rows(); ++r) {
    for (std::size_t c = 0; c < u.cols(); ++c) x[static_cast<Eigen::Index>(c)] += u(r, c);
  }
  x.head(static_cast<Eigen::Index>(u.cols())) /= static_cast<double>(u.rows());
  x[static_cast<Eigen::Index>(u.cols())] = 1.0;
  return x;
}

// Closed-form ridge fit on pooled features of `fit`, returns MAE on `held_out`.
inline double ridge_probe_mae(std::span<const Sample> fit, std::span<const Sample> held_out,
                              Modality m, double alpha = 1e-6) {
  const auto dim = pooled_with_bias(fit[0], m).size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(fit.size()), dim);
  Eigen::VectorXd y(static_cast<Eigen::Index>(fit.size()));
  for (std::size_t i = 0; i < fit.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = pooled_with_bias(fit[i], m).transpose();
    y[static_cast<Eigen::Index>(i)] = fit[i].label;
  }
  const Eigen::MatrixXd gram =
      x.transpose() * x + alpha * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::VectorXd w = gram.ldlt().solve(x.transpose() * y);
  double total = 0.0;
  for (const Sample& s : held_out) total += std::abs(pooled_with_bias(s, m).dot(w) - s.label);
  return total / static_cast<double>(held_out.size());
}

}  // namespace qamoe::testing
