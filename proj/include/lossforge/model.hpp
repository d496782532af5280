// Copyright 2026 The LossForge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Multiclass softmax regression. A model is a flat vector theta of length
// d*C + C: the d x C weight matrix in row-major order, then the C biases.

#pragma once

#include "lossforge/common.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace lossforge {

enum class Split { kTrain, kValidation, kTest };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "unknown";
}

struct Dataset {
  Matrix x;             // num_examples x d
  std::vector<int> y;   // labels in [0, classes)
  int classes = 0;
  Split split = Split::kTrain;

  Index size() const { return x.rows(); }
  Index dim() const { return x.cols(); }
  Index num_params() const { return x.cols() * classes + classes; }

  void validate() const {
    require(classes >= 2, "Dataset: need at least 2 classes");
    require(static_cast<Index>(y.size()) == x.rows(), "Dataset: one label per row");
    require(x.allFinite(), "Dataset: features must be finite");
    for (int label : y)
      require(label >= 0 && label < classes, "Dataset: label out of range");
  }

  Dataset subset(const std::vector<Index>& rows, Split tag) const {
    Dataset out;
    out.x.resize(static_cast<Index>(rows.size()), x.cols());
    out.y.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.x.row(static_cast<Index>(r)) = x.row(rows[r]);
      out.y[r] = y[static_cast<std::size_t>(rows[r])];
    }
    out.classes = classes;
    out.split = tag;
    return out;
  }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMatrix> weights(const Vector& theta, Index d, Index c) {
  return Eigen::Map<const RowMatrix>(theta.data(), d, c);
}

inline void check_shape(const Vector& theta, const Dataset& data) {
  require(theta.size() == data.num_params(),
          "model size " + std::to_string(theta.size()) + " does not match data (expected " +
              std::to_string(data.num_params()) + ")");
}

// Logits for every row of `x`: x W + 1 b'.
inline Matrix logits(const Vector& theta, const Matrix& x, Index classes) {
  const Index d = x.cols();
  Matrix z = x * weights(theta, d, classes);
  z.rowwise() += theta.tail(classes).transpose();
  return z;
}

// In-place row softmax; returns each row's log-sum-exp.
inline Vector softmax_rows(Matrix& z) {
  Vector lse(z.rows());
  for (Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    z.row(i).array() = (z.row(i).array() - mx).exp();
    const double s = z.row(i).sum();
    z.row(i) /= s;
    lse(i) = mx + std::log(s);
  }
  return lse;
}

// Accumulates scale * x_i (p_i - t_i)' into the gradient for one example.
inline void add_example_gradient(const Eigen::Ref<const Vector>& x,
                                 const Eigen::Ref<const Vector>& dlogits,
                                 double scale, Vector& grad) {
  const Index d = x.size(), c = dlogits.size();
  Eigen::Map<RowMatrix> gw(grad.data(), d, c);
  gw.noalias() += scale * x * dlogits.transpose();
  grad.tail(c) += scale * dlogits;
}

// Mean cross-entropy of softmax predictions against the labels, and its
// gradient with respect to theta.
inline std::pair<double, Vector> logloss_and_grad(const Vector& theta,
                                                  const Dataset& data) {
  require(data.size() > 0, "logloss: empty data");
  check_shape(theta, data);
  const Index n = data.size(), c = data.classes;
  Matrix z = logits(theta, data.x, c);
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) loss += -z(i, data.y[i]);
  const Vector lse = softmax_rows(z);
  loss = (loss + lse.sum()) / static_cast<double>(n);
  for (Index i = 0; i < n; ++i) z(i, data.y[i]) -= 1.0;
  Vector grad(theta.size());
  Eigen::Map<RowMatrix>(grad.data(), data.dim(), c) = data.x.transpose() * z / n;
  grad.tail(c) = z.colwise().sum().transpose() / n;
  return {loss, grad};
}

inline double logloss(const Vector& theta, const Dataset& data) {
  require(data.size() > 0, "logloss: empty data");
  check_shape(theta, data);
  Matrix z = logits(theta, data.x, data.classes);
  double loss = 0.0;
  for (Index i = 0; i < data.size(); ++i) loss -= z(i, data.y[i]);
  loss += softmax_rows(z).sum();
  return loss / static_cast<double>(data.size());
}

// Fraction of examples whose arg-max prediction differs from the label.
inline double classification_error(const Vector& theta, const Dataset& data) {
  require(data.size() > 0, "classification_error: empty data");
  check_shape(theta, data);
  const Matrix z = logits(theta, data.x, data.classes);
  Index wrong = 0;
  for (Index i = 0; i < data.size(); ++i) {
    Index best;
    z.row(i).maxCoeff(&best);
    if (best != data.y[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

}  // namespace lossforge
