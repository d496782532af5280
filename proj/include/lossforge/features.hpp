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

// Feature maps phi(theta) over softmax-regression models.
//
// A FeatureSet is an ordered list of blocks. Each block contributes one or
// more named features together with their values, Jacobian, and a fused
// weighted gradient. Blocks that average a per-example term over a dataset
// also expose a single-example gradient for stochastic training.

#pragma once

#include "lossforge/model.hpp"

#include <algorithm>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace lossforge {

class FeatureBlock {
 public:
  virtual ~FeatureBlock() = default;

  virtual std::vector<std::string> names() const = 0;
  virtual Vector values(const Vector& theta) const = 0;
  // n x k_b; column j is the gradient of feature j.
  virtual Matrix jacobian(const Vector& theta) const = 0;

  // out += sum_j w_j grad phi_j(theta)
  virtual void add_gradient(const Vector& theta, const Eigen::Ref<const Vector>& w,
                            Vector& out) const {
    out.noalias() += jacobian(theta) * w;
  }

  // Examples averaged by this block; 0 when the block does not read data.
  virtual Index num_examples() const { return 0; }

  // Unbiased single-example estimate of add_gradient. Data-free blocks add
  // their exact gradient.
  virtual void add_example_gradient(const Vector& theta, Index /*example*/,
                                    std::mt19937_64& /*rng*/,
                                    const Eigen::Ref<const Vector>& w,
                                    Vector& out) const {
    add_gradient(theta, w, out);
  }

  Index size() const { return static_cast<Index>(names().size()); }
};

class FeatureSet {
 public:
  FeatureSet() = default;

  // `primary` is the index of the primary-loss feature, or -1 for none.
  FeatureSet(std::vector<std::shared_ptr<const FeatureBlock>> blocks, Index num_params,
             Index primary)
      : blocks_(std::move(blocks)), num_params_(num_params), primary_(primary) {
    require(!blocks_.empty(), "FeatureSet: need at least one block");
    std::set<std::string> seen;
    for (const auto& b : blocks_) {
      offsets_.push_back(static_cast<Index>(names_.size()));
      for (std::string& name : b->names()) {
        require(seen.insert(name).second, "FeatureSet: duplicate feature name " + name);
        names_.push_back(std::move(name));
      }
      if (b->num_examples() > 0) {
        require(num_examples_ == 0 || num_examples_ == b->num_examples(),
                "FeatureSet: data-dependent blocks disagree on example count");
        num_examples_ = b->num_examples();
      }
    }
    require(primary_ >= -1 && primary_ < dimension(), "FeatureSet: bad primary index");
  }

  Index dimension() const { return static_cast<Index>(names_.size()); }
  Index num_params() const { return num_params_; }
  Index primary() const { return primary_; }
  Index num_examples() const { return num_examples_; }
  const std::vector<std::string>& names() const { return names_; }

  Vector values(const Vector& theta) const {
    check(theta);
    Vector out(dimension());
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      out.segment(offsets_[b], blocks_[b]->size()) = blocks_[b]->values(theta);
    return out;
  }

  Matrix jacobian(const Vector& theta) const {
    check(theta);
    Matrix out(num_params_, dimension());
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      out.middleCols(offsets_[b], blocks_[b]->size()) = blocks_[b]->jacobian(theta);
    return out;
  }

  // Gradient of lambda . phi at theta.
  Vector gradient(const Vector& theta, const Vector& lambda) const {
    check(theta);
    require(lambda.size() == dimension(), "FeatureSet: lambda dimension mismatch");
    Vector out = Vector::Zero(num_params_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto w = lambda.segment(offsets_[b], blocks_[b]->size());
      if (w.cwiseAbs().maxCoeff() > 0.0) blocks_[b]->add_gradient(theta, w, out);
    }
    return out;
  }

  // Single-example stochastic gradient of lambda . phi, accumulated in out.
  void add_example_gradient(const Vector& theta, Index example, std::mt19937_64& rng,
                            const Vector& lambda, Vector& out) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto w = lambda.segment(offsets_[b], blocks_[b]->size());
      if (w.cwiseAbs().maxCoeff() > 0.0)
        blocks_[b]->add_example_gradient(theta, example, rng, w, out);
    }
  }

 private:
  void check(const Vector& theta) const {
    require(theta.size() == num_params_, "FeatureSet: model size mismatch");
  }

  std::vector<std::shared_ptr<const FeatureBlock>> blocks_;
  std::vector<Index> offsets_;
  std::vector<std::string> names_;
  Index num_params_ = 0;
  Index primary_ = -1;
  Index num_examples_ = 0;
};

// Standard regularizers and data losses ---------------------------------------

class L1Block final : public FeatureBlock {
 public:
  std::vector<std::string> names() const override { return {"l1"}; }
  Vector values(const Vector& theta) const override {
    return Vector::Constant(1, theta.lpNorm<1>());
  }
  // Subgradient 0 at 0.
  Matrix jacobian(const Vector& theta) const override {
    return theta.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
  }
  void add_gradient(const Vector& theta, const Eigen::Ref<const Vector>& w,
                    Vector& out) const override {
    for (Index i = 0; i < theta.size(); ++i)
      if (theta(i) != 0.0) out(i) += theta(i) > 0 ? w(0) : -w(0);
  }
};

class L2SquaredBlock final : public FeatureBlock {
 public:
  std::vector<std::string> names() const override { return {"l2sq"}; }
  Vector values(const Vector& theta) const override {
    return Vector::Constant(1, theta.squaredNorm());
  }
  Matrix jacobian(const Vector& theta) const override { return 2.0 * theta; }
  void add_gradient(const Vector& theta, const Eigen::Ref<const Vector>& w,
                    Vector& out) const override {
    out += 2.0 * w(0) * theta;
  }
};

// Mean log loss over a dataset (the training split, or a mixture component).
class LogLossBlock final : public FeatureBlock {
 public:
  explicit LogLossBlock(std::shared_ptr<const Dataset> data, std::string name = "logloss")
      : data_(std::move(data)), name_(std::move(name)) {
    data_->validate();
    require(data_->size() > 0, "LogLossBlock: empty data");
  }

  std::vector<std::string> names() const override { return {name_}; }
  Vector values(const Vector& theta) const override {
    return Vector::Constant(1, logloss(theta, *data_));
  }
  Matrix jacobian(const Vector& theta) const override {
    return logloss_and_grad(theta, *data_).second;
  }
  Index num_examples() const override { return data_->size(); }
  void add_example_gradient(const Vector& theta, Index example, std::mt19937_64&,
                            const Eigen::Ref<const Vector>& w, Vector& out) const override {
    add_labeled_example(theta, data_->x.row(example).transpose(), data_->y[example],
                        data_->classes, w(0), out);
  }

  static void add_labeled_example(const Vector& theta, const Vector& x, int label,
                                  Index classes, double weight, Vector& out) {
    Vector z = weights(theta, x.size(), classes).transpose() * x + theta.tail(classes);
    z.array() = (z.array() - z.maxCoeff()).exp();
    z /= z.sum();
    z(label) -= 1.0;
    lossforge::add_example_gradient(x, z, weight, out);
  }

 private:
  std::shared_ptr<const Dataset> data_;
  std::string name_;
};

// Mean over examples of the cross-entropy between the uniform distribution on
// classes and the model's prediction.
inline double uniform_label_loss(const Vector& theta, const Dataset& data) {
  require(data.size() > 0, "uniform_label_loss: empty data");
  check_shape(theta, data);
  const Matrix raw = logits(theta, data.x, data.classes);
  Matrix z = raw;
  const Vector lse = softmax_rows(z);
  double total = 0.0;
  for (Index i = 0; i < data.size(); ++i) total += lse(i) - raw.row(i).mean();
  return total / static_cast<double>(data.size());
}

class UniformLabelBlock final : public FeatureBlock {
 public:
  explicit UniformLabelBlock(std::shared_ptr<const Dataset> data) : data_(std::move(data)) {
    data_->validate();
    require(data_->size() > 0, "UniformLabelBlock: empty data");
  }

  std::vector<std::string> names() const override { return {"uniform"}; }
  Vector values(const Vector& theta) const override {
    return Vector::Constant(1, uniform_label_loss(theta, *data_));
  }
  Matrix jacobian(const Vector& theta) const override {
    check_shape(theta, *data_);
    const Index c = data_->classes;
    Matrix z = logits(theta, data_->x, c);
    softmax_rows(z);
    z.array() -= 1.0 / static_cast<double>(c);
    const double n = static_cast<double>(data_->size());
    Vector grad(theta.size());
    Eigen::Map<RowMatrix>(grad.data(), data_->dim(), c) = data_->x.transpose() * z / n;
    grad.tail(c) = z.colwise().sum().transpose() / n;
    return grad;
  }
  Index num_examples() const override { return data_->size(); }
  void add_example_gradient(const Vector& theta, Index example, std::mt19937_64&,
                            const Eigen::Ref<const Vector>& w, Vector& out) const override {
    const Index c = data_->classes;
    const Vector x = data_->x.row(example).transpose();
    Vector z = weights(theta, x.size(), c).transpose() * x + theta.tail(c);
    z.array() = (z.array() - z.maxCoeff()).exp();
    z /= z.sum();
    z.array() -= 1.0 / static_cast<double>(c);
    lossforge::add_example_gradient(x, z, w(0), out);
  }

 private:
  std::shared_ptr<const Dataset> data_;
};

struct DropoutOptions {
  double keep_prob = 0.5;
  int num_masks = 64;
  std::uint64_t seed = 0;

  void validate() const {
    require(keep_prob > 0.0 && keep_prob <= 1.0, "dropout: keep_prob must be in (0, 1]");
    require(num_masks >= 1, "dropout: num_masks must be >= 1");
  }
};

namespace detail {

// Copies of the data with inputs masked by fixed Bernoulli(keep_prob) draws
// and rescaled by 1 / keep_prob; one copy per mask.
inline std::vector<Dataset> dropout_copies(const Dataset& data, const DropoutOptions& opt) {
  opt.validate();
  std::mt19937_64 engine(mix_seed(opt.seed, 0x64726f70ULL));
  std::vector<Dataset> out;
  out.reserve(static_cast<std::size_t>(opt.num_masks));
  const double scale = 1.0 / opt.keep_prob;
  for (int m = 0; m < opt.num_masks; ++m) {
    Dataset copy = data;
    for (Index i = 0; i < copy.size(); ++i)
      for (Index j = 0; j < copy.dim(); ++j)
        copy.x(i, j) = uniform01(engine) < opt.keep_prob ? copy.x(i, j) * scale : 0.0;
    out.push_back(std::move(copy));
  }
  return out;
}

}  // namespace detail

// Average log loss over the fixed masks drawn from opt.seed.
inline double dropout_loss(const Vector& theta, const Dataset& data, const DropoutOptions& opt) {
  require(data.size() > 0, "dropout_loss: empty data");
  double total = 0.0;
  for (const Dataset& copy : detail::dropout_copies(data, opt)) total += logloss(theta, copy);
  return total / opt.num_masks;
}

class DropoutBlock final : public FeatureBlock {
 public:
  DropoutBlock(std::shared_ptr<const Dataset> data, DropoutOptions opt)
      : data_(std::move(data)), opt_(opt) {
    data_->validate();
    require(data_->size() > 0, "DropoutBlock: empty data");
    copies_ = detail::dropout_copies(*data_, opt_);
  }

  std::vector<std::string> names() const override { return {"dropout"}; }
  Vector values(const Vector& theta) const override {
    double total = 0.0;
    for (const Dataset& copy : copies_) total += logloss(theta, copy);
    return Vector::Constant(1, total / opt_.num_masks);
  }
  Matrix jacobian(const Vector& theta) const override {
    Vector grad = Vector::Zero(theta.size());
    for (const Dataset& copy : copies_) grad += logloss_and_grad(theta, copy).second;
    return grad / opt_.num_masks;
  }
  Index num_examples() const override { return data_->size(); }

  // Training resamples a fresh mask each step.
  void add_example_gradient(const Vector& theta, Index example, std::mt19937_64& rng,
                            const Eigen::Ref<const Vector>& w, Vector& out) const override {
    Vector x = data_->x.row(example).transpose();
    const double scale = 1.0 / opt_.keep_prob;
    for (Index j = 0; j < x.size(); ++j) x(j) = uniform01(rng) < opt_.keep_prob ? x(j) * scale : 0.0;
    LogLossBlock::add_labeled_example(theta, x, data_->y[example], data_->classes, w(0), out);
  }

 private:
  std::shared_ptr<const Dataset> data_;
  DropoutOptions opt_;
  std::vector<Dataset> copies_;
};

// Features <l1, l2sq, uniform, dropout, logloss>; logloss is primary.
inline FeatureSet standard_regularizer_features(std::shared_ptr<const Dataset> train,
                                                const DropoutOptions& dropout = {}) {
  const Index n = train->num_params();
  std::vector<std::shared_ptr<const FeatureBlock>> blocks{
      std::make_shared<L1Block>(), std::make_shared<L2SquaredBlock>(),
      std::make_shared<UniformLabelBlock>(train),
      std::make_shared<DropoutBlock>(train, dropout), std::make_shared<LogLossBlock>(train)};
  return FeatureSet(std::move(blocks), n, 4);
}

// Piecewise-linear convex regularizers ----------------------------------------

struct Breakpoints {
  std::vector<double> x;

  Breakpoints() = default;
  explicit Breakpoints(std::vector<double> points) : x(std::move(points)) {
    require(!x.empty(), "Breakpoints: need at least one point");
    for (double v : x) require(std::isfinite(v), "Breakpoints: points must be finite");
    for (std::size_t i = 1; i < x.size(); ++i)
      require(x[i - 1] < x[i], "Breakpoints: points must be strictly increasing");
  }
  Index size() const { return static_cast<Index>(x.size()); }
};

// Sorted weights sampled at indices round(j (n - 1) / (count - 1)); repeated
// values collapse, so the result may hold fewer than `count` points.
inline Breakpoints select_breakpoints(const Vector& theta, int count) {
  require(count >= 2, "select_breakpoints: count must be >= 2");
  require(theta.size() >= count, "select_breakpoints: need at least `count` weights");
  require(theta.allFinite(), "select_breakpoints: weights must be finite");
  std::vector<double> sorted(theta.data(), theta.data() + theta.size());
  std::sort(sorted.begin(), sorted.end());
  const double n1 = static_cast<double>(sorted.size() - 1);
  std::vector<double> points;
  for (int j = 0; j < count; ++j) {
    const auto idx = static_cast<std::size_t>(std::llround(j * n1 / (count - 1)));
    if (points.empty() || sorted[idx] > points.back()) points.push_back(sorted[idx]);
  }
  return Breakpoints(std::move(points));
}

// For each a in X and sigma in {+1, -1} (the +1 block first, each ascending
// in a): sum_i max{0, sigma (theta_i - a)}.
inline Vector pwl_features(const Vector& theta, const Breakpoints& bp) {
  const Index p = bp.size();
  Vector out = Vector::Zero(2 * p);
  for (Index a = 0; a < p; ++a) {
    const double x = bp.x[static_cast<std::size_t>(a)];
    out(a) = (theta.array() - x).max(0.0).sum();
    out(p + a) = (x - theta.array()).max(0.0).sum();
  }
  return out;
}

// Slopes of r(x) = sum_a w+_a max{0, x - a} + w-_a max{0, a - x} on the
// |X| + 1 intervals, left to right.
inline Vector pwl_slopes(const Vector& w, const Breakpoints& bp) {
  const Index p = bp.size();
  require(w.size() == 2 * p, "pwl_slopes: need 2|X| weights");
  Vector s(p + 1);
  s(0) = -w.tail(p).sum();
  for (Index a = 0; a < p; ++a) s(a + 1) = s(a) + w(a) + w(p + a);
  return s;
}

inline double pwl_evaluate(const Vector& w, const Breakpoints& bp, double x) {
  const Index p = bp.size();
  require(w.size() == 2 * p, "pwl_evaluate: need 2|X| weights");
  double r = 0.0;
  for (Index a = 0; a < p; ++a) {
    const double at = bp.x[static_cast<std::size_t>(a)];
    r += w(a) * std::max(0.0, x - at) + w(p + a) * std::max(0.0, at - x);
  }
  return r;
}

// Hinge features of every model coordinate. Gradients use the right
// derivative at a breakpoint.
class PwlBlock final : public FeatureBlock {
 public:
  explicit PwlBlock(Breakpoints bp) : bp_(std::move(bp)) {}

  const Breakpoints& breakpoints() const { return bp_; }

  std::vector<std::string> names() const override {
    std::vector<std::string> out;
    for (const char* sign : {"pos", "neg"})
      for (Index a = 0; a < bp_.size(); ++a)
        out.push_back("pwl_" + std::string(sign) + "_" + std::to_string(a));
    return out;
  }
  Vector values(const Vector& theta) const override { return pwl_features(theta, bp_); }
  Matrix jacobian(const Vector& theta) const override {
    const Index p = bp_.size();
    Matrix jac = Matrix::Zero(theta.size(), 2 * p);
    for (Index a = 0; a < p; ++a) {
      const double x = bp_.x[static_cast<std::size_t>(a)];
      for (Index i = 0; i < theta.size(); ++i) {
        if (theta(i) >= x) jac(i, a) = 1.0;
        else jac(i, p + a) = -1.0;
      }
    }
    return jac;
  }
  // The weighted gradient at theta_i is the slope of r at theta_i.
  void add_gradient(const Vector& theta, const Eigen::Ref<const Vector>& w,
                    Vector& out) const override {
    const Vector slopes = pwl_slopes(w, bp_);
    for (Index i = 0; i < theta.size(); ++i) {
      const auto seg = std::upper_bound(bp_.x.begin(), bp_.x.end(), theta(i)) - bp_.x.begin();
      out(i) += slopes(seg);
    }
  }

 private:
  Breakpoints bp_;
};

// Primary logloss on `train` followed by the 2|X| hinge features.
inline FeatureSet pwl_regularizer_features(std::shared_ptr<const Dataset> train,
                                           const Breakpoints& bp) {
  const Index n = train->num_params();
  std::vector<std::shared_ptr<const FeatureBlock>> blocks{
      std::make_shared<LogLossBlock>(std::move(train)), std::make_shared<PwlBlock>(bp)};
  return FeatureSet(std::move(blocks), n, 0);
}

// Mixture losses ----------------------------------------------------------------

// One log-loss feature per component dataset; no primary coordinate.
inline FeatureSet mixture_features(const std::vector<std::shared_ptr<const Dataset>>& components) {
  require(components.size() >= 2, "mixture_features: need at least 2 components");
  const Index n = components.front()->num_params();
  std::vector<std::shared_ptr<const FeatureBlock>> blocks;
  for (std::size_t c = 0; c < components.size(); ++c) {
    require(components[c]->num_params() == n, "mixture_features: component shape mismatch");
    require(components[c]->size() == components.front()->size(),
            "mixture_features: components must have equal example counts");
    blocks.push_back(
        std::make_shared<LogLossBlock>(components[c], "component_" + std::to_string(c)));
  }
  return FeatureSet(std::move(blocks), n, -1);
}

// lambda / |lambda|_1, a probability vector for non-negative lambda.
inline Vector normalize_mixture(const Vector& lambda) {
  require((lambda.array() >= 0.0).all(), "normalize_mixture: weights must be non-negative");
  const double total = lambda.sum();
  require(total > 0.0, "normalize_mixture: weights must not all be zero");
  return lambda / total;
}

}  // namespace lossforge
