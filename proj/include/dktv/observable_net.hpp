#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dktv/linalg.hpp"

namespace dktv {

enum class Activation { kReLU, kGaussianRBF, kIdentity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kReLU: return "relu";
    case Activation::kGaussianRBF: return "gauss";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kReLU;
  if (s == "gauss") return Activation::kGaussianRBF;
  if (s == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation: " + s);
}

struct LayerSpec {
  int input_dim = 0;
  int output_dim = 0;
  Activation activation = Activation::kReLU;
};

inline void validate_layer_chain(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw std::invalid_argument("network needs at least one layer");
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].input_dim <= 0 || layers[i].output_dim <= 0) {
      throw std::invalid_argument("layer dimensions must be positive");
    }
    if (i > 0 && layers[i].input_dim != layers[i - 1].output_dim) {
      throw std::invalid_argument("layer dimensions do not chain");
    }
  }
}

// Feedforward lifting map g(., theta): R^n -> R^r.
// Parameter layout: per layer, the weight matrix (column-major) followed by the bias.
class ObservableNet {
 public:
  explicit ObservableNet(std::vector<LayerSpec> layers) : specs_(std::move(layers)) {
    validate_layer_chain(specs_);
    int q = 0;
    offsets_.reserve(specs_.size());
    for (const auto& l : specs_) {
      offsets_.push_back(q);
      q += l.input_dim * l.output_dim + l.output_dim;
    }
    theta_ = Eigen::VectorXd::Zero(q);
  }

  // Weights and biases drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static ObservableNet random_init(std::vector<LayerSpec> layers, std::uint64_t seed) {
    ObservableNet net(std::move(layers));
    std::mt19937_64 rng(seed);
    for (size_t l = 0; l < net.specs_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(net.specs_[l].input_dim));
      std::uniform_real_distribution<double> dist(-bound, bound);
      const int count = net.specs_[l].input_dim * net.specs_[l].output_dim + net.specs_[l].output_dim;
      for (int i = 0; i < count; ++i) net.theta_(net.offsets_[l] + i) = dist(rng);
    }
    return net;
  }

  int input_dim() const { return specs_.front().input_dim; }
  int output_dim() const { return specs_.back().output_dim; }
  int param_count() const { return static_cast<int>(theta_.size()); }
  const std::vector<LayerSpec>& layers() const { return specs_; }

  const Eigen::VectorXd& params() const { return theta_; }
  void set_params(const Eigen::VectorXd& theta) {
    if (theta.size() != theta_.size()) throw std::invalid_argument("parameter vector length mismatch");
    theta_ = theta;
  }

  Eigen::Map<const Eigen::MatrixXd> weight(size_t l) const {
    return {theta_.data() + offsets_[l], specs_[l].output_dim, specs_[l].input_dim};
  }
  Eigen::Map<const Eigen::VectorXd> bias(size_t l) const {
    return {theta_.data() + offsets_[l] + specs_[l].input_dim * specs_[l].output_dim,
            specs_[l].output_dim};
  }
  Eigen::Map<Eigen::MatrixXd> weight(size_t l) {
    return {theta_.data() + offsets_[l], specs_[l].output_dim, specs_[l].input_dim};
  }
  Eigen::Map<Eigen::VectorXd> bias(size_t l) {
    return {theta_.data() + offsets_[l] + specs_[l].input_dim * specs_[l].output_dim,
            specs_[l].output_dim};
  }

  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const {
    if (x.rows() != input_dim()) {
      throw std::invalid_argument("forward: input has " + std::to_string(x.rows()) +
                                  " rows, network expects " + std::to_string(input_dim()));
    }
    Eigen::MatrixXd h = x;
    for (size_t l = 0; l < specs_.size(); ++l) {
      Eigen::MatrixXd z = (weight(l) * h).colwise() + bias(l);
      h = apply_activation(specs_[l].activation, z);
    }
    return h;
  }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    if (x.size() != input_dim()) {
      throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                  " entries, network expects " + std::to_string(input_dim()));
    }
    return forward_batch(x);
  }

  // Backpropagates output-space cotangents for a batch of inputs and adds the
  // resulting parameter gradient onto `grad` (length q).
  void accumulate_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& cotangent,
                           Eigen::VectorXd& grad) const {
    if (grad.size() != theta_.size()) throw std::invalid_argument("gradient buffer length mismatch");
    if (cotangent.rows() != output_dim() || cotangent.cols() != x.cols()) {
      throw std::invalid_argument("cotangent shape mismatch");
    }
    const size_t num_layers = specs_.size();
    std::vector<Eigen::MatrixXd> inputs(num_layers);  // layer inputs h_{l-1}
    std::vector<Eigen::MatrixXd> preacts(num_layers);
    Eigen::MatrixXd h = x;
    for (size_t l = 0; l < num_layers; ++l) {
      inputs[l] = h;
      preacts[l] = (weight(l) * h).colwise() + bias(l);
      h = apply_activation(specs_[l].activation, preacts[l]);
    }
    Eigen::MatrixXd delta = cotangent;
    for (size_t li = num_layers; li-- > 0;) {
      delta = activation_derivative(specs_[li].activation, preacts[li]).cwiseProduct(delta);
      const int in = specs_[li].input_dim, out = specs_[li].output_dim;
      Eigen::Map<Eigen::MatrixXd> dw(grad.data() + offsets_[li], out, in);
      Eigen::Map<Eigen::VectorXd> db(grad.data() + offsets_[li] + in * out, out);
      dw.noalias() += delta * inputs[li].transpose();
      db.noalias() += delta.rowwise().sum();
      if (li > 0) delta = (weight(li).transpose() * delta).eval();
    }
  }

 private:
  static Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z) {
    switch (a) {
      case Activation::kReLU:
        return z.cwiseMax(0.0);
      case Activation::kGaussianRBF:
        return (-z.array().square()).exp().matrix();
      case Activation::kIdentity:
        return z;
    }
    throw std::logic_error("unreachable");
  }

  // Subgradient at the ReLU kink is 0.
  static Eigen::MatrixXd activation_derivative(Activation a, const Eigen::MatrixXd& z) {
    switch (a) {
      case Activation::kReLU:
        return (z.array() > 0.0).cast<double>().matrix();
      case Activation::kGaussianRBF:
        return (-2.0 * z.array() * (-z.array().square()).exp()).matrix();
      case Activation::kIdentity:
        return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    }
    throw std::logic_error("unreachable");
  }

  std::vector<LayerSpec> specs_;
  std::vector<int> offsets_;
  Eigen::VectorXd theta_;
};

struct LossGradient {
  double loss = 0.0;
  double l1 = 0.0;       // (1/beta) ||Gbar - A G - B U||_F^2
  double l2 = 0.0;       // (1/beta) ||X - C G||_F^2
  double penalty = 0.0;  // lambda_A * max(0, ||A||_F - 1)^2
  Eigen::VectorXd grad;
};

// Training objective on one batch with (A, B, C) held constant: the stacked
// one-step residual in lifted coordinates plus the projection residual,
// averaged over the batch. `w` reweights the two blocks; w = 0.5 recovers the
// plain stacked form. The gradient is exact w.r.t. theta for fixed matrices,
// so the norm penalty on A contributes value but no gradient.
inline LossGradient loss_gradient(const ObservableNet& net, const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& x_bar, const Eigen::MatrixXd& u,
                                  const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                  const Eigen::MatrixXd& c, double w = 0.5,
                                  double lambda_a = 0.0) {
  const Eigen::Index beta = x.cols();
  if (beta == 0) throw std::invalid_argument("loss_gradient: empty batch");
  if (x_bar.cols() != beta || (u.size() > 0 && u.cols() != beta)) {
    throw std::invalid_argument("loss_gradient: column counts differ");
  }
  const double s1 = 2.0 * w;
  const double s2 = 2.0 * (1.0 - w);

  const Eigen::MatrixXd g = net.forward_batch(x);
  const Eigen::MatrixXd g_bar = net.forward_batch(x_bar);

  Eigen::MatrixXd r1 = g_bar - a * g;
  if (b.cols() > 0) r1.noalias() -= b * u;
  const Eigen::MatrixXd r2 = x - c * g;

  LossGradient out;
  out.l1 = r1.squaredNorm() / static_cast<double>(beta);
  out.l2 = r2.squaredNorm() / static_cast<double>(beta);
  if (lambda_a > 0.0) {
    const double excess = std::max(0.0, a.norm() - 1.0);
    out.penalty = lambda_a * excess * excess;
  }
  out.loss = s1 * out.l1 + s2 * out.l2 + out.penalty;

  const double scale = 2.0 / static_cast<double>(beta);
  const Eigen::MatrixXd cot_bar = (s1 * scale) * r1;
  const Eigen::MatrixXd cot = scale * (-s1 * (a.transpose() * r1) - s2 * (c.transpose() * r2));

  out.grad = Eigen::VectorXd::Zero(net.param_count());
  net.accumulate_gradient(x_bar, cot_bar, out.grad);
  net.accumulate_gradient(x, cot, out.grad);
  return out;
}

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step_count = 0;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(int q, double lr = 1e-3, double wd = 1e-4) {
    AdamState s;
    s.first_moment = Eigen::VectorXd::Zero(q);
    s.second_moment = Eigen::VectorXd::Zero(q);
    s.learning_rate = lr;
    s.weight_decay = wd;
    return s;
  }
};

// Adam with bias correction; weight decay is decoupled, a multiplicative
// shrink applied alongside the gradient step.
inline void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != params.size() || state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  state.step_count += 1;
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad;
  state.second_moment =
      state.beta2 * state.second_moment + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  const Eigen::VectorXd m_hat = state.first_moment / bc1;
  const Eigen::VectorXd v_hat = state.second_moment / bc2;
  params *= (1.0 - state.learning_rate * state.weight_decay);
  params.array() -= state.learning_rate * m_hat.array() / (v_hat.array().sqrt() + state.epsilon);
}

// Empirical Lipschitz estimate: max ||g(x)-g(y)|| / ||x-y|| over all distinct
// sample pairs. A lower estimate of the true constant; callers labeling bound
// reports treat it as such.
inline double estimate_lipschitz(const ObservableNet& net,
                                 const std::vector<Eigen::VectorXd>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("estimate_lipschitz: need at least 2 samples");
  std::vector<Eigen::VectorXd> images(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) images[i] = net.forward(samples[i]);
  double best = 0.0;
  bool any_distinct = false;
  for (size_t i = 0; i < samples.size(); ++i) {
    for (size_t j = i + 1; j < samples.size(); ++j) {
      const double dx = (samples[i] - samples[j]).norm();
      if (dx == 0.0) continue;
      any_distinct = true;
      best = std::max(best, (images[i] - images[j]).norm() / dx);
    }
  }
  if (!any_distinct) throw std::invalid_argument("estimate_lipschitz: all samples identical");
  return best;
}

inline double estimate_lipschitz(const ObservableNet& net, const Eigen::MatrixXd& columns) {
  std::vector<Eigen::VectorXd> samples;
  samples.reserve(static_cast<size_t>(columns.cols()));
  for (Eigen::Index i = 0; i < columns.cols(); ++i) samples.push_back(columns.col(i));
  return estimate_lipschitz(net, samples);
}

}  // namespace dktv
