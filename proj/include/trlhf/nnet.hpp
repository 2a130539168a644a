#pragma once

// Small dense feed-forward networks with exact reverse-mode gradients and an
// Adam optimizer. Batches are stored column-wise: each column of an input
// matrix is one sample.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "trlhf/error.hpp"
#include "trlhf/io.hpp"

namespace trlhf {

enum class Activation { kIdentity, kTanh, kRelu };

inline std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw DataError("unknown activation '" + name + "'");
}

template <typename Scalar = double>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  // Post-activation outputs of every layer; values[0] is the input batch.
  struct Tape {
    std::vector<Matrix> values;
  };

  Mlp() = default;

  // Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  Mlp(std::vector<int> widths, std::vector<Activation> activations,
      std::uint64_t seed)
      : widths_(std::move(widths)),
        activations_(std::move(activations)),
        seed_(seed) {
    check_shape();
    params_ = Vector::Zero(param_count(widths_));
    std::mt19937_64 rng(seed_);
    for (int l = 0; l < num_layers(); ++l) {
      const double bound = std::sqrt(6.0 / (widths_[l] + widths_[l + 1]));
      std::uniform_real_distribution<double> uniform(-bound, bound);
      auto w = weights(l);
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
          w(r, c) = static_cast<Scalar>(uniform(rng));
        }
      }
    }
  }

  static Mlp zeros(std::vector<int> widths, std::vector<Activation> activations) {
    Mlp net;
    net.widths_ = std::move(widths);
    net.activations_ = std::move(activations);
    net.check_shape();
    net.params_ = Vector::Zero(param_count(net.widths_));
    return net;
  }

  static Eigen::Index param_count(const std::vector<int>& widths) {
    Eigen::Index count = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      count += static_cast<Eigen::Index>(widths[l] + 1) * widths[l + 1];
    }
    return count;
  }

  int num_layers() const { return static_cast<int>(activations_.size()); }
  int input_size() const { return widths_.front(); }
  int output_size() const { return widths_.back(); }
  Eigen::Index num_params() const { return params_.size(); }
  const std::vector<int>& widths() const { return widths_; }
  const std::vector<Activation>& activations() const { return activations_; }
  std::uint64_t seed() const { return seed_; }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Eigen::Map<Matrix> weights(int layer) {
    return {params_.data() + offset(layer), widths_[layer + 1], widths_[layer]};
  }
  Eigen::Map<const Matrix> weights(int layer) const {
    return {params_.data() + offset(layer), widths_[layer + 1], widths_[layer]};
  }
  Eigen::Map<Vector> bias(int layer) {
    return {params_.data() + offset(layer) + widths_[layer + 1] * widths_[layer],
            widths_[layer + 1]};
  }
  Eigen::Map<const Vector> bias(int layer) const {
    return {params_.data() + offset(layer) + widths_[layer + 1] * widths_[layer],
            widths_[layer + 1]};
  }

  Matrix forward(const Eigen::Ref<const Matrix>& inputs, Tape* tape = nullptr) const {
    if (inputs.rows() != input_size()) {
      throw DataError("network input has " + std::to_string(inputs.rows()) +
                      " rows, expected " + std::to_string(input_size()));
    }
    Matrix current = inputs;
    if (tape) {
      tape->values.clear();
      tape->values.push_back(current);
    }
    for (int l = 0; l < num_layers(); ++l) {
      Matrix next = weights(l) * current;
      next.colwise() += bias(l);
      apply(activations_[l], next);
      current = std::move(next);
      if (tape) tape->values.push_back(current);
    }
    return current;
  }

  // Gradient of sum_columns <upstream, output> with respect to the flat
  // parameter vector. Optionally also returns the gradient w.r.t. the input.
  Vector backward(const Tape& tape, const Eigen::Ref<const Matrix>& upstream,
                  Matrix* input_grad = nullptr) const {
    if (static_cast<int>(tape.values.size()) != num_layers() + 1 ||
        upstream.rows() != output_size() ||
        upstream.cols() != tape.values.back().cols()) {
      throw DataError("backward: upstream gradient does not match the forward tape");
    }
    Vector grad = Vector::Zero(num_params());
    Matrix delta = upstream;
    for (int l = num_layers() - 1; l >= 0; --l) {
      scale_by_derivative(activations_[l], tape.values[l + 1], delta);
      const Matrix& below = tape.values[l];
      Eigen::Map<Matrix>(grad.data() + offset(l), widths_[l + 1], widths_[l]).noalias() =
          delta * below.transpose();
      grad.segment(offset(l) + widths_[l + 1] * widths_[l], widths_[l + 1]) =
          delta.rowwise().sum();
      if (l > 0 || input_grad) {
        Matrix next = weights(l).transpose() * delta;
        delta = std::move(next);
      }
    }
    if (input_grad) *input_grad = std::move(delta);
    return grad;
  }

  Json to_json() const {
    std::vector<std::string> acts;
    for (auto a : activations_) acts.push_back(to_string(a));
    std::vector<double> values(params_.data(), params_.data() + params_.size());
    return {{"format", "trlhf.mlp"},
            {"version", 1},
            {"widths", widths_},
            {"activations", acts},
            {"seed", seed_},
            {"params", values}};
  }

  static Mlp from_json(const Json& record) {
    Mlp net;
    try {
      if (record.at("format") != "trlhf.mlp" || record.at("version") != 1) {
        throw DataError("unsupported network checkpoint version");
      }
      net.widths_ = record.at("widths").get<std::vector<int>>();
      for (const auto& a : record.at("activations")) {
        net.activations_.push_back(activation_from_string(a.get<std::string>()));
      }
      net.seed_ = record.at("seed").get<std::uint64_t>();
      net.check_shape();
      const auto values = record.at("params").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != param_count(net.widths_)) {
        throw DataError("network checkpoint has the wrong parameter count");
      }
      net.params_ = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size())
                        .template cast<Scalar>();
    } catch (const Json::exception& e) {
      throw DataError(std::string("network checkpoint: ") + e.what());
    }
    return net;
  }

  bool operator==(const Mlp& other) const {
    return widths_ == other.widths_ && activations_ == other.activations_ &&
           params_.size() == other.params_.size() && params_ == other.params_;
  }

 private:
  void check_shape() const {
    if (widths_.size() < 2 || activations_.size() + 1 != widths_.size()) {
      throw ConfigError("network needs one activation per layer");
    }
    for (int w : widths_) {
      if (w <= 0) throw ConfigError("network widths must be positive");
    }
  }

  Eigen::Index offset(int layer) const {
    Eigen::Index off = 0;
    for (int l = 0; l < layer; ++l) {
      off += static_cast<Eigen::Index>(widths_[l] + 1) * widths_[l + 1];
    }
    return off;
  }

  static void apply(Activation activation, Matrix& values) {
    switch (activation) {
      case Activation::kIdentity: break;
      case Activation::kTanh: values = values.array().tanh(); break;
      case Activation::kRelu: values = values.cwiseMax(Scalar(0)); break;
    }
  }

  static void scale_by_derivative(Activation activation, const Matrix& output,
                                  Matrix& delta) {
    switch (activation) {
      case Activation::kIdentity: break;
      case Activation::kTanh:
        delta.array() *= Scalar(1) - output.array().square();
        break;
      case Activation::kRelu:
        delta.array() *= (output.array() > Scalar(0)).template cast<Scalar>();
        break;
    }
  }

  std::vector<int> widths_;
  std::vector<Activation> activations_;
  std::uint64_t seed_ = 0;
  Vector params_;
};

template <typename Scalar = double>
struct AdamState {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  AdamState() = default;
  explicit AdamState(Eigen::Index size, Scalar learning_rate = Scalar(1e-3))
      : first_moment(Vector::Zero(size)),
        second_moment(Vector::Zero(size)),
        lr(learning_rate) {}

  long step = 0;
  Vector first_moment;
  Vector second_moment;
  Scalar lr = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  Scalar weight_decay = Scalar(0);  // decoupled, applied as lr * wd * param
};

// Bias-corrected Adam update in place. Throws TrainingError naming the first
// offending coordinate when the gradient is not finite.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& params,
               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DataError("adam_step: parameter, gradient and moment sizes differ");
  }
  if (!grads.allFinite()) {
    Eigen::Index bad = 0;
    while (bad < grads.size() && std::isfinite(static_cast<double>(grads[bad]))) ++bad;
    const auto count = (!grads.array().isFinite()).count();
    throw TrainingError("non-finite gradient at step " + std::to_string(state.step + 1) +
                        ": " + std::to_string(count) + " bad coordinates, first at index " +
                        std::to_string(bad));
  }
  ++state.step;
  state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grads;
  state.second_moment =
      state.beta2 * state.second_moment +
      (Scalar(1) - state.beta2) * grads.array().square().matrix();
  const Scalar correction1 = Scalar(1) - std::pow(state.beta1, Scalar(state.step));
  const Scalar correction2 = Scalar(1) - std::pow(state.beta2, Scalar(state.step));
  const auto m_hat = state.first_moment.array() / correction1;
  const auto v_hat = state.second_moment.array() / correction2;
  if (state.weight_decay != Scalar(0)) {
    params.array() -= state.lr * state.weight_decay * params.array();
  }
  params.array() -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
}

}  // namespace trlhf
