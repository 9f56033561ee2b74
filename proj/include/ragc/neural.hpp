#pragma once

// Fixed-grammar differentiable networks for the actor and critic:
// 3x3 conv, batch norm, ReLU, 2x2 max-pool, flatten, dense, tanh and a
// feature concatenation inside the critic. Templated on scalar so gradient
// checks can run in double while training runs in float.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ragc/tensor.hpp"

namespace ragc::nn {

enum class Mode {
  train,        ///< batch statistics, running statistics updated, caches kept
  eval,         ///< running statistics, no caches
  batch_stats,  ///< batch statistics, running statistics frozen, caches kept
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Tensor<Scalar> adam_m;
  Tensor<Scalar> adam_v;
  /// Running statistics are named tensors but never receive gradients.
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Shape shape, bool is_trainable = true)
      : name(std::move(n)), value(shape), grad(shape), adam_m(shape), adam_v(shape), trainable(is_trainable) {}
};

enum class Init { he_uniform, xavier_uniform };

template <typename Scalar>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) = 0;
  /// Stores parameter gradients (overwriting) and returns the input gradient.
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) = 0;
  virtual std::vector<Parameter<Scalar>*> parameters() { return {}; }
  /// Per-sample output shape for a per-sample input shape; throws on mismatch.
  virtual Shape output_shape(const Shape& in) const = 0;

  const std::string& name() const { return name_; }

 protected:
  void require_cache(bool cached) const;
  [[noreturn]] void shape_error(const Shape& got, const std::string& expected) const;

  std::string name_;
};

template <typename Scalar>
class Conv3x3 final : public Layer<Scalar> {
 public:
  Conv3x3(std::string name, Index in_channels, Index out_channels, Init init, std::uint64_t seed);
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv3x3>(*this); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }
  Shape output_shape(const Shape& in) const override;

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  /// When off, backward returns zeros instead of the input gradient (first layer of a net).
  void set_input_gradient(bool enabled) { input_gradient_ = enabled; }

 private:
  Index in_channels_;
  Index out_channels_;
  Parameter<Scalar> weight_;  // (out, in, 3, 3)
  Parameter<Scalar> bias_;
  typename Tensor<Scalar>::RowMajorMatrix columns_;  // im2col cache
  Shape input_shape_;
  bool input_gradient_ = true;
  bool cached_ = false;
};

template <typename Scalar>
class BatchNorm final : public Layer<Scalar> {
 public:
  BatchNorm(std::string name, Index channels, Scalar momentum = Scalar(0.99), Scalar eps = Scalar(1e-5));
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<BatchNorm>(*this); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::vector<Parameter<Scalar>*> parameters() override { return {&gamma_, &beta_, &running_mean_, &running_var_}; }
  Shape output_shape(const Shape& in) const override;

  Parameter<Scalar>& gamma() { return gamma_; }
  Parameter<Scalar>& beta() { return beta_; }
  Parameter<Scalar>& running_mean() { return running_mean_; }
  Parameter<Scalar>& running_var() { return running_var_; }

 private:
  Index channels_;
  Scalar momentum_;
  Scalar eps_;
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  Parameter<Scalar> running_mean_;
  Parameter<Scalar> running_var_;
  Tensor<Scalar> normalized_;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std_;
  bool cached_ = false;
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }

 private:
  Tensor<Scalar> output_;
  bool cached_ = false;
};

template <typename Scalar>
class MaxPool2 final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<MaxPool2>(*this); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  Shape output_shape(const Shape& in) const override;

 private:
  std::vector<Index> argmax_;
  Shape input_shape_;
  bool cached_ = false;
};

template <typename Scalar>
class Flatten final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Flatten>(*this); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return {numel(in)}; }

 private:
  Shape input_shape_;
  bool cached_ = false;
};

template <typename Scalar>
class Dense final : public Layer<Scalar> {
 public:
  Dense(std::string name, Index in_features, Index out_features, Init init, std::uint64_t seed);
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Dense>(*this); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }
  Shape output_shape(const Shape& in) const override;

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  Index in_features_;
  Index out_features_;
  Parameter<Scalar> weight_;  // (out, in)
  Parameter<Scalar> bias_;
  Tensor<Scalar> input_;
  bool cached_ = false;
};

template <typename Scalar>
class Tanh final : public Layer<Scalar> {
 public:
  using Layer<Scalar>::Layer;
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Tanh>(*this); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override;
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }

 private:
  Tensor<Scalar> output_;
  bool cached_ = false;
};

/// Ordered chain of layers with deep-copy value semantics.
template <typename Scalar>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out);
  std::vector<Parameter<Scalar>*> parameters();
  Shape output_shape(Shape in) const;
  std::size_t size() const { return layers_.size(); }
  Layer<Scalar>& layer(std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

/// Layer grammar of the actor: per conv width a conv-bn-relu-pool block,
/// then dense-bn-relu and a single tanh output.
struct ActorSpec {
  int input_height = 64;
  int input_width = 64;
  std::vector<int> conv_channels{16, 32, 64};
  int dense_units = 64;

  /// Full-size configuration: 32, 64, 64, 128, 256 feature maps, dense 256.
  static ActorSpec reference(int height = 64, int width = 64);
};

/// State branch of conv blocks plus dense, action branch dense, both
/// bn-relu, concatenated into dense-relu layers and a linear output.
struct CriticSpec {
  int input_height = 64;
  int input_width = 64;
  std::vector<int> conv_channels{16, 32};
  int branch_units = 32;
  std::vector<int> head_units{256, 256};

  static CriticSpec reference(int height = 64, int width = 64);
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
class Network {
 public:
  virtual ~Network() = default;
  virtual std::vector<Parameter<Scalar>*> parameters() = 0;
  /// Identifies the layer grammar; checkpoints of another kind are rejected.
  virtual std::string kind() const = 0;

  std::vector<Parameter<Scalar>*> trainable_parameters();
  void zero_grad();

  /// Number of optimizer steps taken so far (bias correction state).
  std::int64_t adam_steps = 0;
};

template <typename Scalar>
class Actor final : public Network<Scalar> {
 public:
  Actor() = default;
  Actor(const ActorSpec& spec, std::uint64_t seed);

  /// (N, 1, H, W) -> (N, 1) in (-1, 1).
  Tensor<Scalar> forward(const Tensor<Scalar>& state, Mode mode);
  /// Parameter gradients only; the state gradient is never needed.
  void backward(const Tensor<Scalar>& grad_out);
  std::vector<Parameter<Scalar>*> parameters() override { return body_.parameters(); }
  std::string kind() const override { return "actor"; }
  const ActorSpec& spec() const { return spec_; }
  Sequential<Scalar>& body() { return body_; }

 private:
  void check_input(const Tensor<Scalar>& state) const;

  ActorSpec spec_;
  Sequential<Scalar> body_;
};

template <typename Scalar>
class Critic final : public Network<Scalar> {
 public:
  Critic() = default;
  Critic(const CriticSpec& spec, std::uint64_t seed);

  /// (N, 1, H, W) x (N, 1) -> (N, 1).
  Tensor<Scalar> forward(const Tensor<Scalar>& state, const Tensor<Scalar>& action, Mode mode);
  /// Returns dQ/da. With `through_state` off the state branch keeps its old
  /// gradients, which suffices when only the actor is being updated.
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out, bool through_state = true);
  std::vector<Parameter<Scalar>*> parameters() override;
  std::string kind() const override { return "critic"; }
  const CriticSpec& spec() const { return spec_; }

 private:
  CriticSpec spec_;
  Sequential<Scalar> state_branch_;
  Sequential<Scalar> action_branch_;
  Sequential<Scalar> head_;
  Index state_features_ = 0;
};

/// Bias-corrected adaptive-moment update of every trainable parameter.
template <typename Scalar>
void adam_step(Network<Scalar>& net, const AdamConfig& config);

/// target <- tau * online + (1 - tau) * target over all named tensors.
template <typename Scalar>
void soft_update(Network<Scalar>& target, Network<Scalar>& online, double tau);

/// Checkpoint container ("RGNP"): values, running statistics and optimizer
/// moments as f32 tensors.
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename Scalar>
void save_params(Network<Scalar>& net, const std::filesystem::path& path);
template <typename Scalar>
void save_params(Network<Scalar>& net, std::ostream& out);
/// All-or-nothing: on any error the network is left untouched.
template <typename Scalar>
void load_params(Network<Scalar>& net, const std::filesystem::path& path);
template <typename Scalar>
void load_params(Network<Scalar>& net, std::istream& in);

/// Stacks per-sample images into an (N, 1, H, W) batch.
template <typename Scalar, typename Image>
Tensor<Scalar> stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw RuntimeError("stack_images: empty batch");
  const Index h = images[0]->rows();
  const Index w = images[0]->cols();
  Tensor<Scalar> out(Shape{static_cast<Index>(images.size()), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.rows() != h || img.cols() != w) throw RuntimeError("stack_images: inconsistent image sizes");
    for (Index r = 0; r < h; ++r)
      for (Index c = 0; c < w; ++c)
        out[static_cast<Index>(i) * h * w + r * w + c] = static_cast<Scalar>(img(r, c));
  }
  return out;
}

extern template class Conv3x3<float>;
extern template class Conv3x3<double>;
extern template class BatchNorm<float>;
extern template class BatchNorm<double>;
extern template class Relu<float>;
extern template class Relu<double>;
extern template class MaxPool2<float>;
extern template class MaxPool2<double>;
extern template class Flatten<float>;
extern template class Flatten<double>;
extern template class Dense<float>;
extern template class Dense<double>;
extern template class Tanh<float>;
extern template class Tanh<double>;
extern template class Sequential<float>;
extern template class Sequential<double>;
extern template class Network<float>;
extern template class Network<double>;
extern template class Actor<float>;
extern template class Actor<double>;
extern template class Critic<float>;
extern template class Critic<double>;

}  // namespace ragc::nn
