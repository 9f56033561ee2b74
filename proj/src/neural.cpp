#include "ragc/neural.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "binary_io.hpp"

namespace ragc::nn {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {

template <typename Scalar>
void init_uniform(Tensor<Scalar>& t, double limit, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
}

double init_limit(Init init, Index fan_in, Index fan_out) {
  return init == Init::he_uniform ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                  : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Shape sample_shape(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

}  // namespace

// Layer

template <typename Scalar>
void Layer<Scalar>::require_cache(bool cached) const {
  if (!cached) throw RuntimeError(name_ + ": backward without a cached training-mode forward pass");
}

template <typename Scalar>
void Layer<Scalar>::shape_error(const Shape& got, const std::string& expected) const {
  throw RuntimeError(name_ + ": input shape " + to_string(got) + " does not match expected " + expected);
}

// Conv3x3, same padding, stride 1.

template <typename Scalar>
Conv3x3<Scalar>::Conv3x3(std::string name, Index in_channels, Index out_channels, Init init, std::uint64_t seed)
    : Layer<Scalar>(std::move(name)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      weight_(this->name_ + ".weight", {out_channels, in_channels, 3, 3}),
      bias_(this->name_ + ".bias", {out_channels}) {
  init_uniform(weight_.value, init_limit(init, in_channels * 9, out_channels * 9), seed);
}

template <typename Scalar>
Shape Conv3x3<Scalar>::output_shape(const Shape& in) const {
  if (in.size() != 3 || in[0] != in_channels_)
    this->shape_error(in, "(" + std::to_string(in_channels_) + ", H, W)");
  return {out_channels_, in[1], in[2]};
}

template <typename Scalar>
Tensor<Scalar> Conv3x3<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  if (x.rank() != 4) this->shape_error(x.shape(), "(N, " + std::to_string(in_channels_) + ", H, W)");
  output_shape(sample_shape(x.shape()));
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
  const Index k = in_channels_ * 9;

  // Per-sample column blocks: rows [b*k, (b+1)*k) hold sample b.
  columns_.resize(n * k, hw);
  for (Index b = 0; b < n; ++b) {
    for (Index ci = 0; ci < in_channels_; ++ci) {
      const Scalar* src = x.ptr() + (b * in_channels_ + ci) * hw;
      for (Index kh = 0; kh < 3; ++kh) {
        for (Index kw = 0; kw < 3; ++kw) {
          Scalar* dst = columns_.row(b * k + (ci * 3 + kh) * 3 + kw).data();
          const Index lo = kw == 0 ? 1 : 0;
          const Index hi = kw == 2 ? w - 1 : w;
          for (Index y = 0; y < h; ++y) {
            const Index ys = y + kh - 1;
            Scalar* out = dst + y * w;
            if (ys < 0 || ys >= h) {
              std::fill(out, out + w, Scalar(0));
              continue;
            }
            const Scalar* in = src + ys * w + kw - 1;
            out[0] = Scalar(0);
            out[w - 1] = Scalar(0);
            for (Index xx = lo; xx < hi; ++xx) out[xx] = in[xx];
          }
        }
      }
    }
  }

  const auto weights = weight_.value.matrix(out_channels_, k);
  Tensor<Scalar> y(Shape{n, out_channels_, h, w});
  auto ym = y.matrix(n * out_channels_, hw);
  for (Index b = 0; b < n; ++b) {
    auto yb = ym.middleRows(b * out_channels_, out_channels_);
    yb.noalias() = weights * columns_.middleRows(b * k, k);
    yb.colwise() += bias_.value.data();
  }

  cached_ = mode != Mode::eval;
  input_shape_ = x.shape();
  return y;
}

template <typename Scalar>
Tensor<Scalar> Conv3x3<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  this->require_cache(cached_);
  const Index n = input_shape_[0], h = input_shape_[2], w = input_shape_[3], hw = h * w;
  const Index k = in_channels_ * 9;
  if (grad_out.shape() != Shape{n, out_channels_, h, w}) this->shape_error(grad_out.shape(), "output-shaped gradient");

  const auto gm = grad_out.matrix(n * out_channels_, hw);
  auto wgrad = weight_.grad.matrix(out_channels_, k);
  wgrad.setZero();
  bias_.grad.set_zero();
  for (Index b = 0; b < n; ++b) {
    const auto gb = gm.middleRows(b * out_channels_, out_channels_);
    wgrad.noalias() += gb * columns_.middleRows(b * k, k).transpose();
    bias_.grad.data() += gb.rowwise().sum();
  }

  Tensor<Scalar> dx(input_shape_);
  if (!input_gradient_) return dx;
  const auto weights = weight_.value.matrix(out_channels_, k);
  typename Tensor<Scalar>::RowMajorMatrix dcols(k, hw);
  for (Index b = 0; b < n; ++b) {
    dcols.noalias() = weights.transpose() * gm.middleRows(b * out_channels_, out_channels_);
    for (Index ci = 0; ci < in_channels_; ++ci) {
      Scalar* dst = dx.ptr() + (b * in_channels_ + ci) * hw;
      for (Index kh = 0; kh < 3; ++kh) {
        for (Index kw = 0; kw < 3; ++kw) {
          const Scalar* src = dcols.row((ci * 3 + kh) * 3 + kw).data();
          const Index lo = kw == 0 ? 1 : 0;
          const Index hi = kw == 2 ? w - 1 : w;
          for (Index y = 0; y < h; ++y) {
            const Index ys = y + kh - 1;
            if (ys < 0 || ys >= h) continue;
            Scalar* out = dst + ys * w + kw - 1;
            const Scalar* in = src + y * w;
            for (Index xx = lo; xx < hi; ++xx) out[xx] += in[xx];
          }
        }
      }
    }
  }
  return dx;
}

// BatchNorm over channels (rank 4) or features (rank 2).

template <typename Scalar>
BatchNorm<Scalar>::BatchNorm(std::string name, Index channels, Scalar momentum, Scalar eps)
    : Layer<Scalar>(std::move(name)),
      channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(this->name_ + ".gamma", {channels}),
      beta_(this->name_ + ".beta", {channels}),
      running_mean_(this->name_ + ".running_mean", {channels}, false),
      running_var_(this->name_ + ".running_var", {channels}, false) {
  gamma_.value.data().setOnes();
  running_var_.value.data().setOnes();
}

template <typename Scalar>
Shape BatchNorm<Scalar>::output_shape(const Shape& in) const {
  if (in.empty() || in[0] != channels_) this->shape_error(in, "(" + std::to_string(channels_) + ", ...)");
  return in;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  if (x.rank() != 2 && x.rank() != 4) this->shape_error(x.shape(), "rank 2 or 4");
  output_shape(sample_shape(x.shape()));
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Index n = x.dim(0);
  const Index spatial = x.size() / (n * channels_);
  const Index count = n * spatial;
  auto sample = [&](const Tensor<Scalar>& t, Index b) { return t.matrix(n * channels_, spatial).middleRows(b * channels_, channels_).array(); };
  auto sample_mut = [&](Tensor<Scalar>& t, Index b) { return t.matrix(n * channels_, spatial).middleRows(b * channels_, channels_).array(); };

  Tensor<Scalar> y(x.shape());
  if (mode == Mode::eval) {
    const Vec scale = gamma_.value.data().array() / (running_var_.value.data().array() + eps_).sqrt();
    const Vec shift = beta_.value.data().array() - running_mean_.value.data().array() * scale;
    for (Index b = 0; b < n; ++b)
      sample_mut(y, b) = (sample(x, b).colwise() * scale).colwise() + shift;
    cached_ = false;
    return y;
  }

  if (count < 2) throw RuntimeError(this->name_ + ": batch statistics need more than one value per channel");
  // Per-plane centered moments merged pairwise, one pass over memory.
  Vec mean = Vec::Zero(channels_);
  Vec m2 = Vec::Zero(channels_);
  using PlaneMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  for (Index c = 0; c < channels_; ++c) {
    Scalar acc_mean = 0, acc_m2 = 0;
    Index acc_n = 0;
    for (Index b = 0; b < n; ++b) {
      const PlaneMap plane(x.ptr() + (b * channels_ + c) * spatial, spatial);
      const Scalar pm = plane.mean();
      const Scalar pm2 = (plane - pm).square().sum();
      const Index total = acc_n + spatial;
      const Scalar delta = pm - acc_mean;
      acc_mean += delta * static_cast<Scalar>(spatial) / static_cast<Scalar>(total);
      acc_m2 += pm2 + delta * delta * static_cast<Scalar>(acc_n) * static_cast<Scalar>(spatial) / static_cast<Scalar>(total);
      acc_n = total;
    }
    mean[c] = acc_mean;
    m2[c] = acc_m2;
  }
  const Vec var = m2 / static_cast<Scalar>(count);
  inv_std_ = (var + eps_).sqrt().inverse().matrix();

  normalized_ = Tensor<Scalar>(x.shape());
  const Vec gamma = gamma_.value.data().array();
  const Vec beta = beta_.value.data().array();
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < channels_; ++c) {
      const Index off = (b * channels_ + c) * spatial;
      const PlaneMap plane(x.ptr() + off, spatial);
      auto xh = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(normalized_.ptr() + off, spatial);
      xh = (plane - mean[c]) * inv_std_[c];
      Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>(y.ptr() + off, spatial) = xh * gamma[c] + beta[c];
    }
  if (mode == Mode::train) {
    running_mean_.value.data() = (momentum_ * running_mean_.value.data().array() + (1 - momentum_) * mean).matrix();
    running_var_.value.data() = (momentum_ * running_var_.value.data().array() + (1 - momentum_) * var).matrix();
  }
  cached_ = true;
  return y;
}

template <typename Scalar>
Tensor<Scalar> BatchNorm<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  this->require_cache(cached_);
  if (grad_out.shape() != normalized_.shape()) this->shape_error(grad_out.shape(), "output-shaped gradient");
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Index n = grad_out.dim(0);
  const Index spatial = grad_out.size() / (n * channels_);
  const Scalar count = static_cast<Scalar>(n * spatial);
  auto sample = [&](const Tensor<Scalar>& t, Index b) { return t.matrix(n * channels_, spatial).middleRows(b * channels_, channels_).array(); };

  Vec sum_dy = Vec::Zero(channels_);
  Vec sum_dy_xh = Vec::Zero(channels_);
  for (Index b = 0; b < n; ++b) {
    sum_dy += sample(grad_out, b).rowwise().sum();
    sum_dy_xh += (sample(grad_out, b) * sample(normalized_, b)).rowwise().sum();
  }
  gamma_.grad.data() = sum_dy_xh.matrix();
  beta_.grad.data() = sum_dy.matrix();
  const Vec scale = gamma_.value.data().array() * inv_std_.array() / count;

  Tensor<Scalar> dx(grad_out.shape());
  for (Index b = 0; b < n; ++b) {
    auto out = dx.matrix(n * channels_, spatial).middleRows(b * channels_, channels_).array();
    out = ((sample(grad_out, b) * count).colwise() - sum_dy - sample(normalized_, b).colwise() * sum_dy_xh).colwise() * scale;
  }
  return dx;
}

// ReLU

template <typename Scalar>
Tensor<Scalar> Relu<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> y(x.shape(), x.data().cwiseMax(Scalar(0)));
  cached_ = mode != Mode::eval;
  if (cached_) output_ = y;
  return y;
}

template <typename Scalar>
Tensor<Scalar> Relu<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  this->require_cache(cached_);
  if (grad_out.shape() != output_.shape()) this->shape_error(grad_out.shape(), "output-shaped gradient");
  Tensor<Scalar> dx(grad_out.shape());
  const Scalar* out = output_.ptr();
  const Scalar* g = grad_out.ptr();
  Scalar* d = dx.ptr();
  for (Index i = 0, n = dx.size(); i < n; ++i) d[i] = out[i] > Scalar(0) ? g[i] : Scalar(0);
  return dx;
}

// MaxPool2 (floor on odd sizes)

template <typename Scalar>
Shape MaxPool2<Scalar>::output_shape(const Shape& in) const {
  if (in.size() != 3 || in[1] < 2 || in[2] < 2) this->shape_error(in, "(C, H >= 2, W >= 2)");
  return {in[0], in[1] / 2, in[2] / 2};
}

template <typename Scalar>
Tensor<Scalar> MaxPool2<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  if (x.rank() != 4) this->shape_error(x.shape(), "(N, C, H, W)");
  const Shape out_s = output_shape(sample_shape(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = out_s[1], ow = out_s[2];
  Tensor<Scalar> y(Shape{n, c, oh, ow});
  cached_ = mode != Mode::eval;
  if (cached_) argmax_.resize(static_cast<std::size_t>(y.size()));
  const Scalar* in = x.ptr();
  Scalar* out = y.ptr();
  for (Index plane = 0; plane < n * c; ++plane) {
    const Index in_off = plane * h * w;
    const Index out_off = plane * oh * ow;
    for (Index r = 0; r < oh; ++r) {
      const Index top = in_off + 2 * r * w;
      for (Index q = 0; q < ow; ++q) {
        Index best = top + 2 * q;
        if (in[top + 2 * q + 1] > in[best]) best = top + 2 * q + 1;
        if (in[top + w + 2 * q] > in[best]) best = top + w + 2 * q;
        if (in[top + w + 2 * q + 1] > in[best]) best = top + w + 2 * q + 1;
        out[out_off + r * ow + q] = in[best];
        if (cached_) argmax_[static_cast<std::size_t>(out_off + r * ow + q)] = best;
      }
    }
  }
  if (cached_) input_shape_ = x.shape();
  return y;
}

template <typename Scalar>
Tensor<Scalar> MaxPool2<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  this->require_cache(cached_);
  if (grad_out.size() != static_cast<Index>(argmax_.size())) this->shape_error(grad_out.shape(), "output-shaped gradient");
  Tensor<Scalar> dx(input_shape_);
  for (std::size_t i = 0; i < argmax_.size(); ++i) dx[argmax_[i]] += grad_out[static_cast<Index>(i)];
  return dx;
}

// Flatten

template <typename Scalar>
Tensor<Scalar> Flatten<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> y = x;
  y.reshape({x.dim(0), x.size() / x.dim(0)});
  cached_ = mode != Mode::eval;
  if (cached_) input_shape_ = x.shape();
  return y;
}

template <typename Scalar>
Tensor<Scalar> Flatten<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  this->require_cache(cached_);
  Tensor<Scalar> dx = grad_out;
  dx.reshape(input_shape_);
  return dx;
}

// Dense

template <typename Scalar>
Dense<Scalar>::Dense(std::string name, Index in_features, Index out_features, Init init, std::uint64_t seed)
    : Layer<Scalar>(std::move(name)),
      in_features_(in_features),
      out_features_(out_features),
      weight_(this->name_ + ".weight", {out_features, in_features}),
      bias_(this->name_ + ".bias", {out_features}) {
  init_uniform(weight_.value, init_limit(init, in_features, out_features), seed);
}

template <typename Scalar>
Shape Dense<Scalar>::output_shape(const Shape& in) const {
  if (in.size() != 1 || in[0] != in_features_) this->shape_error(in, "(" + std::to_string(in_features_) + ")");
  return {out_features_};
}

template <typename Scalar>
Tensor<Scalar> Dense<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  if (x.rank() != 2) this->shape_error(x.shape(), "(N, " + std::to_string(in_features_) + ")");
  output_shape(sample_shape(x.shape()));
  const Index n = x.dim(0);
  Tensor<Scalar> y(Shape{n, out_features_});
  auto ym = y.matrix(n, out_features_);
  ym.noalias() = x.matrix(n, in_features_) * weight_.value.matrix(out_features_, in_features_).transpose();
  ym.rowwise() += bias_.value.data().transpose();
  cached_ = mode != Mode::eval;
  if (cached_) input_ = x;
  return y;
}

template <typename Scalar>
Tensor<Scalar> Dense<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  this->require_cache(cached_);
  const Index n = input_.dim(0);
  if (grad_out.shape() != Shape{n, out_features_}) this->shape_error(grad_out.shape(), "output-shaped gradient");
  const auto g = grad_out.matrix(n, out_features_);
  weight_.grad.matrix(out_features_, in_features_).noalias() = g.transpose() * input_.matrix(n, in_features_);
  bias_.grad.data() = g.colwise().sum().transpose();
  Tensor<Scalar> dx(input_.shape());
  dx.matrix(n, in_features_).noalias() = g * weight_.value.matrix(out_features_, in_features_);
  return dx;
}

// Tanh

template <typename Scalar>
Tensor<Scalar> Tanh<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> y(x.shape(), x.data().array().tanh().matrix());
  cached_ = mode != Mode::eval;
  if (cached_) output_ = y;
  return y;
}

template <typename Scalar>
Tensor<Scalar> Tanh<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  this->require_cache(cached_);
  if (grad_out.shape() != output_.shape()) this->shape_error(grad_out.shape(), "output-shaped gradient");
  return Tensor<Scalar>(grad_out.shape(),
                        (grad_out.data().array() * (Scalar(1) - output_.data().array().square())).matrix());
}

// Sequential

template <typename Scalar>
Sequential<Scalar>::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename Scalar>
Sequential<Scalar>& Sequential<Scalar>::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    layers_ = std::move(copy.layers_);
  }
  return *this;
}

template <typename Scalar>
Tensor<Scalar> Sequential<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
  Tensor<Scalar> h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

template <typename Scalar>
Tensor<Scalar> Sequential<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  Tensor<Scalar> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> Sequential<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  for (auto& l : layers_) {
    auto p = l->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename Scalar>
Shape Sequential<Scalar>::output_shape(Shape in) const {
  for (const auto& l : layers_) in = l->output_shape(in);
  return in;
}

// Specs

ActorSpec ActorSpec::reference(int height, int width) { return {height, width, {32, 64, 64, 128, 256}, 256}; }

CriticSpec CriticSpec::reference(int height, int width) { return {height, width, {16, 32}, 32, {256, 256}}; }

// Network

template <typename Scalar>
std::vector<Parameter<Scalar>*> Network<Scalar>::trainable_parameters() {
  std::vector<Parameter<Scalar>*> out;
  for (Parameter<Scalar>* p : parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

template <typename Scalar>
void Network<Scalar>::zero_grad() {
  for (Parameter<Scalar>* p : parameters()) p->grad.set_zero();
}

namespace {

template <typename Scalar>
void add_conv_blocks(Sequential<Scalar>& seq, const std::string& prefix, const std::vector<int>& channels,
                     std::uint64_t seed) {
  Index in = 1;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string id = prefix + ".block" + std::to_string(i);
    auto& conv =
        seq.template add<Conv3x3<Scalar>>(id + ".conv", in, channels[i], Init::he_uniform, derive_seed(seed, i, 1));
    if (i == 0) conv.set_input_gradient(false);
    seq.template add<BatchNorm<Scalar>>(id + ".bn", channels[i]);
    seq.template add<Relu<Scalar>>(id + ".relu");
    seq.template add<MaxPool2<Scalar>>(id + ".pool");
    in = channels[i];
  }
}

}  // namespace

template <typename Scalar>
Actor<Scalar>::Actor(const ActorSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.conv_channels.empty() || spec.dense_units < 1) throw ConfigError("actor spec needs convs and dense units");
  add_conv_blocks(body_, "actor", spec.conv_channels, seed);
  body_.template add<Flatten<Scalar>>("actor.flatten");
  const Shape conv_out = body_.output_shape({1, spec.input_height, spec.input_width});
  body_.template add<Dense<Scalar>>("actor.fc", conv_out[0], spec.dense_units, Init::he_uniform, derive_seed(seed, 100));
  body_.template add<BatchNorm<Scalar>>("actor.fc.bn", spec.dense_units);
  body_.template add<Relu<Scalar>>("actor.fc.relu");
  body_.template add<Dense<Scalar>>("actor.out", spec.dense_units, 1, Init::xavier_uniform, derive_seed(seed, 101));
  body_.template add<Tanh<Scalar>>("actor.tanh");
}

template <typename Scalar>
void Actor<Scalar>::check_input(const Tensor<Scalar>& state) const {
  if (state.rank() != 4 || state.dim(1) != 1 || state.dim(2) != spec_.input_height ||
      state.dim(3) != spec_.input_width)
    throw RuntimeError("actor: state shape " + to_string(state.shape()) + " does not match (N, 1, " +
                       std::to_string(spec_.input_height) + ", " + std::to_string(spec_.input_width) + ")");
}

template <typename Scalar>
Tensor<Scalar> Actor<Scalar>::forward(const Tensor<Scalar>& state, Mode mode) {
  check_input(state);
  return body_.forward(state, mode);
}

template <typename Scalar>
void Actor<Scalar>::backward(const Tensor<Scalar>& grad_out) {
  body_.backward(grad_out);
}

template <typename Scalar>
Critic<Scalar>::Critic(const CriticSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.conv_channels.empty() || spec.branch_units < 1 || spec.head_units.empty())
    throw ConfigError("critic spec needs convs, branch units and head layers");
  add_conv_blocks(state_branch_, "critic.state", spec.conv_channels, seed);
  state_branch_.template add<Flatten<Scalar>>("critic.state.flatten");
  const Shape conv_out = state_branch_.output_shape({1, spec.input_height, spec.input_width});
  state_branch_.template add<Dense<Scalar>>("critic.state.fc", conv_out[0], spec.branch_units, Init::he_uniform,
                                            derive_seed(seed, 100));
  state_branch_.template add<BatchNorm<Scalar>>("critic.state.fc.bn", spec.branch_units);
  state_branch_.template add<Relu<Scalar>>("critic.state.fc.relu");
  state_features_ = spec.branch_units;

  action_branch_.template add<Dense<Scalar>>("critic.action.fc", 1, spec.branch_units, Init::he_uniform,
                                             derive_seed(seed, 101));
  action_branch_.template add<BatchNorm<Scalar>>("critic.action.fc.bn", spec.branch_units);
  action_branch_.template add<Relu<Scalar>>("critic.action.fc.relu");

  Index in = 2 * spec.branch_units;
  for (std::size_t i = 0; i < spec.head_units.size(); ++i) {
    const std::string id = "critic.head" + std::to_string(i);
    head_.template add<Dense<Scalar>>(id + ".fc", in, spec.head_units[i], Init::he_uniform, derive_seed(seed, 200 + i));
    head_.template add<Relu<Scalar>>(id + ".relu");
    in = spec.head_units[i];
  }
  head_.template add<Dense<Scalar>>("critic.out", in, 1, Init::xavier_uniform, derive_seed(seed, 300));
}

template <typename Scalar>
Tensor<Scalar> Critic<Scalar>::forward(const Tensor<Scalar>& state, const Tensor<Scalar>& action, Mode mode) {
  if (state.rank() != 4 || state.dim(1) != 1 || state.dim(2) != spec_.input_height ||
      state.dim(3) != spec_.input_width)
    throw RuntimeError("critic: state shape " + to_string(state.shape()) + " does not match the critic spec");
  if (action.shape() != Shape{state.dim(0), 1})
    throw RuntimeError("critic: action shape " + to_string(action.shape()) + " must be (N, 1)");
  const Index n = state.dim(0);
  const Tensor<Scalar> s = state_branch_.forward(state, mode);
  const Tensor<Scalar> a = action_branch_.forward(action, mode);
  Tensor<Scalar> joined(Shape{n, 2 * state_features_});
  auto jm = joined.matrix(n, 2 * state_features_);
  jm.leftCols(state_features_) = s.matrix(n, state_features_);
  jm.rightCols(state_features_) = a.matrix(n, state_features_);
  return head_.forward(joined, mode);
}

template <typename Scalar>
Tensor<Scalar> Critic<Scalar>::backward(const Tensor<Scalar>& grad_out, bool through_state) {
  const Tensor<Scalar> g = head_.backward(grad_out);
  const Index n = g.dim(0);
  Tensor<Scalar> ga(Shape{n, state_features_});
  ga.matrix(n, state_features_) = g.matrix(n, 2 * state_features_).rightCols(state_features_);
  if (through_state) {
    Tensor<Scalar> gs(Shape{n, state_features_});
    gs.matrix(n, state_features_) = g.matrix(n, 2 * state_features_).leftCols(state_features_);
    state_branch_.backward(gs);
  }
  return action_branch_.backward(ga);
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> Critic<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out = state_branch_.parameters();
  for (auto* p : action_branch_.parameters()) out.push_back(p);
  for (auto* p : head_.parameters()) out.push_back(p);
  return out;
}

// Optimizer and target tracking

template <typename Scalar>
void adam_step(Network<Scalar>& net, const AdamConfig& config) {
  net.adam_steps += 1;
  const double t = static_cast<double>(net.adam_steps);
  const Scalar b1 = static_cast<Scalar>(config.beta1);
  const Scalar b2 = static_cast<Scalar>(config.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(config.beta1, t));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(config.beta2, t));
  const Scalar lr = static_cast<Scalar>(config.learning_rate);
  const Scalar eps = static_cast<Scalar>(config.epsilon);
  for (Parameter<Scalar>* p : net.trainable_parameters()) {
    auto g = p->grad.data().array();
    auto m = p->adam_m.data().array();
    auto v = p->adam_v.data().array();
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.square();
    p->value.data().array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

template <typename Scalar>
void soft_update(Network<Scalar>& target, Network<Scalar>& online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("soft_update: tau must lie in [0, 1]");
  auto tp = target.parameters();
  auto op = online.parameters();
  if (tp.size() != op.size()) throw RuntimeError("soft_update: parameter count mismatch");
  const Scalar t = static_cast<Scalar>(tau);
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]->value.shape() != op[i]->value.shape())
      throw RuntimeError("soft_update: shape mismatch for " + tp[i]->name);
    if (tau == 1.0) {
      tp[i]->value.data() = op[i]->value.data();
    } else if (tau != 0.0) {
      tp[i]->value.data() = t * op[i]->value.data() + (Scalar(1) - t) * tp[i]->value.data();
    }
  }
}

// Checkpoints

namespace {

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

void write_tensor(std::ostream& out, const std::string& name, const Shape& shape, auto&& value_at) {
  if (name.size() > 0xFFFF) throw RuntimeError("tensor name too long");
  io::put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  io::put_u8(out, static_cast<std::uint8_t>(shape.size()));
  for (Index d : shape) io::put_u32(out, static_cast<std::uint32_t>(d));
  const Index n = numel(shape);
  for (Index i = 0; i < n; ++i) io::put_f32(out, static_cast<float>(value_at(i)));
}

}  // namespace

template <typename Scalar>
void save_params(Network<Scalar>& net, std::ostream& out) {
  const auto params = net.parameters();
  std::uint32_t count = 1;
  for (const auto* p : params) count += p->trainable ? 3 : 1;
  io::put_magic(out, "RGNP");
  io::put_u16(out, kCheckpointVersion);
  io::put_u32(out, count);
  const double steps = static_cast<double>(net.adam_steps);
  write_tensor(out, net.kind() + ".adam_steps", Shape{1}, [&](Index) { return steps; });
  for (const auto* p : params) {
    write_tensor(out, p->name, p->value.shape(), [&](Index i) { return p->value[i]; });
    if (p->trainable) {
      write_tensor(out, p->name + "#m", p->value.shape(), [&](Index i) { return p->adam_m[i]; });
      write_tensor(out, p->name + "#v", p->value.shape(), [&](Index i) { return p->adam_v[i]; });
    }
  }
  if (!out) throw RuntimeError("failed writing checkpoint");
}

template <typename Scalar>
void save_params(Network<Scalar>& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  save_params(net, out);
}

template <typename Scalar>
void load_params(Network<Scalar>& net, std::istream& in) {
  io::expect_magic(in, "RGNP", "checkpoint");
  const std::uint16_t version = io::get_u16(in);
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = io::get_u32(in);
  std::map<std::string, StoredTensor> stored;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t len = io::get_u16(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != len) throw DataError("checkpoint: truncated tensor name");
    const std::uint8_t rank = io::get_u8(in);
    StoredTensor st;
    for (std::uint8_t r = 0; r < rank; ++r) st.shape.push_back(io::get_u32(in));
    const Index n = numel(st.shape);
    if (n > (Index{1} << 30)) throw DataError("checkpoint: tensor " + name + " implausibly large");
    st.values.resize(static_cast<std::size_t>(n));
    for (float& v : st.values) v = io::get_f32(in);
    if (!stored.emplace(name, std::move(st)).second) throw DataError("checkpoint: duplicate tensor " + name);
  }

  const auto params = net.parameters();
  auto fetch = [&](const std::string& name, const Shape& shape) -> const StoredTensor& {
    auto it = stored.find(name);
    if (it == stored.end()) throw DataError("checkpoint: missing tensor " + name + " for a " + net.kind());
    if (it->second.shape != shape)
      throw DataError("checkpoint: shape mismatch for " + name + ": stored " + to_string(it->second.shape) +
                      ", network expects " + to_string(shape));
    return it->second;
  };
  // Validate everything before touching the network.
  std::size_t expected = 1;
  const StoredTensor& steps = fetch(net.kind() + ".adam_steps", Shape{1});
  for (const auto* p : params) {
    fetch(p->name, p->value.shape());
    expected += 1;
    if (p->trainable) {
      fetch(p->name + "#m", p->value.shape());
      fetch(p->name + "#v", p->value.shape());
      expected += 2;
    }
  }
  if (expected != stored.size()) throw DataError("checkpoint: unexpected extra tensors for a " + net.kind());

  auto assign = [](Tensor<Scalar>& dst, const StoredTensor& src) {
    for (Index i = 0; i < dst.size(); ++i) dst[i] = static_cast<Scalar>(src.values[static_cast<std::size_t>(i)]);
  };
  net.adam_steps = static_cast<std::int64_t>(steps.values[0]);
  for (auto* p : params) {
    assign(p->value, stored.at(p->name));
    if (p->trainable) {
      assign(p->adam_m, stored.at(p->name + "#m"));
      assign(p->adam_v, stored.at(p->name + "#v"));
    }
  }
}

template <typename Scalar>
void load_params(Network<Scalar>& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  load_params(net, in);
}

template class Layer<float>;
template class Layer<double>;
template class Conv3x3<float>;
template class Conv3x3<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Relu<float>;
template class Relu<double>;
template class MaxPool2<float>;
template class MaxPool2<double>;
template class Flatten<float>;
template class Flatten<double>;
template class Dense<float>;
template class Dense<double>;
template class Tanh<float>;
template class Tanh<double>;
template class Sequential<float>;
template class Sequential<double>;
template class Network<float>;
template class Network<double>;
template class Actor<float>;
template class Actor<double>;
template class Critic<float>;
template class Critic<double>;

template void adam_step(Network<float>&, const AdamConfig&);
template void adam_step(Network<double>&, const AdamConfig&);
template void soft_update(Network<float>&, Network<float>&, double);
template void soft_update(Network<double>&, Network<double>&, double);
template void save_params(Network<float>&, const std::filesystem::path&);
template void save_params(Network<double>&, const std::filesystem::path&);
template void save_params(Network<float>&, std::ostream&);
template void save_params(Network<double>&, std::ostream&);
template void load_params(Network<float>&, const std::filesystem::path&);
template void load_params(Network<double>&, const std::filesystem::path&);
template void load_params(Network<float>&, std::istream&);
template void load_params(Network<double>&, std::istream&);

}  // namespace ragc::nn
