#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "ragc/neural.hpp"
#include "ragc/radar.hpp"

namespace ragc {

using StatePtr = std::shared_ptr<const StateImage>;

/// Consecutive transitions share their state images.
struct Transition {
  StatePtr state;
  float action = 0.0f;
  float reward = 0.0f;
  StatePtr next_state;
  bool done = false;
};

class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity);

  void push(Transition t);
  /// Uniform with replacement; throws RuntimeError when size() < batch_size.
  std::vector<const Transition*> sample(std::size_t batch_size, std::mt19937_64& rng) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  /// i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static ReplayMemory load(std::istream& in);
  static ReplayMemory load(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  std::vector<Transition> ring_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

struct OUConfig {
  double theta = 0.15;
  double mu = 0.0;
  double sigma = 0.2;
  double dt = 1.0;
};

class OUProcess {
 public:
  explicit OUProcess(OUConfig config = {}) : config_(config), x_(config.mu) {}

  double sample(std::mt19937_64& rng);
  void reset() { x_ = config_.mu; }
  double value() const { return x_; }
  void set_value(double x) { x_ = x; }
  const OUConfig& config() const { return config_; }
  void set_sigma(double sigma) { config_.sigma = sigma; }

  /// sigma^2 / (2 theta - theta^2 dt)
  double stationary_variance() const;

 private:
  OUConfig config_;
  double x_;
};

struct AgentConfig {
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 32;
  int replay_capacity = 50000;
  int warmup_steps = 1000;
  double actor_learning_rate = 1e-4;
  double critic_learning_rate = 1e-3;
  /// Per-episode multiplicative decay of the OU sigma; 1 disables decay.
  double noise_decay = 1.0;
  OUConfig ou;
  nn::ActorSpec actor;
  nn::CriticSpec critic;

  void validate() const;
};

using Tensorf = nn::Tensor<float>;

struct Batch {
  Tensorf states;       // (N, 1, H, W)
  Tensorf actions;      // (N, 1)
  Tensorf rewards;      // (N, 1)
  Tensorf next_states;  // (N, 1, H, W)
  Tensorf dones;        // (N, 1), 1 for terminal
};

Batch make_batch(std::span<const Transition* const> transitions);

/// y = r + (1 - done) * gamma * q_next
Tensorf bellman_targets(const Tensorf& rewards, const Tensorf& dones, const Tensorf& next_q, double gamma);

/// Mean squared error and its gradient with respect to `q`.
double mse_loss(const Tensorf& q, const Tensorf& targets, Tensorf* grad_q = nullptr);

/// Differentiable Q(s, a) seen from the actor update.
class ActionValue {
 public:
  virtual ~ActionValue() = default;
  virtual Tensorf value(const Tensorf& states, const Tensorf& actions) = 0;
  /// dQ/da for the most recent value() call, scaled by grad_out.
  virtual Tensorf action_gradient(const Tensorf& grad_out) = 0;
};

/// Critic with frozen running statistics, batch statistics in the forward pass.
class CriticActionValue final : public ActionValue {
 public:
  explicit CriticActionValue(nn::Critic<float>& critic) : critic_(critic) {}
  Tensorf value(const Tensorf& states, const Tensorf& actions) override;
  Tensorf action_gradient(const Tensorf& grad_out) override;

 private:
  nn::Critic<float>& critic_;
};

/// One regression step of the critic towards the target networks' Bellman
/// targets. Returns the loss before the step.
double critic_update(nn::Critic<float>& critic, nn::Actor<float>& target_actor, nn::Critic<float>& target_critic,
                     const Batch& batch, double gamma, const nn::AdamConfig& adam);

/// One ascent step of mean Q(s, mu(s)) on the actor. Returns the objective
/// before the step. Never modifies the action-value's parameters.
double actor_update(nn::Actor<float>& actor, ActionValue& q, const Tensorf& states, const nn::AdamConfig& adam);

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_objective = 0.0;
};

class DdpgAgent {
 public:
  DdpgAgent(AgentConfig config, std::uint64_t seed);

  /// Greedy action, plus OU noise when exploring; clipped to [-1, 1].
  double act(const StateImage& state, bool explore);
  /// Uniform action in [-1, 1] for the warmup phase.
  double random_action();

  void remember(Transition t) { memory_.push(std::move(t)); }
  bool ready() const;
  /// Critic update, actor update and target tracking on one sampled batch.
  UpdateStats update();
  void end_episode();

  const AgentConfig& config() const { return config_; }
  nn::Actor<float>& actor() { return actor_; }
  nn::Critic<float>& critic() { return critic_; }
  nn::Actor<float>& target_actor() { return target_actor_; }
  nn::Critic<float>& target_critic() { return target_critic_; }
  ReplayMemory& memory() { return memory_; }
  OUProcess& noise() { return ou_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  void count_step() { ++steps_; }

  /// Networks, replay memory and RNG/noise state, for resumable training.
  void save(const std::filesystem::path& dir);
  void load(const std::filesystem::path& dir);

 private:
  AgentConfig config_;
  nn::Actor<float> actor_;
  nn::Critic<float> critic_;
  nn::Actor<float> target_actor_;
  nn::Critic<float> target_critic_;
  ReplayMemory memory_;
  OUProcess ou_;
  std::mt19937_64 rng_;
  std::int64_t steps_ = 0;
};

}  // namespace ragc
