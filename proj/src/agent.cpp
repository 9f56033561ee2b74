#include "ragc/agent.hpp"

#include <algorithm>
#include <fstream>

#include "binary_io.hpp"

namespace ragc {

// Replay memory

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
  ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayMemory::push(Transition t) {
  if (!t.state || !t.next_state) throw RuntimeError("replay: transition without state");
  if (t.state->rows() != t.next_state->rows() || t.state->cols() != t.next_state->cols())
    throw RuntimeError("replay: state and next state shapes differ");
  if (size_ > 0) {
    const Transition& first = at(0);
    if (first.state->rows() != t.state->rows() || first.state->cols() != t.state->cols())
      throw RuntimeError("replay: state shape differs from stored transitions");
  }
  if (!std::isfinite(t.action)) throw RuntimeError("replay: non-finite action");
  if (ring_.size() < capacity_) {
    ring_.push_back(std::move(t));
    ++size_;
    return;
  }
  ring_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayMemory::at(std::size_t i) const {
  if (i >= size_) throw RuntimeError("replay: index out of range");
  return ring_[(head_ + i) % ring_.size()];
}

std::vector<const Transition*> ReplayMemory::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  if (batch_size == 0) throw RuntimeError("replay: batch size must be positive");
  if (size_ < batch_size)
    throw RuntimeError("replay: cannot sample " + std::to_string(batch_size) + " from " + std::to_string(size_) +
                       " stored transitions");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<const Transition*> out(batch_size);
  for (auto& t : out) t = &ring_[pick(rng)];
  return out;
}

namespace {

constexpr std::uint16_t kReplayVersion = 1;

}  // namespace

// "RGRB", version, capacity, H, W, unique state count, states (f32),
// transition count, transitions (state index, next index, action, reward, done).
void ReplayMemory::save(std::ostream& out) const {
  std::vector<const StateImage*> states;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> refs(size_);
  auto index_of = [&](const StatePtr& s) -> std::uint32_t {
    // Shared states are adjacent in insertion order.
    if (!states.empty() && states.back() == s.get()) return static_cast<std::uint32_t>(states.size() - 1);
    for (std::size_t k = states.size() >= 2 ? states.size() - 2 : 0; k < states.size(); ++k)
      if (states[k] == s.get()) return static_cast<std::uint32_t>(k);
    states.push_back(s.get());
    return static_cast<std::uint32_t>(states.size() - 1);
  };
  for (std::size_t i = 0; i < size_; ++i) {
    const Transition& t = at(i);
    refs[i].first = index_of(t.state);
    refs[i].second = index_of(t.next_state);
  }
  const std::uint32_t h = size_ ? static_cast<std::uint32_t>(at(0).state->rows()) : 0;
  const std::uint32_t w = size_ ? static_cast<std::uint32_t>(at(0).state->cols()) : 0;
  io::put_magic(out, "RGRB");
  io::put_u16(out, kReplayVersion);
  io::put_u64(out, capacity_);
  io::put_u32(out, h);
  io::put_u32(out, w);
  io::put_u32(out, static_cast<std::uint32_t>(states.size()));
  for (const StateImage* s : states)
    for (Eigen::Index k = 0; k < s->size(); ++k) io::put_f32(out, s->data()[k]);
  io::put_u32(out, static_cast<std::uint32_t>(size_));
  for (std::size_t i = 0; i < size_; ++i) {
    const Transition& t = at(i);
    io::put_u32(out, refs[i].first);
    io::put_u32(out, refs[i].second);
    io::put_f32(out, t.action);
    io::put_f32(out, t.reward);
    io::put_u8(out, t.done ? 1 : 0);
  }
  if (!out) throw RuntimeError("replay: write failed");
}

void ReplayMemory::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  save(out);
}

ReplayMemory ReplayMemory::load(std::istream& in) {
  io::expect_magic(in, "RGRB", "replay snapshot");
  if (io::get_u16(in) != kReplayVersion) throw DataError("replay snapshot: unsupported version");
  const std::uint64_t capacity = io::get_u64(in);
  const std::uint32_t h = io::get_u32(in);
  const std::uint32_t w = io::get_u32(in);
  const std::uint32_t n_states = io::get_u32(in);
  if (capacity == 0 || capacity > (1ULL << 32)) throw DataError("replay snapshot: bad capacity");
  std::vector<StatePtr> states;
  states.reserve(n_states);
  for (std::uint32_t k = 0; k < n_states; ++k) {
    auto s = std::make_shared<StateImage>(h, w);
    for (Eigen::Index j = 0; j < s->size(); ++j) s->data()[j] = io::get_f32(in);
    states.push_back(std::move(s));
  }
  const std::uint32_t count = io::get_u32(in);
  if (count > capacity) throw DataError("replay snapshot: more transitions than capacity");
  ReplayMemory memory(capacity);
  for (std::uint32_t i = 0; i < count; ++i) {
    Transition t;
    const std::uint32_t a = io::get_u32(in);
    const std::uint32_t b = io::get_u32(in);
    if (a >= n_states || b >= n_states) throw DataError("replay snapshot: state index out of range");
    t.state = states[a];
    t.next_state = states[b];
    t.action = io::get_f32(in);
    t.reward = io::get_f32(in);
    t.done = io::get_u8(in) != 0;
    memory.push(std::move(t));
  }
  return memory;
}

ReplayMemory ReplayMemory::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open replay snapshot " + path.string());
  return load(in);
}

// OU noise

double OUProcess::sample(std::mt19937_64& rng) {
  const double eps = std::normal_distribution<double>(0.0, 1.0)(rng);
  x_ += config_.theta * (config_.mu - x_) * config_.dt + config_.sigma * std::sqrt(config_.dt) * eps;
  return x_;
}

double OUProcess::stationary_variance() const {
  const double t = config_.theta;
  return config_.sigma * config_.sigma / (2.0 * t - t * t * config_.dt);
}

// Updates

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("agent.gamma must lie in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("agent.tau must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("agent.batch_size must be positive");
  if (replay_capacity < batch_size) throw ConfigError("agent.replay_capacity must be at least the batch size");
  if (warmup_steps < 0) throw ConfigError("agent.warmup_steps must be non-negative");
  if (!(actor_learning_rate > 0.0) || !(critic_learning_rate > 0.0))
    throw ConfigError("agent learning rates must be positive");
  if (!(noise_decay > 0.0 && noise_decay <= 1.0)) throw ConfigError("agent.noise_decay must lie in (0, 1]");
  if (!(ou.theta > 0.0) || !(ou.sigma >= 0.0) || !(ou.dt > 0.0)) throw ConfigError("bad OU parameters");
  if (actor.input_height != critic.input_height || actor.input_width != critic.input_width)
    throw ConfigError("actor and critic input sizes differ");
}

Batch make_batch(std::span<const Transition* const> transitions) {
  const auto n = static_cast<nn::Index>(transitions.size());
  std::vector<const StateImage*> s(transitions.size()), s2(transitions.size());
  Batch b;
  b.actions = Tensorf(nn::Shape{n, 1});
  b.rewards = Tensorf(nn::Shape{n, 1});
  b.dones = Tensorf(nn::Shape{n, 1});
  for (nn::Index i = 0; i < n; ++i) {
    const Transition& t = *transitions[static_cast<std::size_t>(i)];
    s[static_cast<std::size_t>(i)] = t.state.get();
    s2[static_cast<std::size_t>(i)] = t.next_state.get();
    b.actions[i] = t.action;
    b.rewards[i] = t.reward;
    b.dones[i] = t.done ? 1.0f : 0.0f;
  }
  b.states = nn::stack_images<float, StateImage>(s);
  b.next_states = nn::stack_images<float, StateImage>(s2);
  return b;
}

Tensorf bellman_targets(const Tensorf& rewards, const Tensorf& dones, const Tensorf& next_q, double gamma) {
  if (rewards.shape() != dones.shape() || rewards.shape() != next_q.shape())
    throw RuntimeError("bellman_targets: shape mismatch");
  Tensorf y(rewards.shape());
  const float g = static_cast<float>(gamma);
  for (nn::Index i = 0; i < y.size(); ++i) y[i] = rewards[i] + (1.0f - dones[i]) * g * next_q[i];
  return y;
}

double mse_loss(const Tensorf& q, const Tensorf& targets, Tensorf* grad_q) {
  if (q.shape() != targets.shape()) throw RuntimeError("mse_loss: shape mismatch");
  const double n = static_cast<double>(q.size());
  double loss = 0.0;
  if (grad_q) *grad_q = Tensorf(q.shape());
  for (nn::Index i = 0; i < q.size(); ++i) {
    const double d = static_cast<double>(q[i]) - static_cast<double>(targets[i]);
    loss += d * d;
    if (grad_q) (*grad_q)[i] = static_cast<float>(2.0 * d / n);
  }
  return loss / n;
}

Tensorf CriticActionValue::value(const Tensorf& states, const Tensorf& actions) {
  return critic_.forward(states, actions, nn::Mode::batch_stats);
}

Tensorf CriticActionValue::action_gradient(const Tensorf& grad_out) { return critic_.backward(grad_out, false); }

double critic_update(nn::Critic<float>& critic, nn::Actor<float>& target_actor, nn::Critic<float>& target_critic,
                     const Batch& batch, double gamma, const nn::AdamConfig& adam) {
  const Tensorf next_actions = target_actor.forward(batch.next_states, nn::Mode::eval);
  const Tensorf next_q = target_critic.forward(batch.next_states, next_actions, nn::Mode::eval);
  const Tensorf targets = bellman_targets(batch.rewards, batch.dones, next_q, gamma);
  const Tensorf q = critic.forward(batch.states, batch.actions, nn::Mode::train);
  Tensorf grad;
  const double loss = mse_loss(q, targets, &grad);
  critic.backward(grad);
  nn::adam_step(critic, adam);
  return loss;
}

double actor_update(nn::Actor<float>& actor, ActionValue& q, const Tensorf& states, const nn::AdamConfig& adam) {
  const Tensorf actions = actor.forward(states, nn::Mode::train);
  const Tensorf values = q.value(states, actions);
  const double objective = values.data().cast<double>().mean();
  // Descend on -J.
  Tensorf grad(values.shape());
  grad.data().setConstant(-1.0f / static_cast<float>(values.size()));
  actor.backward(q.action_gradient(grad));
  nn::adam_step(actor, adam);
  return objective;
}

// Agent

DdpgAgent::DdpgAgent(AgentConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      actor_(config_.actor, derive_seed(seed, 1)),
      critic_(config_.critic, derive_seed(seed, 2)),
      target_actor_(actor_),
      target_critic_(critic_),
      memory_(static_cast<std::size_t>(config_.replay_capacity)),
      ou_(config_.ou),
      rng_(derive_seed(seed, 3)) {
  config_.validate();
}

double DdpgAgent::act(const StateImage& state, bool explore) {
  const StateImage* ptr = &state;
  const Tensorf out = actor_.forward(nn::stack_images<float, StateImage>(std::span<const StateImage* const>(&ptr, 1)),
                                     nn::Mode::eval);
  double a = out[0];
  if (explore) a += ou_.sample(rng_);
  return std::clamp(a, -1.0, 1.0);
}

double DdpgAgent::random_action() { return std::uniform_real_distribution<double>(-1.0, 1.0)(rng_); }

bool DdpgAgent::ready() const {
  return steps_ >= config_.warmup_steps && memory_.size() >= static_cast<std::size_t>(config_.batch_size);
}

UpdateStats DdpgAgent::update() {
  const auto picked = memory_.sample(static_cast<std::size_t>(config_.batch_size), rng_);
  const Batch batch = make_batch(picked);
  UpdateStats stats;
  stats.critic_loss = critic_update(critic_, target_actor_, target_critic_, batch, config_.gamma,
                                    {.learning_rate = config_.critic_learning_rate});
  CriticActionValue q(critic_);
  stats.actor_objective = actor_update(actor_, q, batch.states, {.learning_rate = config_.actor_learning_rate});
  nn::soft_update(target_actor_, actor_, config_.tau);
  nn::soft_update(target_critic_, critic_, config_.tau);
  return stats;
}

void DdpgAgent::end_episode() {
  ou_.reset();
  if (config_.noise_decay < 1.0) ou_.set_sigma(ou_.config().sigma * config_.noise_decay);
}

void DdpgAgent::save(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_params(actor_, dir / "actor.rgnp");
  nn::save_params(critic_, dir / "critic.rgnp");
  nn::save_params(target_actor_, dir / "target_actor.rgnp");
  nn::save_params(target_critic_, dir / "target_critic.rgnp");
  memory_.save(dir / "replay.rgrb");
  std::ofstream out(dir / "agent_state.txt");
  out.precision(17);
  out << "steps " << steps_ << "\nou_value " << ou_.value() << "\nou_sigma " << ou_.config().sigma << "\nrng "
      << rng_ << "\n";
  if (!out) throw RuntimeError("cannot write agent state in " + dir.string());
}

void DdpgAgent::load(const std::filesystem::path& dir) {
  // Stage into copies so a failure leaves this agent untouched.
  nn::Actor<float> actor = actor_, target_actor = target_actor_;
  nn::Critic<float> critic = critic_, target_critic = target_critic_;
  nn::load_params(actor, dir / "actor.rgnp");
  nn::load_params(critic, dir / "critic.rgnp");
  nn::load_params(target_actor, dir / "target_actor.rgnp");
  nn::load_params(target_critic, dir / "target_critic.rgnp");
  ReplayMemory memory = ReplayMemory::load(dir / "replay.rgrb");
  std::ifstream in(dir / "agent_state.txt");
  if (!in) throw DataError("missing agent state in " + dir.string());
  std::string key;
  std::int64_t steps = 0;
  double ou_value = 0.0, ou_sigma = 0.0;
  std::mt19937_64 rng;
  in >> key >> steps >> key >> ou_value >> key >> ou_sigma >> key >> rng;
  if (!in) throw DataError("corrupt agent state in " + dir.string());
  actor_ = std::move(actor);
  critic_ = std::move(critic);
  target_actor_ = std::move(target_actor);
  target_critic_ = std::move(target_critic);
  memory_ = std::move(memory);
  steps_ = steps;
  ou_.set_value(ou_value);
  ou_.set_sigma(ou_sigma);
  rng_ = rng;
}

}  // namespace ragc
