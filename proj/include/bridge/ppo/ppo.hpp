#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bridge/env/world.hpp"
#include "bridge/nn/adam.hpp"
#include "bridge/nn/network.hpp"

namespace bridge::ppo {

using Observation = std::array<double, env::kObservationSize>;
using ActionMask = std::array<bool, env::kActionCount>;

struct PPOConfig {
  int rollout_length = 2048;  // tau
  int minibatch_size = 768;
  int epochs = 20;            // K_epochs
  double learning_rate = 1e-4;
  double gamma = 0.99;
  double clip = 0.2;          // epsilon of the ratio clip
  double value_coef = 0.5;    // c1
  double entropy_coef = 0.01; // c2
  double grad_clip = 0.5;     // elementwise bound on every gradient component
  /// Steps between updates; 0 means one update per full rollout (K = tau).
  int update_interval = 0;
  int total_episodes = 20000;
  /// Stop after this many updates even if the episode budget remains (0 = no cap).
  int max_updates = 0;
  int buffer_capacity = 3072;
  std::vector<nn::Index> hidden = {256, 256};
  bool normalize_advantages = true;
  std::uint64_t seed = 1;

  int steps_per_update() const { return update_interval > 0 ? update_interval : rollout_length; }
};

/// Throws ConfigError.
void validate(const PPOConfig& config);

/// Consumes PPO keys (ppo.rollout_length, ppo.epochs, ...) from kv.
PPOConfig take_ppo(KeyValues& kv, PPOConfig base = {});
KeyValues to_key_values(const PPOConfig& config);

struct Networks {
  nn::NetworkSpec actor_spec;   // observation -> 5 logits
  nn::NetworkSpec critic_spec;  // observation -> 1 value
  nn::Parameters actor;
  nn::Parameters critic;
};

Networks build_networks(const PPOConfig& config);

/// Softmax over the unmasked logits; masked actions get probability 0.
std::array<double, env::kActionCount> masked_softmax(const double* logits, const ActionMask& mask);

/// Inverse-CDF draw from a categorical distribution.
int sample_action(const std::array<double, env::kActionCount>& probs, std::mt19937_64& rng);

struct Transition {
  Observation obs{};
  ActionMask mask{};
  int action = 0;
  double reward = 0.0;
  Observation next_obs{};
  bool done = false;
  double log_prob = 0.0;  // under the behaviour policy, <= 0
  double value = 0.0;     // V(s_t) at sampling time
  int t_pause = 0;
  int traffic = 0;
};

struct RolloutBuffer {
  std::vector<Transition> transitions;
  std::vector<double> returns;
  std::vector<double> raw_advantages;
  std::vector<double> advantages;  // normalised when enabled
  double advantage_mean = 0.0;
  double advantage_std = 1.0;
  std::size_t capacity = 3072;
  bool prepared = false;
  /// Returns of the episodes that ended inside this rollout, in order.
  std::vector<double> episode_returns;
  double sim_seconds = 0.0;  // mission time of the steps collected
};

/// Rollout driver state carried across updates so episodes continue.
struct Collector {
  env::Environment* env = nullptr;
  std::uint64_t seed = 1;
  std::uint64_t episodes_started = 0;
  double episode_return = 0.0;
  std::mt19937_64 rng;

  Collector(env::Environment& e, std::uint64_t s);
  /// Resets the environment with the seed of the next episode.
  void start_episode();
};

/// Exactly `steps` transitions sampled from the actor's masked softmax.
/// Finished episodes trigger a reset. Log-probabilities and values are
/// recorded at sampling time.
RolloutBuffer collect_rollout(Collector& collector, const Networks& nets, int steps, std::size_t capacity);

/// Discounted reward-to-go per episode segment, bootstrapped with V of the
/// final next-state when the rollout truncates a running episode;
/// A = R - V, then optional normalisation to zero mean, unit variance.
void compute_returns_advantages(RolloutBuffer& buffer, const Networks& nets, double gamma, bool normalize = true);

/// min(rho * A, clip(rho, 1 - eps, 1 + eps) * A).
double clipped_surrogate(double ratio, double advantage, double epsilon);

struct LossResult {
  double total = 0.0;
  double surrogate = 0.0;   // mean L_clip
  double value_loss = 0.0;  // mean (V - R)^2
  double entropy = 0.0;     // mean H
  double clip_fraction = 0.0;
  nn::Parameters actor_grad;
  nn::Parameters critic_grad;
};

/// total = -mean(L_clip) + c1 * mean(L_vf) - c2 * mean(H) over the given
/// buffer indices, with analytic gradients for both networks. Throws
/// NumericError with the component values if anything is non-finite.
LossResult ppo_loss(const RolloutBuffer& buffer, const std::vector<std::size_t>& indices, const Networks& nets,
                    const PPOConfig& config);

struct UpdateStats {
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  int minibatches = 0;
};

struct Optimizers {
  nn::AdamState actor;
  nn::AdamState critic;
};

Optimizers make_optimizers(const Networks& nets, const PPOConfig& config);

/// K_epochs passes over shuffled minibatches; each minibatch gradient is
/// clipped elementwise before its Adam step. Stats average over minibatches.
UpdateStats update(const RolloutBuffer& buffer, Networks& nets, Optimizers& opt, const PPOConfig& config,
                   std::mt19937_64& rng);

struct TrainLogRow {
  int update = 0;
  long episodes = 0;
  double mean_ep_reward = 0.0;
  double surrogate_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double wallclock_s = 0.0;
};

struct TrainResult {
  Networks nets;
  std::vector<TrainLogRow> log;
  std::vector<double> episode_returns;  // every finished training episode, in order
};

struct TrainOptions {
  /// wallclock_s reports real elapsed seconds instead of simulated mission
  /// seconds. Off by default so logs are reproducible byte for byte.
  bool real_wallclock = false;
  /// Called after every update (e.g. progress output).
  std::function<void(const TrainLogRow&)> on_update;
};

using EnvFactory = std::function<env::Environment()>;

TrainResult train(const EnvFactory& make_env, const PPOConfig& config, const TrainOptions& options = {});

/// update,episodes,mean_ep_reward,surrogate_loss,value_loss,entropy,clip_fraction,wallclock_s
std::string training_log_csv(const std::vector<TrainLogRow>& log);

/// Masked logits -> action: argmax when deterministic, else a sample.
int act(const Networks& nets, const Observation& obs, const ActionMask& mask, bool deterministic,
        std::mt19937_64& rng);

}  // namespace bridge::ppo
