#include <cmath>
#include <numeric>
#include <random>

#include "bridge/detect/detectors.hpp"
#include "bridge/error.hpp"
#include "bridge/hash.hpp"
#include "bridge/ppo/ppo.hpp"
#include "doctest.h"

using namespace bridge;
using namespace bridge::ppo;

namespace {

PPOConfig small_config() {
  PPOConfig c;
  c.hidden = {8};
  c.rollout_length = 64;
  c.minibatch_size = 16;
  c.buffer_capacity = 64;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  c.seed = 7;
  return c;
}

env::Environment oracle_env(int cars = 2) {
  env::ScenarioConfig sc;
  sc.n_cars = cars;
  sc.max_steps = 60;
  detect::ScannerOptions so;
  so.kind = env::DetectorKind::Oracle;
  return env::Environment(sc, detect::make_scanner(so));
}

Observation random_obs(std::mt19937_64& rng) {
  Observation o;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : o) v = u(rng);
  return o;
}

// Buffer of hand-made transitions with the given rewards; the last one ends the episode.
RolloutBuffer chain(const std::vector<double>& rewards) {
  RolloutBuffer b;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Transition t;
    t.reward = rewards[i];
    t.mask = {true, true, true, true, true};
    t.done = i + 1 == rewards.size();
    b.transitions.push_back(t);
  }
  return b;
}

double critic_value(const Networks& n, const Observation& o) {
  return nn::forward(n.critic_spec, n.critic, nn::MatrixX<double>(Eigen::Map<const nn::VectorX<double>>(o.data(), o.size())))(0, 0);
}

}  // namespace

TEST_CASE("discounted returns over an episode") {
  const Networks nets = build_networks(small_config());
  RolloutBuffer b = chain({1, 1, 1});
  compute_returns_advantages(b, nets, 0.99, false);
  CHECK(b.returns[0] == doctest::Approx(2.9701).epsilon(1e-12));
  CHECK(b.returns[1] == doctest::Approx(1.99).epsilon(1e-12));
  CHECK(b.returns[2] == doctest::Approx(1.0).epsilon(1e-12));

  // Episode boundary inside the buffer: returns do not leak across it.
  RolloutBuffer two = chain({1, 2});
  two.transitions[0].done = true;
  compute_returns_advantages(two, nets, 0.5, false);
  CHECK(two.returns[0] == 1.0);
  CHECK(two.returns[1] == 2.0);

  RolloutBuffer zero = chain({3, -1, 4});
  compute_returns_advantages(zero, nets, 0.0, false);
  CHECK(zero.returns == std::vector<double>{3, -1, 4});
}

TEST_CASE("value equal to return gives zero advantage") {
  const Networks nets = build_networks(small_config());
  RolloutBuffer b = chain({1, 1, 1});
  const std::vector<double> values = {2.9701, 1.99, 1.0};
  for (std::size_t i = 0; i < 3; ++i) b.transitions[i].value = values[i];
  compute_returns_advantages(b, nets, 0.99, false);
  for (double a : b.raw_advantages) CHECK(std::abs(a) < 1e-12);
}

TEST_CASE("truncated rollout bootstraps from the critic") {
  const Networks nets = build_networks(small_config());
  std::mt19937_64 rng(3);
  RolloutBuffer b = chain({1, 2});
  b.transitions[1].done = false;
  b.transitions[1].next_obs = random_obs(rng);
  const double v = critic_value(nets, b.transitions[1].next_obs);
  compute_returns_advantages(b, nets, 0.9, false);
  CHECK(b.returns[1] == doctest::Approx(2 + 0.9 * v).epsilon(1e-12));
  CHECK(b.returns[0] == doctest::Approx(1 + 0.9 * (2 + 0.9 * v)).epsilon(1e-12));
  RolloutBuffer empty;
  CHECK_THROWS_AS(compute_returns_advantages(empty, nets, 0.9), StateError);
}

TEST_CASE("advantage normalisation") {
  const Networks nets = build_networks(small_config());
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(3.0, 5.0);
  std::vector<double> rewards(500);
  for (double& r : rewards) r = n(rng);
  RolloutBuffer b = chain(rewards);
  for (auto& t : b.transitions) t.value = n(rng);
  compute_returns_advantages(b, nets, 0.9, true);
  const double mean = std::accumulate(b.advantages.begin(), b.advantages.end(), 0.0) / 500.0;
  double var = 0;
  for (double a : b.advantages) var += (a - mean) * (a - mean);
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var / 500.0 == doctest::Approx(1.0).epsilon(1e-6));
  for (std::size_t i = 0; i < 500; ++i)
    CHECK(b.advantages[i] == doctest::Approx((b.raw_advantages[i] - b.advantage_mean) / b.advantage_std));
}

TEST_CASE("clipped surrogate") {
  CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_surrogate(0.5, 1.0, 0.2) == doctest::Approx(0.5));
  CHECK(clipped_surrogate(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_surrogate(1.1, 2.0, 0.2) == doctest::Approx(2.2));
  CHECK(clipped_surrogate(1.0, 0.0, 0.2) == 0.0);
}

TEST_CASE("masked softmax and sampling") {
  const double logits[5] = {0, 0, 0, 0, 0};
  const auto p = masked_softmax(logits, {true, true, true, true, true});
  for (double v : p) CHECK(v == doctest::Approx(0.2));
  const auto q = masked_softmax(logits, {true, true, true, true, false});
  CHECK(q[4] == 0.0);
  CHECK(q[0] == doctest::Approx(0.25));
  CHECK_THROWS_AS(masked_softmax(logits, {false, false, false, false, false}), NumericError);
  const double big[5] = {1000, 999, -1000, 0, 1e300};
  const auto r = masked_softmax(big, {true, true, true, true, false});
  CHECK(r[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

  // Uniform categorical: chi-square with 4 degrees of freedom, p = 0.001 critical value 18.47.
  std::mt19937_64 rng(5);
  std::array<int, 5> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[std::size_t(sample_action(p, rng))];
  double chi2 = 0;
  for (int c : counts) chi2 += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
  CHECK(chi2 < 18.47);
  for (int i = 0; i < 10000; ++i) CHECK_FALSE(sample_action(q, rng) == 4);
}

TEST_CASE("loss gradients match finite differences") {
  PPOConfig config = small_config();
  config.entropy_coef = 0.05;
  config.clip = 0.2;
  Networks nets = build_networks(config);
  std::mt19937_64 rng(21);
  RolloutBuffer b;
  const std::array<ActionMask, 4> masks = {{{true, true, true, true, true},
                                            {true, false, true, true, false},
                                            {false, true, true, false, true},
                                            {true, true, false, true, false}}};
  const std::array<int, 4> actions = {4, 2, 1, 3};
  // Offsets put the ratios well inside, above and below the clip band so the
  // difference quotients stay on one smooth piece.
  const std::array<double, 4> offsets = {0.05, -0.6, 0.5, 0.0};
  const std::array<double, 4> adv = {1.3, -0.7, 0.9, -1.1};
  for (int i = 0; i < 4; ++i) {
    Transition t;
    t.obs = random_obs(rng);
    t.mask = masks[std::size_t(i)];
    t.action = actions[std::size_t(i)];
    const nn::MatrixX<double> z = nn::forward(nets.actor_spec, nets.actor,
        nn::MatrixX<double>(Eigen::Map<const nn::VectorX<double>>(t.obs.data(), t.obs.size())));
    t.log_prob = std::log(masked_softmax(z.data(), t.mask)[std::size_t(t.action)]) + offsets[std::size_t(i)];
    b.transitions.push_back(t);
    b.returns.push_back(0.3 * i - 0.5);
    b.advantages.push_back(adv[std::size_t(i)]);
  }
  b.raw_advantages = b.advantages;
  b.prepared = true;
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const LossResult base = ppo_loss(b, idx, nets, config);
  CHECK(base.clip_fraction == doctest::Approx(0.5));

  const double h = 1e-6;
  double worst = 0;
  auto probe = [&](nn::Parameters& params, const nn::Parameters& grad) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      auto check = [&](auto& block, const auto& g) {
        for (Eigen::Index j = 0; j < block.size(); ++j) {
          const double saved = block.data()[j];
          block.data()[j] = saved + h;
          const double up = ppo_loss(b, idx, nets, config).total;
          block.data()[j] = saved - h;
          const double down = ppo_loss(b, idx, nets, config).total;
          block.data()[j] = saved;
          const double numeric = (up - down) / (2 * h);
          const double a = g.data()[j];
          worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
        }
      };
      check(params.layers[l].weight, grad.layers[l].weight);
      check(params.layers[l].bias, grad.layers[l].bias);
    }
  };
  probe(nets.actor, base.actor_grad);
  probe(nets.critic, base.critic_grad);
  CHECK(worst < 1e-5);
}

TEST_CASE("clip fraction counts ratios outside the band") {
  PPOConfig config = small_config();
  Networks nets = build_networks(config);
  env::Environment e = oracle_env();
  Collector col(e, 3);
  RolloutBuffer b = collect_rollout(col, nets, 64, 64);
  compute_returns_advantages(b, nets, config.gamma);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& t : b.transitions) t.log_prob += jitter(rng);
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const LossResult r = ppo_loss(b, idx, nets, config);
  int outside = 0;
  for (const auto& t : b.transitions) {
    const nn::MatrixX<double> z = nn::forward(nets.actor_spec, nets.actor,
        nn::MatrixX<double>(Eigen::Map<const nn::VectorX<double>>(t.obs.data(), t.obs.size())));
    const double ratio = std::exp(std::log(masked_softmax(z.data(), t.mask)[std::size_t(t.action)]) - t.log_prob);
    outside += std::abs(ratio - 1.0) > config.clip;
  }
  CHECK(r.clip_fraction == doctest::Approx(outside / 64.0));
  CHECK(outside > 0);
}

TEST_CASE("rollout records behaviour statistics and respects masks") {
  PPOConfig config = small_config();
  const Networks nets = build_networks(config);
  env::Environment e = oracle_env(3);
  Collector col(e, 9);
  const RolloutBuffer b = collect_rollout(col, nets, 64, 64);
  REQUIRE(b.transitions.size() == 64);
  for (const auto& t : b.transitions) {
    CHECK(t.mask[std::size_t(t.action)]);
    CHECK(t.log_prob <= 0.0);
    if (t.action == int(env::Action::Pause)) CHECK(t.traffic == 1);
  }
  CHECK(b.episode_returns.size() >= 1);  // max_steps 60 forces at least one reset
  CHECK_THROWS_AS(collect_rollout(col, nets, 65, 64), ConfigError);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  PPOConfig config = small_config();
  config.learning_rate = 0.0;
  Networks nets = build_networks(config);
  const Networks before = nets;
  env::Environment e = oracle_env();
  Collector col(e, 1);
  RolloutBuffer b = collect_rollout(col, nets, 64, 64);
  compute_returns_advantages(b, nets, config.gamma);
  Optimizers opt = make_optimizers(nets, config);
  std::mt19937_64 rng(2);
  const UpdateStats s = update(b, nets, opt, config, rng);
  CHECK(s.minibatches == 8);
  for (std::size_t l = 0; l < nets.actor.layers.size(); ++l) {
    CHECK((nets.actor.layers[l].weight.array() == before.actor.layers[l].weight.array()).all());
    CHECK((nets.actor.layers[l].bias.array() == before.actor.layers[l].bias.array()).all());
  }
  for (std::size_t l = 0; l < nets.critic.layers.size(); ++l)
    CHECK((nets.critic.layers[l].weight.array() == before.critic.layers[l].weight.array()).all());
}

TEST_CASE("an update on a batch moves the loss down") {
  PPOConfig config = small_config();
  config.learning_rate = 1e-3;
  Networks nets = build_networks(config);
  env::Environment e = oracle_env();
  Collector col(e, 4);
  RolloutBuffer b = collect_rollout(col, nets, 64, 64);
  compute_returns_advantages(b, nets, config.gamma);
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const double before = ppo_loss(b, idx, nets, config).total;
  Optimizers opt = make_optimizers(nets, config);
  std::mt19937_64 rng(2);
  update(b, nets, opt, config, rng);
  CHECK(ppo_loss(b, idx, nets, config).total < before);
}

TEST_CASE("training is deterministic for a seed") {
  PPOConfig config = small_config();
  config.max_updates = 3;
  const EnvFactory factory = [] { return oracle_env(); };
  const TrainResult a = train(factory, config);
  const TrainResult b = train(factory, config);
  REQUIRE(a.log.size() == 3);
  CHECK(training_log_csv(a.log) == training_log_csv(b.log));
  CHECK(a.episode_returns == b.episode_returns);
  for (std::size_t l = 0; l < a.nets.actor.layers.size(); ++l)
    CHECK((a.nets.actor.layers[l].weight.array() == b.nets.actor.layers[l].weight.array()).all());
  config.seed = 8;
  CHECK(training_log_csv(train(factory, config).log) != training_log_csv(a.log));
  CHECK(training_log_csv(a.log).rfind("update,episodes,mean_ep_reward,surrogate_loss,value_loss,entropy,clip_fraction,wallclock_s\n", 0) == 0);
}

TEST_CASE("episode budget stops training") {
  PPOConfig config = small_config();
  config.total_episodes = 2;
  const TrainResult r = train([] { return oracle_env(); }, config);
  CHECK(r.episode_returns.size() >= 2);
  CHECK(r.log.back().episodes == long(r.episode_returns.size()));
  // The update before the last had not yet reached the budget.
  if (r.log.size() > 1) CHECK(r.log[r.log.size() - 2].episodes < 2);
}

TEST_CASE("act picks legal actions") {
  const Networks nets = build_networks(small_config());
  std::mt19937_64 rng(1);
  const Observation o = random_obs(rng);
  const ActionMask m = {false, true, false, true, false};
  for (int i = 0; i < 100; ++i) CHECK(m[std::size_t(act(nets, o, m, false, rng))]);
  const int d = act(nets, o, m, true, rng);
  CHECK((d == 1 || d == 3));
  CHECK(act(nets, o, m, true, rng) == d);
}

TEST_CASE("config keys and validation") {
  KeyValues kv = {{"ppo.epochs", "3"}, {"ppo.hidden", "32,16"}, {"ppo.clip", "0.1"}, {"other", "x"}};
  const PPOConfig c = take_ppo(kv);
  CHECK(c.epochs == 3);
  CHECK(c.hidden == std::vector<nn::Index>{32, 16});
  CHECK(c.clip == 0.1);
  CHECK(kv.size() == 1);
  KeyValues round = to_key_values(c);
  CHECK(to_key_values(take_ppo(round)) == to_key_values(c));

  PPOConfig bad;
  bad.clip = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = {};
  bad.gamma = 1.5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = {};
  bad.minibatch_size = 5000;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = {};
  bad.rollout_length = 4000;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  KeyValues junk = {{"ppo.epochs", "two"}};
  CHECK_THROWS_AS(take_ppo(junk), ConfigError);
}
