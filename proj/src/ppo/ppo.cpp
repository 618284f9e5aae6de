#include "bridge/ppo/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "bridge/error.hpp"
#include "bridge/hash.hpp"
#include "bridge/io.hpp"

namespace bridge::ppo {

namespace {

constexpr int kA = env::kActionCount;
constexpr int kObs = env::kObservationSize;

nn::MatrixX<double> column(const Observation& obs) {
  return Eigen::Map<const nn::VectorX<double>>(obs.data(), kObs);
}

nn::MatrixX<double> gather_obs(const RolloutBuffer& b, const std::vector<std::size_t>& idx) {
  nn::MatrixX<double> x(kObs, Eigen::Index(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j)
    x.col(Eigen::Index(j)) = Eigen::Map<const nn::VectorX<double>>(b.transitions[idx[j]].obs.data(), kObs);
  return x;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

void validate(const PPOConfig& c) {
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(c.clip > 0.0 && c.clip < 1.0)) throw ConfigError("clip epsilon must lie in (0, 1)");
  for (double v : {c.learning_rate, c.value_coef, c.entropy_coef, c.grad_clip})
    if (!finite(v) || v < 0.0) throw ConfigError("PPO coefficients must be finite and non-negative");
  if (!(c.grad_clip > 0.0)) throw ConfigError("gradient clip bound must be positive");
  if (c.rollout_length < 1 || c.minibatch_size < 1 || c.epochs < 1) throw ConfigError("PPO sizes must be >= 1");
  if (c.update_interval < 0) throw ConfigError("update interval must be >= 0");
  const int steps = c.steps_per_update();
  if (c.minibatch_size > steps) throw ConfigError("minibatch size exceeds the rollout length");
  if (steps > c.buffer_capacity) throw ConfigError("rollout length exceeds the buffer capacity");
  if (c.total_episodes < 1) throw ConfigError("total episodes must be >= 1");
  if (c.max_updates < 0) throw ConfigError("max updates must be >= 0");
  if (c.hidden.empty()) throw ConfigError("actor/critic need at least one hidden layer");
  for (auto h : c.hidden)
    if (h < 1) throw ConfigError("hidden sizes must be >= 1");
}

PPOConfig take_ppo(KeyValues& kv, PPOConfig c) {
  auto take = [&kv](const char* key, auto&& apply) {
    if (auto it = kv.find(key); it != kv.end()) {
      apply(key, it->second);
      kv.erase(it);
    }
  };
  auto as_int = [](std::string_view k, const std::string& v) { return int(parse_int(k, v)); };
  take("ppo.rollout_length", [&](auto k, auto& v) { c.rollout_length = as_int(k, v); });
  take("ppo.minibatch_size", [&](auto k, auto& v) { c.minibatch_size = as_int(k, v); });
  take("ppo.epochs", [&](auto k, auto& v) { c.epochs = as_int(k, v); });
  take("ppo.learning_rate", [&](auto k, auto& v) { c.learning_rate = parse_double(k, v); });
  take("ppo.gamma", [&](auto k, auto& v) { c.gamma = parse_double(k, v); });
  take("ppo.clip", [&](auto k, auto& v) { c.clip = parse_double(k, v); });
  take("ppo.value_coef", [&](auto k, auto& v) { c.value_coef = parse_double(k, v); });
  take("ppo.entropy_coef", [&](auto k, auto& v) { c.entropy_coef = parse_double(k, v); });
  take("ppo.grad_clip", [&](auto k, auto& v) { c.grad_clip = parse_double(k, v); });
  take("ppo.update_interval", [&](auto k, auto& v) { c.update_interval = as_int(k, v); });
  take("ppo.max_updates", [&](auto k, auto& v) { c.max_updates = as_int(k, v); });
  take("ppo.buffer_capacity", [&](auto k, auto& v) { c.buffer_capacity = as_int(k, v); });
  take("ppo.normalize_advantages", [&](auto k, auto& v) { c.normalize_advantages = parse_bool(k, v); });
  take("ppo.hidden", [&](auto k, auto& v) {
    c.hidden.clear();
    std::string_view rest = v;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      c.hidden.push_back(nn::Index(parse_int(k, rest.substr(0, comma))));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  });
  // The episode budget is a harness key ("episodes"); accept the long form too.
  take("ppo.total_episodes", [&](auto k, auto& v) { c.total_episodes = as_int(k, v); });
  validate(c);
  return c;
}

KeyValues to_key_values(const PPOConfig& c) {
  std::string hidden;
  for (std::size_t i = 0; i < c.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(c.hidden[i]);
  return {
      {"ppo.rollout_length", std::to_string(c.rollout_length)},
      {"ppo.minibatch_size", std::to_string(c.minibatch_size)},
      {"ppo.epochs", std::to_string(c.epochs)},
      {"ppo.learning_rate", format_number(c.learning_rate)},
      {"ppo.gamma", format_number(c.gamma)},
      {"ppo.clip", format_number(c.clip)},
      {"ppo.value_coef", format_number(c.value_coef)},
      {"ppo.entropy_coef", format_number(c.entropy_coef)},
      {"ppo.grad_clip", format_number(c.grad_clip)},
      {"ppo.update_interval", std::to_string(c.update_interval)},
      {"ppo.max_updates", std::to_string(c.max_updates)},
      {"ppo.buffer_capacity", std::to_string(c.buffer_capacity)},
      {"ppo.normalize_advantages", c.normalize_advantages ? "true" : "false"},
      {"ppo.hidden", hidden},
      {"ppo.total_episodes", std::to_string(c.total_episodes)},
  };
}

Networks build_networks(const PPOConfig& config) {
  validate(config);
  Networks n;
  n.actor_spec = nn::mlp(kObs, config.hidden, kA);
  n.critic_spec = nn::mlp(kObs, config.hidden, 1);
  n.actor = nn::init_params(n.actor_spec, derive_seed(config.seed, {0xac}));
  n.critic = nn::init_params(n.critic_spec, derive_seed(config.seed, {0xc1}));
  return n;
}

std::array<double, kA> masked_softmax(const double* logits, const ActionMask& mask) {
  std::array<double, kA> p{};
  double top = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < kA; ++a)
    if (mask[std::size_t(a)]) top = std::max(top, logits[a]);
  if (!std::isfinite(top)) throw NumericError("masked softmax: no legal action or non-finite logits");
  double sum = 0.0;
  for (int a = 0; a < kA; ++a)
    if (mask[std::size_t(a)]) sum += p[std::size_t(a)] = std::exp(logits[a] - top);
  for (double& v : p) v /= sum;
  return p;
}

int sample_action(const std::array<double, kA>& probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  int last = 0;
  for (int a = 0; a < kA; ++a) {
    if (probs[std::size_t(a)] <= 0.0) continue;
    last = a;
    acc += probs[std::size_t(a)];
    if (u < acc) return a;
  }
  return last;  // u landed in the rounding gap above the final sum
}

Collector::Collector(env::Environment& e, std::uint64_t s) : env(&e), seed(s), rng(derive_seed(s, {0x5a})) {
  start_episode();
}

void Collector::start_episode() {
  env->reset(derive_seed(seed, {0xe9, episodes_started}));
  ++episodes_started;
  episode_return = 0.0;
}

RolloutBuffer collect_rollout(Collector& col, const Networks& nets, int steps, std::size_t capacity) {
  if (steps < 1 || std::size_t(steps) > capacity) throw ConfigError("rollout length must lie in [1, capacity]");
  RolloutBuffer buf;
  buf.capacity = capacity;
  buf.transitions.reserve(std::size_t(steps));
  env::Environment& e = *col.env;
  for (int t = 0; t < steps; ++t) {
    Transition tr;
    tr.obs = e.observe();
    tr.mask = e.mask();
    tr.t_pause = e.state().t_pause;
    tr.traffic = e.state().traffic;
    const nn::MatrixX<double> x = column(tr.obs);
    const nn::MatrixX<double> logits = nn::forward(nets.actor_spec, nets.actor, x);
    const auto probs = masked_softmax(logits.data(), tr.mask);
    tr.action = sample_action(probs, col.rng);
    tr.log_prob = std::log(probs[std::size_t(tr.action)]);
    tr.value = nn::forward(nets.critic_spec, nets.critic, x)(0, 0);
    const double before = e.state().sim_seconds;
    const env::StepOutcome out = e.step(env::Action(tr.action));
    buf.sim_seconds += out.state.sim_seconds - before;
    tr.reward = out.reward.total();
    tr.done = out.done;
    tr.next_obs = e.observe();
    col.episode_return += tr.reward;
    buf.transitions.push_back(tr);
    if (out.done) {
      buf.episode_returns.push_back(col.episode_return);
      col.start_episode();
    }
  }
  return buf;
}

void compute_returns_advantages(RolloutBuffer& b, const Networks& nets, double gamma, bool normalize) {
  const std::size_t n = b.transitions.size();
  if (n == 0) throw StateError("cannot prepare an empty rollout buffer");
  b.returns.assign(n, 0.0);
  b.raw_advantages.assign(n, 0.0);
  double next = 0.0;
  if (!b.transitions.back().done)
    next = nn::forward(nets.critic_spec, nets.critic, column(b.transitions.back().next_obs))(0, 0);
  for (std::size_t i = n; i-- > 0;) {
    const Transition& t = b.transitions[i];
    if (t.done) next = 0.0;
    next = t.reward + gamma * next;
    b.returns[i] = next;
    b.raw_advantages[i] = next - t.value;
  }
  b.advantages = b.raw_advantages;
  b.advantage_mean = 0.0;
  b.advantage_std = 1.0;
  if (normalize) {
    double mean = 0.0;
    for (double a : b.raw_advantages) mean += a;
    mean /= double(n);
    double var = 0.0;
    for (double a : b.raw_advantages) var += (a - mean) * (a - mean);
    var /= double(n);
    const double std_dev = std::sqrt(var) + 1e-8;
    for (double& a : b.advantages) a = (a - mean) / std_dev;
    b.advantage_mean = mean;
    b.advantage_std = std_dev;
  }
  b.prepared = true;
}

double clipped_surrogate(double ratio, double advantage, double epsilon) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage);
}

LossResult ppo_loss(const RolloutBuffer& b, const std::vector<std::size_t>& idx, const Networks& nets,
                    const PPOConfig& config) {
  if (!b.prepared) throw StateError("ppo_loss needs a buffer with returns and advantages");
  if (idx.empty()) throw StateError("ppo_loss needs a non-empty minibatch");
  const auto N = Eigen::Index(idx.size());
  const double inv_n = 1.0 / double(N);
  const nn::MatrixX<double> x = gather_obs(b, idx);

  nn::ForwardCache<double> actor_cache, critic_cache;
  const nn::MatrixX<double> logits = nn::forward(nets.actor_spec, nets.actor, x, &actor_cache);
  const nn::MatrixX<double> values = nn::forward(nets.critic_spec, nets.critic, x, &critic_cache);

  LossResult r;
  nn::MatrixX<double> d_logits = nn::MatrixX<double>::Zero(kA, N);
  nn::MatrixX<double> d_values(1, N);
  double clipped = 0.0;
  for (Eigen::Index j = 0; j < N; ++j) {
    const std::size_t i = idx[std::size_t(j)];
    const Transition& t = b.transitions[i];
    const auto p = masked_softmax(logits.col(j).data(), t.mask);
    const double A = b.advantages[i];
    const double ratio = std::exp(std::log(p[std::size_t(t.action)]) - t.log_prob);
    const double surrogate = clipped_surrogate(ratio, A, config.clip);
    // d L_clip / d ratio: A while the unclipped term is the minimum, else 0.
    const double d_ratio = ratio * A <= std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip) * A ? A : 0.0;
    if (std::abs(ratio - 1.0) > config.clip) clipped += 1.0;

    double H = 0.0;
    for (int a = 0; a < kA; ++a)
      if (p[std::size_t(a)] > 0.0) H -= p[std::size_t(a)] * std::log(p[std::size_t(a)]);
    for (int a = 0; a < kA; ++a) {
      const double pa = p[std::size_t(a)];
      if (!t.mask[std::size_t(a)]) continue;
      const double d_logp = (a == t.action ? 1.0 : 0.0) - pa;  // d log p_action / d z_a
      const double d_entropy = pa > 0.0 ? -pa * (std::log(pa) + H) : 0.0;
      d_logits(a, j) = (-d_ratio * ratio * d_logp - config.entropy_coef * d_entropy) * inv_n;
    }
    const double v = values(0, j);
    d_values(0, j) = config.value_coef * 2.0 * (v - b.returns[i]) * inv_n;

    r.surrogate += surrogate;
    r.value_loss += (v - b.returns[i]) * (v - b.returns[i]);
    r.entropy += H;
  }
  r.surrogate *= inv_n;
  r.value_loss *= inv_n;
  r.entropy *= inv_n;
  r.clip_fraction = clipped * inv_n;
  r.total = -r.surrogate + config.value_coef * r.value_loss - config.entropy_coef * r.entropy;
  if (!finite(r.total) || !finite(r.surrogate) || !finite(r.value_loss) || !finite(r.entropy))
    throw NumericError("ppo_loss is not finite: surrogate=" + format_number(r.surrogate) +
                       " value_loss=" + format_number(r.value_loss) + " entropy=" + format_number(r.entropy) +
                       " minibatch=" + std::to_string(N));
  r.actor_grad = nn::backward(nets.actor_spec, nets.actor, actor_cache, d_logits, false).params;
  r.critic_grad = nn::backward(nets.critic_spec, nets.critic, critic_cache, d_values, false).params;
  return r;
}

Optimizers make_optimizers(const Networks& nets, const PPOConfig& config) {
  return {nn::make_adam(nets.actor, config.learning_rate), nn::make_adam(nets.critic, config.learning_rate)};
}

UpdateStats update(const RolloutBuffer& buffer, Networks& nets, Optimizers& opt, const PPOConfig& config,
                   std::mt19937_64& rng) {
  if (!buffer.prepared) throw StateError("update needs a prepared buffer");
  // theta_old is implicit: every transition carries its behaviour log-prob.
  std::vector<std::size_t> order(buffer.transitions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  UpdateStats s;
  const std::size_t mb = std::size_t(config.minibatch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(start),
                                         order.begin() + std::ptrdiff_t(std::min(order.size(), start + mb)));
      LossResult loss = ppo_loss(buffer, idx, nets, config);
      nn::clip_elementwise(loss.actor_grad, config.grad_clip);
      nn::clip_elementwise(loss.critic_grad, config.grad_clip);
      nn::adam_step(nets.actor, loss.actor_grad, opt.actor);
      nn::adam_step(nets.critic, loss.critic_grad, opt.critic);
      s.surrogate += loss.surrogate;
      s.value_loss += loss.value_loss;
      s.entropy += loss.entropy;
      s.clip_fraction += loss.clip_fraction;
      ++s.minibatches;
    }
  }
  if (s.minibatches > 0) {
    s.surrogate /= s.minibatches;
    s.value_loss /= s.minibatches;
    s.entropy /= s.minibatches;
    s.clip_fraction /= s.minibatches;
  }
  return s;
}

TrainResult train(const EnvFactory& make_env, const PPOConfig& config, const TrainOptions& options) {
  validate(config);
  TrainResult result;
  result.nets = build_networks(config);
  Optimizers opt = make_optimizers(result.nets, config);
  env::Environment env = make_env();
  Collector collector(env, config.seed);
  std::mt19937_64 update_rng(derive_seed(config.seed, {0x0b}));
  const auto start = std::chrono::steady_clock::now();
  double sim_seconds = 0.0;
  double last_mean = 0.0;

  for (int u = 1; long(result.episode_returns.size()) < config.total_episodes; ++u) {
    if (config.max_updates > 0 && u > config.max_updates) break;
    RolloutBuffer buf =
        collect_rollout(collector, result.nets, config.steps_per_update(), std::size_t(config.buffer_capacity));
    compute_returns_advantages(buf, result.nets, config.gamma, config.normalize_advantages);
    const UpdateStats s = update(buf, result.nets, opt, config, update_rng);
    sim_seconds += buf.sim_seconds;
    if (!buf.episode_returns.empty()) {
      last_mean = std::accumulate(buf.episode_returns.begin(), buf.episode_returns.end(), 0.0) /
                  double(buf.episode_returns.size());
      result.episode_returns.insert(result.episode_returns.end(), buf.episode_returns.begin(),
                                    buf.episode_returns.end());
    }
    TrainLogRow row;
    row.update = u;
    row.episodes = long(result.episode_returns.size());
    row.mean_ep_reward = last_mean;
    row.surrogate_loss = -s.surrogate;
    row.value_loss = s.value_loss;
    row.entropy = s.entropy;
    row.clip_fraction = s.clip_fraction;
    row.wallclock_s = options.real_wallclock
                          ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()
                          : sim_seconds;
    result.log.push_back(row);
    if (options.on_update) options.on_update(row);
  }
  return result;
}

std::string training_log_csv(const std::vector<TrainLogRow>& log) {
  std::string out = "update,episodes,mean_ep_reward,surrogate_loss,value_loss,entropy,clip_fraction,wallclock_s\n";
  for (const auto& r : log)
    out += std::to_string(r.update) + "," + std::to_string(r.episodes) + "," + format_number(r.mean_ep_reward) +
           "," + format_number(r.surrogate_loss) + "," + format_number(r.value_loss) + "," +
           format_number(r.entropy) + "," + format_number(r.clip_fraction) + "," + format_number(r.wallclock_s) +
           "\n";
  return out;
}

int act(const Networks& nets, const Observation& obs, const ActionMask& mask, bool deterministic,
        std::mt19937_64& rng) {
  const nn::MatrixX<double> logits = nn::forward(nets.actor_spec, nets.actor, column(obs));
  const auto p = masked_softmax(logits.data(), mask);
  if (!deterministic) return sample_action(p, rng);
  int best = -1;
  for (int a = 0; a < kA; ++a)
    if (mask[std::size_t(a)] && (best < 0 || p[std::size_t(a)] > p[std::size_t(best)])) best = a;
  return best;
}

}  // namespace bridge::ppo
