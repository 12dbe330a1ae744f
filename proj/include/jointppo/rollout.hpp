#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "jointppo/adam.hpp"
#include "jointppo/envs.hpp"
#include "jointppo/losses.hpp"
#include "jointppo/net.hpp"
#include "jointppo/rng.hpp"

namespace jointppo {

enum class LrScheduleKind { kConstant, kLinear, kExponential };

inline const char* to_string(LrScheduleKind k) {
  switch (k) {
    case LrScheduleKind::kConstant: return "constant";
    case LrScheduleKind::kLinear: return "linear";
    default: return "exponential";
  }
}

// Learning-rate schedule over consumed environment steps. Linear reaches
// zero at total_steps; exponential decays by decay_rate per 1% of
// total_steps. Both are non-increasing with lr(0) == initial.
struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::kLinear;
  double initial = 5e-4;
  long long total_steps = 1;
  double decay_rate = 0.99;

  double at(long long step) const {
    const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    switch (kind) {
      case LrScheduleKind::kConstant: return initial;
      case LrScheduleKind::kLinear: return initial * (1.0 - frac);
      default: return initial * std::pow(decay_rate, frac * 100.0);
    }
  }
};

enum class AgentOrderMode { kDefault, kInverse, kRandomPerRun, kFixed };

inline const char* to_string(AgentOrderMode m) {
  switch (m) {
    case AgentOrderMode::kDefault: return "default";
    case AgentOrderMode::kInverse: return "inverse";
    case AgentOrderMode::kRandomPerRun: return "random_per_run";
    default: return "fixed";
  }
}

// One stored environment transition under the behavior policy.
struct TransitionRecord {
  Tensor obs;
  BoolMat avail;
  std::vector<int> actions;
  std::vector<double> per_agent_log_probs;
  double joint_log_prob = 0.0;
  double value_pred = 0.0;  // raw-space critic prediction
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
  double bootstrap_value = 0.0;  // raw value of the successor state; valid when truncated
};

// On-policy store, cleared after every training phase. Episodes are
// contiguous; a collection phase may cut the last episode, in which case a
// final bootstrap value closes it for advantage estimation.
class RolloutBuffer {
 public:
  void add(TransitionRecord rec) { records_.push_back(std::move(rec)); }
  void set_final_bootstrap(double v) {
    final_bootstrap_ = v;
    has_final_bootstrap_ = true;
  }

  size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<TransitionRecord>& records() const { return records_; }
  std::vector<TransitionRecord>& records() { return records_; }

  void clear() {
    records_.clear();
    has_final_bootstrap_ = false;
    final_bootstrap_ = 0.0;
  }

  // GAE over every contiguous episode segment in the buffer.
  std::vector<AdvantageRecord> compute_advantages(const GAEConfig& cfg) const {
    std::vector<AdvantageRecord> out;
    out.reserve(records_.size());
    size_t start = 0;
    while (start < records_.size()) {
      size_t end = start;
      while (end + 1 < records_.size() && !records_[end].terminal && !records_[end].truncated) ++end;
      const size_t len = end - start + 1;
      std::vector<double> rewards(len), values(len);
      std::vector<uint8_t> terms(len);
      for (size_t i = 0; i < len; ++i) {
        rewards[i] = records_[start + i].reward;
        values[i] = records_[start + i].value_pred;
        terms[i] = records_[start + i].terminal ? 1 : 0;
      }
      double bootstrap = 0.0;
      const TransitionRecord& last = records_[end];
      if (last.truncated) bootstrap = last.bootstrap_value;
      else if (!last.terminal && has_final_bootstrap_) bootstrap = final_bootstrap_;
      auto seg = compute_gae(rewards, values, terms, bootstrap, cfg);
      out.insert(out.end(), seg.begin(), seg.end());
      start = end + 1;
    }
    return out;
  }

 private:
  std::vector<TransitionRecord> records_;
  double final_bootstrap_ = 0.0;
  bool has_final_bootstrap_ = false;
};

struct TrainConfig {
  long long total_env_steps = 10000;
  int steps_per_collection = 256;
  int batch_size = 256;  // transitions consumed per epoch
  int ppo_epochs = 10;
  int minibatch_count = 1;
  double lr = 5e-4;
  LrScheduleKind lr_schedule = LrScheduleKind::kLinear;
  double exp_decay_rate = 0.99;
  bool value_norm = true;
  GAEConfig gae;
  LossConfig loss;
  AgentOrderMode order_mode = AgentOrderMode::kDefault;
  std::vector<int> fixed_order;
  uint64_t seed = 1;
  long long eval_interval = 1000;
  int eval_episodes = 32;

  // Collects every problem into one ConfigError.
  void validate(int n_agents) const {
    std::vector<std::string> errs;
    if (total_env_steps < 1) errs.push_back("total_env_steps must be >= 1");
    if (steps_per_collection < 1) errs.push_back("steps_per_collection must be >= 1");
    if (batch_size < 1) errs.push_back("batch_size must be >= 1");
    if (batch_size > steps_per_collection)
      errs.push_back("batch_size " + std::to_string(batch_size) +
                     " exceeds steps_per_collection " + std::to_string(steps_per_collection));
    if (ppo_epochs < 0) errs.push_back("ppo_epochs must be >= 0");
    if (minibatch_count < 1) errs.push_back("minibatch_count must be >= 1");
    if (minibatch_count > batch_size)
      errs.push_back("minibatch_count " + std::to_string(minibatch_count) + " exceeds batch_size");
    if (lr <= 0.0) errs.push_back("lr must be > 0");
    if (exp_decay_rate <= 0.0 || exp_decay_rate > 1.0)
      errs.push_back("exp_decay_rate must be in (0,1]");
    if (eval_interval < 1) errs.push_back("eval_interval must be >= 1");
    if (eval_episodes < 1) errs.push_back("eval_episodes must be >= 1");
    if (order_mode == AgentOrderMode::kFixed) {
      if (static_cast<int>(fixed_order.size()) != n_agents)
        errs.push_back("fixed agent_order must list all " + std::to_string(n_agents) + " agents");
      else {
        std::vector<char> seen(static_cast<size_t>(n_agents), 0);
        for (int a : fixed_order)
          if (a < 0 || a >= n_agents || seen[static_cast<size_t>(a)]++)
            errs.push_back("fixed agent_order is not a permutation");
      }
    }
    try {
      gae.validate();
    } catch (const ConfigError& e) {
      errs.push_back(e.what());
    }
    try {
      loss.validate();
    } catch (const ConfigError& e) {
      errs.push_back(e.what());
    }
    if (!errs.empty()) {
      std::string joined;
      for (size_t i = 0; i < errs.size(); ++i) joined += (i ? "; " : "") + errs[i];
      throw ConfigError(joined);
    }
  }
};

struct EvalResult {
  double mean_return = 0.0;
  double success_rate = 0.0;
};

// One metrics-log row, written at every evaluation point.
struct MetricsRow {
  long long env_steps = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double critic_loss = 0.0;
  double policy_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 1.0;
  double lr = 0.0;
};

// Alternating interaction and training phases: collect transitions with the
// joint policy, estimate advantages, run clipped-PPO epochs over shuffled
// minibatches, repeat until the step budget is consumed. Deterministic given
// (config, seed): all randomness flows from fixed per-purpose streams.
class Trainer {
 public:
  Trainer(PolicyNet& net, Env& env, Env& eval_env, TrainConfig cfg)
      : net_(net),
        env_(env),
        eval_env_(eval_env),
        cfg_(std::move(cfg)),
        adam_(net.params()),
        vnorm_(cfg_.value_norm),
        reset_rng_(stream(1)),
        action_rng_(stream(2)),
        train_rng_(stream(3)) {
    cfg_.validate(net_.config().n_agents);
    const int n = net_.config().n_agents;
    order_.resize(static_cast<size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    switch (cfg_.order_mode) {
      case AgentOrderMode::kDefault: break;
      case AgentOrderMode::kInverse: std::reverse(order_.begin(), order_.end()); break;
      case AgentOrderMode::kRandomPerRun: {
        Rng r(stream(4));
        r.shuffle(order_);
        break;
      }
      case AgentOrderMode::kFixed: order_ = cfg_.fixed_order; break;
    }
    schedule_ = LrSchedule{cfg_.lr_schedule, cfg_.lr, cfg_.total_env_steps, cfg_.exp_decay_rate};
  }

  const std::vector<int>& order() const { return order_; }
  RolloutBuffer& buffer() { return buffer_; }
  ValueNormalizer& value_normalizer() { return vnorm_; }
  const LrSchedule& schedule() const { return schedule_; }

  // Stores `steps` transitions, auto-resetting episodes as they end. The
  // final unfinished episode (if any) is closed with a bootstrap value.
  void collect(int steps) {
    if (!buffer_.empty()) throw ContractError("collect: buffer not empty");
    for (int s = 0; s < steps; ++s) {
      if (!episode_active_) {
        auto [obs, avail] = env_.reset(reset_rng_.raw());
        cur_obs_ = std::move(obs);
        cur_avail_ = std::move(avail);
        episode_active_ = true;
      }
      PolicyOutput po = net_.generate(cur_obs_, order_, cur_avail_, action_rng_);
      StepResult sr;
      try {
        sr = env_.step(po.actions);
      } catch (const std::exception& e) {
        throw EnvError("step " + std::to_string(total_steps_ + s) + ": " + e.what());
      }
      TransitionRecord rec;
      rec.obs = cur_obs_;
      rec.avail = cur_avail_;
      rec.actions = po.actions;
      rec.per_agent_log_probs = po.per_agent_log_probs;
      rec.joint_log_prob = po.joint_log_prob;
      rec.value_pred = vnorm_.denormalize(po.value);
      rec.reward = sr.reward;
      rec.terminal = sr.terminal;
      rec.truncated = sr.truncated;
      if (sr.truncated) rec.bootstrap_value = vnorm_.denormalize(net_.state_value(sr.obs));
      buffer_.add(std::move(rec));
      if (sr.terminal || sr.truncated) {
        episode_active_ = false;
      } else {
        cur_obs_ = std::move(sr.obs);
        cur_avail_ = std::move(sr.avail);
      }
    }
    total_steps_ += steps;
    const TransitionRecord& last = buffer_.records().back();
    if (!last.terminal && !last.truncated)
      buffer_.set_final_bootstrap(vnorm_.denormalize(net_.state_value(cur_obs_)));
  }

  // PPO epochs over the collected buffer; clears it afterwards.
  LossDiagnostics train_phase() {
    if (buffer_.empty()) throw ContractError("train_phase: buffer empty");
    auto adv_records = buffer_.compute_advantages(cfg_.gae);
    const size_t N = buffer_.size();

    std::vector<double> targets(N), advantages(N);
    for (size_t i = 0; i < N; ++i) {
      targets[i] = adv_records[i].value_target;
      advantages[i] = adv_records[i].advantage;
    }
    vnorm_.update(targets);
    if (cfg_.loss.advantage_norm) normalize_advantages(advantages);

    const double lr = schedule_.at(total_steps_);
    last_lr_ = lr;
    LossDiagnostics total{};
    int updates = 0;

    std::vector<size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    const size_t use = std::min<size_t>(static_cast<size_t>(cfg_.batch_size), N);
    for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
      train_rng_.shuffle(idx);
      const size_t per = (use + static_cast<size_t>(cfg_.minibatch_count) - 1) /
                         static_cast<size_t>(cfg_.minibatch_count);
      for (size_t mb_start = 0; mb_start < use; mb_start += per) {
        const size_t mb_end = std::min(use, mb_start + per);
        LossDiagnostics d = update_minibatch({idx.begin() + static_cast<long>(mb_start),
                                              idx.begin() + static_cast<long>(mb_end)},
                                             advantages, targets, lr);
        total.mean_ratio += d.mean_ratio;
        total.clip_fraction += d.clip_fraction;
        total.critic_loss += d.critic_loss;
        total.policy_loss += d.policy_loss;
        total.entropy += d.entropy;
        ++updates;
      }
    }
    buffer_.clear();
    if (updates > 0) {
      total.mean_ratio /= updates;
      total.clip_fraction /= updates;
      total.critic_loss /= updates;
      total.policy_loss /= updates;
      total.entropy /= updates;
    } else {
      total.mean_ratio = 1.0;
    }
    last_diag_ = total;
    return total;
  }

  // Deterministic (argmax) evaluation episodes by default; stochastic
  // sampling on request. No buffer writes; fresh sub-seeded streams per call.
  EvalResult evaluate(int episodes, bool stochastic = false) {
    Rng rng(stream(100 + static_cast<uint64_t>(eval_count_++)));
    EvalResult res;
    for (int e = 0; e < episodes; ++e) {
      auto [obs, avail] = eval_env_.reset(rng.raw());
      double ret = 0.0;
      bool success = false;
      while (true) {
        PolicyOutput po = net_.generate(obs, order_, avail, rng, /*deterministic=*/!stochastic);
        StepResult sr = eval_env_.step(po.actions);
        ret += sr.reward;
        success = success || sr.success;
        if (sr.terminal || sr.truncated) break;
        obs = std::move(sr.obs);
        avail = std::move(sr.avail);
      }
      res.mean_return += ret;
      res.success_rate += success ? 1.0 : 0.0;
    }
    res.mean_return /= episodes;
    res.success_rate /= episodes;
    return res;
  }

  // Full training loop; one metrics row per evaluation point.
  std::vector<MetricsRow> run(const std::function<void(const MetricsRow&)>& on_eval = {}) {
    std::vector<MetricsRow> rows;
    auto emit = [&]() {
      EvalResult er = evaluate(cfg_.eval_episodes);
      MetricsRow row{total_steps_,        er.mean_return,        er.success_rate,
                     last_diag_.critic_loss, last_diag_.policy_loss, last_diag_.entropy,
                     last_diag_.clip_fraction, last_diag_.mean_ratio, schedule_.at(total_steps_)};
      rows.push_back(row);
      if (on_eval) on_eval(row);
    };
    emit();  // untrained baseline
    long long next_eval = cfg_.eval_interval;
    while (total_steps_ < cfg_.total_env_steps) {
      const long long remaining = cfg_.total_env_steps - total_steps_;
      const int T = static_cast<int>(std::min<long long>(cfg_.steps_per_collection, remaining));
      collect(T);
      train_phase();
      if (total_steps_ >= next_eval || total_steps_ >= cfg_.total_env_steps) {
        emit();
        while (next_eval <= total_steps_) next_eval += cfg_.eval_interval;
      }
    }
    return rows;
  }

  long long total_steps() const { return total_steps_; }

 private:
  PolicyNet& net_;
  Env& env_;
  Env& eval_env_;
  TrainConfig cfg_;
  Adam adam_;
  ValueNormalizer vnorm_;
  Rng reset_rng_;
  Rng action_rng_;
  Rng train_rng_;
  LrSchedule schedule_;
  RolloutBuffer buffer_;
  std::vector<int> order_;
  Tensor cur_obs_;
  BoolMat cur_avail_;
  bool episode_active_ = false;
  long long total_steps_ = 0;
  int eval_count_ = 0;
  double last_lr_ = 0.0;
  LossDiagnostics last_diag_{};

  uint64_t stream(uint64_t id) const { return splitmix64(cfg_.seed) ^ splitmix64(id * 0x9e3779b9ull + 17); }

  LossDiagnostics update_minibatch(std::vector<size_t> rows, const std::vector<double>& advantages,
                                   const std::vector<double>& targets, double lr) {
    const int n = net_.config().n_agents;
    const int B = static_cast<int>(rows.size());
    const auto& recs = buffer_.records();

    EvalBatch eb;
    eb.batch = B;
    eb.obs = Tensor(B * n, net_.config().obs_dim);
    eb.actions.resize(static_cast<size_t>(B) * n);
    eb.avail = BoolMat(B * n, net_.config().n_actions);
    Tensor old_lp(B, 1), adv(B, 1), tgt_norm(B, 1), old_v_norm(B, 1);
    for (int b = 0; b < B; ++b) {
      const TransitionRecord& r = recs[rows[static_cast<size_t>(b)]];
      for (int i = 0; i < n; ++i) {
        std::copy(r.obs.row(i), r.obs.row(i) + r.obs.cols, eb.obs.row(b * n + i));
        eb.actions[static_cast<size_t>(b) * n + i] = r.actions[static_cast<size_t>(i)];
        for (int a = 0; a < net_.config().n_actions; ++a)
          eb.avail.at(b * n + i, a) = r.avail.at(i, a);
      }
      old_lp.at(b, 0) = r.joint_log_prob;
      adv.at(b, 0) = advantages[rows[static_cast<size_t>(b)]];
      tgt_norm.at(b, 0) = vnorm_.normalize(targets[rows[static_cast<size_t>(b)]]);
      old_v_norm.at(b, 0) = vnorm_.normalize(r.value_pred);
    }

    Tape tape;
    EvalVals ev = net_.evaluate_actions(tape, eb, order_);
    Val c = critic_loss(tape, ev.value, old_v_norm, tgt_norm, cfg_.loss.clip_eps,
                        cfg_.loss.value_clip_mode);
    Val p = joint_ppo_loss(tape, ev.joint_log_prob, old_lp, adv, cfg_.loss.clip_eps);
    Val e = entropy_bonus(tape, ev.entropies);
    Val loss = total_loss(tape, c, p, e, cfg_.loss);

    net_.params().zero_grad();
    tape.backward(loss);
    adam_.step(net_.params(), lr);

    LossDiagnostics d;
    d.critic_loss = tape.value(c).scalar();
    d.policy_loss = tape.value(p).scalar();
    d.entropy = tape.value(e).scalar();
    const Tensor& new_lp = tape.value(ev.joint_log_prob);
    for (int b = 0; b < B; ++b) {
      const double ratio = std::exp(new_lp.at(b, 0) - old_lp.at(b, 0));
      d.mean_ratio += ratio;
      if (std::abs(ratio - 1.0) > cfg_.loss.clip_eps) d.clip_fraction += 1.0;
    }
    d.mean_ratio /= B;
    d.clip_fraction /= B;
    return d;
  }
};

}  // namespace jointppo
