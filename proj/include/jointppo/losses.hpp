#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "jointppo/net.hpp"
#include "jointppo/tape.hpp"
#include "jointppo/tensor.hpp"

namespace jointppo {

struct GAEConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  int horizon = 0;  // 0 = full telescoping to episode end

  void validate() const {
    std::string errs;
    if (gamma < 0.0 || gamma >= 1.0) errs += "gamma must be in [0,1); ";
    if (lambda < 0.0 || lambda > 1.0) errs += "gae_lambda must be in [0,1]; ";
    if (horizon < 0) errs += "gae_horizon must be >= 0; ";
    if (!errs.empty()) throw ConfigError(errs);
  }
};

struct AdvantageRecord {
  double advantage = 0.0;
  double value_target = 0.0;  // advantage + value prediction
  double td_error = 0.0;
};

// Generalized advantage estimation over one contiguous span of steps.
// `values` has one entry per step; `bootstrap_value` stands in for the
// post-final state when the span ends without a true terminal (truncation).
// A terminal flag anywhere resets the accumulation and zeroes the next-state
// value for that step's TD error.
inline std::vector<AdvantageRecord> compute_gae(std::span<const double> rewards,
                                                std::span<const double> values,
                                                std::span<const uint8_t> terminal_flags,
                                                double bootstrap_value, const GAEConfig& cfg) {
  const size_t T = rewards.size();
  if (values.size() != T || terminal_flags.size() != T)
    throw ContractError("compute_gae: rewards/values/terminals lengths differ (" +
                        std::to_string(T) + "/" + std::to_string(values.size()) + "/" +
                        std::to_string(terminal_flags.size()) + ")");
  std::vector<AdvantageRecord> out(T);
  if (T == 0) return out;

  // TD errors
  for (size_t t = 0; t < T; ++t) {
    const bool term = terminal_flags[t] != 0;
    const double next_v = term ? 0.0 : (t + 1 < T ? values[t + 1] : bootstrap_value);
    out[t].td_error = rewards[t] + cfg.gamma * next_v - values[t];
  }

  const double gl = cfg.gamma * cfg.lambda;
  if (cfg.horizon == 0) {
    // full-horizon backward recursion, restarted at terminals
    double acc = 0.0;
    for (size_t i = T; i-- > 0;) {
      if (terminal_flags[i] != 0) acc = 0.0;
      acc = out[i].td_error + gl * acc;
      out[i].advantage = acc;
    }
  } else {
    // windowed sum of at most horizon+1 TD errors, not crossing terminals
    for (size_t t = 0; t < T; ++t) {
      double acc = 0.0, w = 1.0;
      for (size_t l = 0; l <= static_cast<size_t>(cfg.horizon) && t + l < T; ++l) {
        acc += w * out[t + l].td_error;
        w *= gl;
        if (terminal_flags[t + l] != 0) break;
      }
      out[t].advantage = acc;
    }
  }
  for (size_t t = 0; t < T; ++t) out[t].value_target = out[t].advantage + values[t];
  return out;
}

enum class ValueClipMode { kPaperMin, kStandardMax };

inline const char* to_string(ValueClipMode m) {
  return m == ValueClipMode::kPaperMin ? "paper_min" : "standard_max";
}

struct LossConfig {
  double clip_eps = 0.1;
  double lambda1 = 5.0;   // policy loss weight
  double lambda2 = 0.01;  // entropy weight
  ValueClipMode value_clip_mode = ValueClipMode::kPaperMin;
  bool advantage_norm = true;
  Factorization factorization = Factorization::kConditional;

  void validate() const {
    std::string errs;
    if (clip_eps <= 0.0) errs += "clip_eps must be > 0; ";
    if (lambda1 < 0.0) errs += "lambda1 must be >= 0; ";
    if (lambda2 < 0.0) errs += "lambda2 must be >= 0; ";
    if (!errs.empty()) throw ConfigError(errs);
  }
};

// Clipped critic loss. kPaperMin takes the min of the unclipped and clipped
// squared errors (the trust-region form); kStandardMax takes the max (the
// common PPO value clip). Mean over the batch.
inline Val critic_loss(Tape& t, Val values_new, const Tensor& values_old,
                       const Tensor& value_targets, double clip_eps, ValueClipMode mode) {
  const Tensor& vn = t.value(values_new);
  check_same_shape(vn, values_old, "critic_loss");
  check_same_shape(vn, value_targets, "critic_loss");
  Val old_v = t.input(values_old);
  Val target = t.input(value_targets);
  Val err = t.sub(values_new, target);
  Val unclipped = t.mul(err, err);
  Val clipped_pred = t.add(old_v, t.clip(t.sub(values_new, old_v), -clip_eps, clip_eps));
  Val cerr = t.sub(clipped_pred, target);
  Val clipped = t.mul(cerr, cerr);
  Val combined = mode == ValueClipMode::kPaperMin ? t.minimum(unclipped, clipped)
                                                  : t.maximum(unclipped, clipped);
  return t.mean_all(combined);
}

// Clipped surrogate on the joint policy ratio. Ratios are formed in log
// space; |log ratio| > 20 aborts with diagnostics rather than producing a
// silently divergent update. Gradient flows only through log_probs_new.
inline Val joint_ppo_loss(Tape& t, Val log_probs_new, const Tensor& log_probs_old,
                          const Tensor& advantages, double clip_eps) {
  const Tensor& ln = t.value(log_probs_new);
  check_same_shape(ln, log_probs_old, "joint_ppo_loss");
  check_same_shape(ln, advantages, "joint_ppo_loss");
  for (size_t i = 0; i < ln.size(); ++i) {
    const double dl = ln.data[i] - log_probs_old.data[i];
    if (!std::isfinite(dl) || std::abs(dl) > 20.0)
      throw DivergenceError("policy ratio log " + std::to_string(dl) + " at sample " +
                            std::to_string(i) + " (new " + std::to_string(ln.data[i]) +
                            ", old " + std::to_string(log_probs_old.data[i]) + ")");
  }
  Val ratio = t.exp(t.sub(log_probs_new, t.input(log_probs_old)));
  Val adv = t.input(advantages);
  Val surr = t.mul(ratio, adv);
  Val surr_clipped = t.mul(t.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv);
  return t.neg(t.mean_all(t.minimum(surr, surr_clipped)));
}

// Mean over the batch of the summed per-agent conditional entropies.
inline Val entropy_bonus(Tape& t, Val per_agent_entropies) {
  return t.mean_all(t.sum_cols(per_agent_entropies));
}

// Total loss: critic + lambda1 * policy - lambda2 * entropy. The entropy
// bonus is subtracted so that minimizing the loss raises entropy.
inline Val total_loss(Tape& t, Val critic, Val policy, Val entropy, const LossConfig& cfg) {
  Val weighted = t.add(critic, t.scale(policy, cfg.lambda1));
  return t.add(weighted, t.scale(entropy, -cfg.lambda2));
}

// Normalizes advantages to zero mean / unit std over an update batch.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double inv = 1.0 / (std::sqrt(var) + 1e-8);
  for (double& a : adv) a = (a - mean) * inv;
}

// Running mean/variance of value targets. The critic trains against
// normalized targets; GAE consumes raw values, so predictions are mapped
// back with denormalize(). Update happens once per training phase.
class ValueNormalizer {
 public:
  explicit ValueNormalizer(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }

  void update(std::span<const double> targets) {
    if (!enabled_ || targets.empty()) return;
    for (double x : targets) {
      ++count_;
      const double d = x - mean_;
      mean_ += d / static_cast<double>(count_);
      m2_ += d * (x - mean_);
    }
  }

  double std_dev() const {
    if (count_ < 2) return 1.0;
    return std::sqrt(std::max(m2_ / static_cast<double>(count_), 1e-12));
  }
  double mean() const { return count_ == 0 ? 0.0 : mean_; }

  double normalize(double x) const { return enabled_ ? (x - mean()) / std_dev() : x; }
  double denormalize(double z) const { return enabled_ ? z * std_dev() + mean() : z; }

  long long count() const { return count_; }

 private:
  bool enabled_;
  long long count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Per-update training diagnostics appended to the metrics log.
struct LossDiagnostics {
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double critic_loss = 0.0;
  double policy_loss = 0.0;
  double entropy = 0.0;
};

}  // namespace jointppo
