#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "jointppo/adam.hpp"
#include "jointppo/params.hpp"
#include "jointppo/rng.hpp"
#include "jointppo/tape.hpp"
#include "jointppo/tensor.hpp"

namespace jointppo {

// How the joint policy factorizes over agents. Conditional is the method;
// independent zeroes the decoder's action-token inputs so each conditional
// ignores previously generated actions (ablation baseline).
enum class Factorization { kConditional, kIndependent };

inline const char* to_string(Factorization f) {
  return f == Factorization::kConditional ? "conditional" : "independent";
}

struct NetConfig {
  int n_agents = 0;
  int obs_dim = 0;
  int n_actions = 0;
  int hidden_dim = 64;
  int n_heads = 4;
  int n_blocks = 1;
  int n_hidden_layers = 1;
  Factorization factorization = Factorization::kConditional;

  void validate() const {
    std::string errs;
    auto bad = [&](const std::string& m) { errs += (errs.empty() ? "" : "; ") + m; };
    if (n_agents < 1) bad("n_agents must be >= 1");
    if (obs_dim < 1) bad("obs_dim must be >= 1");
    if (n_actions < 1) bad("n_actions must be >= 1");
    if (hidden_dim < 1) bad("hidden_dim must be >= 1");
    if (n_heads < 1) bad("n_heads must be >= 1");
    if (n_blocks < 1) bad("n_blocks must be >= 1");
    if (n_hidden_layers < 1) bad("n_hidden_layers must be >= 1");
    if (n_heads >= 1 && hidden_dim % n_heads != 0)
      bad("hidden_dim " + std::to_string(hidden_dim) + " not divisible by n_heads " +
          std::to_string(n_heads));
    if (!errs.empty()) throw ConfigError(errs);
  }

  bool operator==(const NetConfig&) const = default;
};

// One joint decision: per-agent conditional distributions (logits), the
// sampled joint action, its log-probability under the joint policy, and the
// critic's joint observation value. Vectors are agent-indexed.
struct PolicyOutput {
  Tensor per_agent_logits;                  // (n_agents, n_actions)
  std::vector<double> per_agent_log_probs;  // log pi^i(a^i | obs, a^{<i})
  double joint_log_prob = 0.0;
  std::vector<int> actions;
  double value = 0.0;
};

// Teacher-forcing inputs for a minibatch, all in agent-index order.
struct EvalBatch {
  int batch = 0;
  Tensor obs;                // (batch*n_agents, obs_dim)
  std::vector<int> actions;  // batch*n_agents
  BoolMat avail;             // (batch*n_agents, n_actions)
};

// Tape handles produced by evaluate_actions.
struct EvalVals {
  Val joint_log_prob;  // (batch, 1)
  Val entropies;       // (batch, n_agents), agent-index columns
  Val value;           // (batch, 1)
  Val logits;          // (batch*n_agents, n_actions), generation-order rows
};

// Transformer joint policy: an unmasked self-attention encoder over all
// agents' observations, a centralized critic head over the encoded
// observations, and a causally masked decoder that emits each agent's
// conditional action distribution given the joint observation and the
// previously generated actions.
class PolicyNet {
 public:
  PolicyNet(NetConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(splitmix64(init_seed) ^ 0x9d2c5680aull);
    build_params(rng);
  }

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // ---- graph builders ----

  // (batch*n, obs_dim) -> encoded observations (batch*n, hidden_dim).
  Val encode(Tape& t, Val obs, int batch) const {
    const Tensor& O = t.value(obs);
    if (O.cols != cfg_.obs_dim || O.rows != batch * cfg_.n_agents)
      throw DimensionError("encode: obs " + O.shape_str() + " does not match config (" +
                           std::to_string(batch * cfg_.n_agents) + "x" +
                           std::to_string(cfg_.obs_dim) + ")");
    Val h = t.gelu(linear(t, obs, "enc.embed"));
    h = ln(t, h, "enc.ln_in");
    for (int b = 0; b < cfg_.n_blocks; ++b) {
      const std::string pre = "enc.b" + std::to_string(b);
      Val a = attn_block(t, h, h, pre + ".attn", batch, /*causal=*/false);
      h = ln(t, t.add(h, a), pre + ".ln1");
      Val m = mlp(t, h, pre + ".mlp");
      h = ln(t, t.add(h, m), pre + ".ln2");
    }
    return h;
  }

  // Encoded observations -> joint observation value, (batch, 1).
  // Mean-pools over agents, then a small MLP to a scalar.
  Val critic_value(Tape& t, Val encoded, int batch) const {
    Val h = t.mean_pool_rows(encoded, cfg_.n_agents);
    (void)batch;
    for (int l = 0; l < cfg_.n_hidden_layers; ++l)
      h = t.gelu(linear(t, h, "critic.h" + std::to_string(l)));
    return linear(t, h, "critic.out");
  }

  // Teacher-forced decoder pass. enc_ordered holds the encoded observations
  // permuted into generation order, seq_len rows per sample. The token at
  // position 0 is the learned start token; at position j>0 it is the
  // embedded one-hot of the action generated at position j-1. Both the
  // self-attention and the cross-attention over the encoded observations are
  // strictly causal, so logits at position j depend only on tokens <= j.
  Val decoder_logits(Tape& t, Val enc_ordered, const std::vector<int>& shifted_actions,
                     int batch, int seq_len) const {
    const int n = seq_len;
    Tensor onehots(batch * n, cfg_.n_actions);
    Tensor start_ind(batch * n, 1);
    for (int b = 0; b < batch; ++b) {
      start_ind.at(b * n, 0) = 1.0;
      if (cfg_.factorization == Factorization::kConditional) {
        for (int j = 1; j < n; ++j) {
          const int a = shifted_actions[static_cast<size_t>(b) * n + j];
          if (a < 0 || a >= cfg_.n_actions)
            throw ContractError("decoder: action index " + std::to_string(a) + " out of range");
          onehots.at(b * n + j, a) = 1.0;
        }
      }
    }
    Val x = t.add(t.matmul(t.input(std::move(onehots)), p(t, "dec.act_embed")),
                  t.matmul(t.input(std::move(start_ind)), p(t, "dec.start")));
    for (int b = 0; b < cfg_.n_blocks; ++b) {
      const std::string pre = "dec.b" + std::to_string(b);
      Val sa = attn_block(t, x, x, pre + ".self", batch, /*causal=*/true);
      x = ln(t, t.add(x, sa), pre + ".ln1");
      Val ca = attn_block(t, x, enc_ordered, pre + ".cross", batch, /*causal=*/true);
      x = ln(t, t.add(x, ca), pre + ".ln2");
      Val m = mlp(t, x, pre + ".mlp");
      x = ln(t, t.add(x, m), pre + ".ln3");
    }
    return linear(t, x, "dec.head");
  }

  // ---- high-level operations ----

  // Sequential action generation for one joint observation. Samples each
  // agent's action from its conditional distribution (argmax when
  // deterministic), feeding the choice back as the next decoder token.
  PolicyOutput generate(const Tensor& obs, const std::vector<int>& order, const BoolMat& avail,
                        Rng& rng, bool deterministic = false) const {
    check_order(order);
    check_obs_single(obs);
    check_avail(avail, cfg_.n_agents);
    const int n = cfg_.n_agents;

    Tape t;
    Val obs_v = t.input(obs);
    Val enc = encode(t, obs_v, 1);
    Val val = critic_value(t, enc, 1);

    PolicyOutput out;
    out.per_agent_logits = Tensor(n, cfg_.n_actions);
    out.per_agent_log_probs.assign(static_cast<size_t>(n), 0.0);
    out.actions.assign(static_cast<size_t>(n), -1);
    out.value = t.value(val).scalar();

    std::vector<int> shifted;  // positions 0..L-1; [0] unused (start token)
    for (int j = 0; j < n; ++j) {
      const int agent = order[static_cast<size_t>(j)];
      const int len = j + 1;
      std::vector<int> enc_rows(static_cast<size_t>(len));
      for (int l = 0; l < len; ++l) enc_rows[static_cast<size_t>(l)] = order[static_cast<size_t>(l)];
      Val enc_prefix = t.index_rows(enc, enc_rows);
      shifted.assign(static_cast<size_t>(len), 0);
      for (int l = 1; l < len; ++l)
        shifted[static_cast<size_t>(l)] = out.actions[static_cast<size_t>(order[static_cast<size_t>(l - 1)])];
      Val logits = decoder_logits(t, enc_prefix, shifted, 1, len);
      Val last = t.index_rows(logits, {len - 1});
      BoolMat row_mask(1, cfg_.n_actions);
      for (int a = 0; a < cfg_.n_actions; ++a) row_mask.at(0, a) = avail.at(agent, a);
      Val probs = t.masked_softmax(last, row_mask);
      const Tensor& pv = t.value(probs);

      int act;
      if (deterministic) {
        act = 0;
        for (int a = 1; a < cfg_.n_actions; ++a)
          if (pv.at(0, a) > pv.at(0, act)) act = a;
      } else {
        act = rng.categorical(std::span<const double>(pv.data.data(), pv.data.size()));
      }
      if (!avail.at(agent, act)) throw ContractError("generate: sampled unavailable action");

      out.actions[static_cast<size_t>(agent)] = act;
      out.per_agent_log_probs[static_cast<size_t>(agent)] = std::log(pv.at(0, act));
      out.joint_log_prob += out.per_agent_log_probs[static_cast<size_t>(agent)];
      const Tensor& lv = t.value(last);
      for (int a = 0; a < cfg_.n_actions; ++a) out.per_agent_logits.at(agent, a) = lv.at(0, a);
    }
    return out;
  }

  // Teacher-forced re-evaluation of stored joint actions: one parallel
  // decoder pass per minibatch. Returns the same joint log-probabilities
  // sequential generation would assign to the same action sequences.
  EvalVals evaluate_actions(Tape& t, const EvalBatch& eb, const std::vector<int>& order) const {
    check_order(order);
    const int n = cfg_.n_agents;
    const int B = eb.batch;
    if (eb.obs.rows != B * n || eb.obs.cols != cfg_.obs_dim)
      throw DimensionError("evaluate_actions: obs " + eb.obs.shape_str());
    if (static_cast<int>(eb.actions.size()) != B * n)
      throw DimensionError("evaluate_actions: actions length mismatch");
    check_avail(eb.avail, B * n);
    for (int r = 0; r < B * n; ++r) {
      const int a = eb.actions[static_cast<size_t>(r)];
      if (a < 0 || a >= cfg_.n_actions || !eb.avail.at(r, a))
        throw ContractError("evaluate_actions: unavailable action " + std::to_string(a) +
                            " at row " + std::to_string(r));
    }

    Val obs_v = t.input(eb.obs);
    Val enc = encode(t, obs_v, B);
    Val value = critic_value(t, enc, B);

    // permute rows into generation order per sample
    std::vector<int> ord_rows(static_cast<size_t>(B) * n);
    std::vector<int> shifted(static_cast<size_t>(B) * n, 0);
    std::vector<int> act_ord(static_cast<size_t>(B) * n);
    BoolMat avail_ord(B * n, cfg_.n_actions);
    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < n; ++j) {
        const int agent = order[static_cast<size_t>(j)];
        const int row = b * n + j;
        ord_rows[static_cast<size_t>(row)] = b * n + agent;
        act_ord[static_cast<size_t>(row)] = eb.actions[static_cast<size_t>(b) * n + agent];
        if (j > 0)
          shifted[static_cast<size_t>(row)] =
              eb.actions[static_cast<size_t>(b) * n + order[static_cast<size_t>(j - 1)]];
        for (int a = 0; a < cfg_.n_actions; ++a)
          avail_ord.at(row, a) = eb.avail.at(b * n + agent, a);
      }
    }
    Val enc_ord = t.index_rows(enc, ord_rows);
    Val logits = decoder_logits(t, enc_ord, shifted, B, n);
    Val probs = t.masked_softmax(logits, avail_ord);
    Val logp = t.log(t.gather_rows(probs, act_ord));
    Val joint = t.sum_cols(t.reshape(logp, B, n));

    Val ent_ord = t.entropy_rows(probs, avail_ord);
    // back to agent order: row (b, agent) = ordered row (b, position-of-agent)
    std::vector<int> inv(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) inv[static_cast<size_t>(order[static_cast<size_t>(j)])] = j;
    std::vector<int> unperm(static_cast<size_t>(B) * n);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i) unperm[static_cast<size_t>(b) * n + i] = b * n + inv[static_cast<size_t>(i)];
    Val ent = t.reshape(t.index_rows(ent_ord, unperm), B, n);

    return EvalVals{joint, ent, value, logits};
  }

  // Critic value for one joint observation (plain number, no gradients).
  double state_value(const Tensor& obs) const {
    check_obs_single(obs);
    Tape t;
    Val enc = encode(t, t.input(obs), 1);
    return t.value(critic_value(t, enc, 1)).scalar();
  }

 private:
  NetConfig cfg_;
  // mutable: building a tape from a const net still registers parameter
  // leaves whose grads are written by backward()
  mutable ParamStore store_;

  void check_order(const std::vector<int>& order) const {
    if (static_cast<int>(order.size()) != cfg_.n_agents)
      throw ContractError("order length " + std::to_string(order.size()) + " != n_agents");
    std::vector<char> seen(static_cast<size_t>(cfg_.n_agents), 0);
    for (int a : order) {
      if (a < 0 || a >= cfg_.n_agents || seen[static_cast<size_t>(a)])
        throw ContractError("order is not a permutation of agents");
      seen[static_cast<size_t>(a)] = 1;
    }
  }
  void check_obs_single(const Tensor& obs) const {
    if (obs.rows != cfg_.n_agents || obs.cols != cfg_.obs_dim)
      throw DimensionError("obs " + obs.shape_str() + " does not match config");
  }
  void check_avail(const BoolMat& avail, int rows) const {
    if (avail.rows != rows || avail.cols != cfg_.n_actions)
      throw DimensionError("avail mask has wrong shape");
    for (int r = 0; r < rows; ++r) {
      bool any = false;
      for (int a = 0; a < cfg_.n_actions; ++a) any = any || avail.at(r, a);
      if (!any) throw InvalidMaskError("avail row " + std::to_string(r) + " all masked");
    }
  }

  // ---- parameter plumbing ----

  void add_linear(const std::string& name, int in, int out, Rng& rng) {
    init_glorot(store_.add(name + ".w", in, out), rng);
    store_.add(name + ".b", 1, out);
  }
  void add_ln(const std::string& name) {
    init_constant(store_.add(name + ".g", 1, cfg_.hidden_dim), 1.0);
    store_.add(name + ".b", 1, cfg_.hidden_dim);
  }
  void add_attn(const std::string& pre, Rng& rng) {
    const int d = cfg_.hidden_dim;
    add_linear(pre + ".q", d, d, rng);
    add_linear(pre + ".k", d, d, rng);
    add_linear(pre + ".v", d, d, rng);
    add_linear(pre + ".o", d, d, rng);
  }
  void add_mlp(const std::string& pre, int out_dim, Rng& rng) {
    const int d = cfg_.hidden_dim;
    for (int l = 0; l < cfg_.n_hidden_layers; ++l) add_linear(pre + ".h" + std::to_string(l), d, d, rng);
    add_linear(pre + ".out", d, out_dim, rng);
  }

  void build_params(Rng& rng) {
    const int d = cfg_.hidden_dim;
    // encoder (phi)
    add_linear("enc.embed", cfg_.obs_dim, d, rng);
    add_ln("enc.ln_in");
    for (int b = 0; b < cfg_.n_blocks; ++b) {
      const std::string pre = "enc.b" + std::to_string(b);
      add_attn(pre + ".attn", rng);
      add_ln(pre + ".ln1");
      add_mlp(pre + ".mlp", d, rng);
      add_ln(pre + ".ln2");
    }
    // critic (psi)
    for (int l = 0; l < cfg_.n_hidden_layers; ++l) add_linear("critic.h" + std::to_string(l), d, d, rng);
    add_linear("critic.out", d, 1, rng);
    // decoder (theta)
    init_glorot(store_.add("dec.start", 1, d), rng);
    init_glorot(store_.add("dec.act_embed", cfg_.n_actions, d), rng);
    for (int b = 0; b < cfg_.n_blocks; ++b) {
      const std::string pre = "dec.b" + std::to_string(b);
      add_attn(pre + ".self", rng);
      add_ln(pre + ".ln1");
      add_attn(pre + ".cross", rng);
      add_ln(pre + ".ln2");
      add_mlp(pre + ".mlp", d, rng);
      add_ln(pre + ".ln3");
    }
    add_linear("dec.head", d, cfg_.n_actions, rng);
  }

  // ---- graph helpers ----

  Val p(Tape& t, const std::string& name) const {
    Parameter* prm = store_.find(name);
    if (prm == nullptr) throw ContractError("unknown parameter: " + name);
    return t.param(*prm);
  }
  Val linear(Tape& t, Val x, const std::string& name) const {
    return t.add_rowvec(t.matmul(x, p(t, name + ".w")), p(t, name + ".b"));
  }
  Val ln(Tape& t, Val x, const std::string& name) const {
    return t.layer_norm(x, p(t, name + ".g"), p(t, name + ".b"));
  }
  Val mlp(Tape& t, Val x, const std::string& pre) const {
    Val h = x;
    for (int l = 0; l < cfg_.n_hidden_layers; ++l)
      h = t.gelu(linear(t, h, pre + ".h" + std::to_string(l)));
    return linear(t, h, pre + ".out");
  }
  Val attn_block(Tape& t, Val q_src, Val kv_src, const std::string& pre, int batch,
                 bool causal) const {
    Val q = linear(t, q_src, pre + ".q");
    Val k = linear(t, kv_src, pre + ".k");
    Val v = linear(t, kv_src, pre + ".v");
    Val a = t.attention(q, k, v, cfg_.n_heads, batch, causal);
    return linear(t, a, pre + ".o");
  }
};

}  // namespace jointppo
