#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "jointppo/rng.hpp"
#include "jointppo/tensor.hpp"

namespace jointppo {

struct EnvSpec {
  int n_agents = 0;
  int obs_dim = 0;
  int n_actions = 0;
  int max_episode_len = 1;
  double reward_min = 0.0;
  double reward_max = 1.0;
};

struct StepResult {
  Tensor obs;     // next joint observation (n_agents, obs_dim)
  BoolMat avail;  // next availability masks (n_agents, n_actions)
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
  bool success = false;
};

// Cooperative POMDP with a scalar team reward. Dynamics are deterministic
// given state and action; all stochasticity enters at reset.
class Env {
 public:
  virtual ~Env() = default;
  virtual EnvSpec spec() const = 0;
  virtual std::pair<Tensor, BoolMat> reset(uint64_t seed) = 0;
  virtual StepResult step(const std::vector<int>& joint_action) = 0;
  // Privileged hand-coded policy used as an acceptance baseline.
  virtual std::vector<int> oracle_action() const = 0;
  virtual std::string name() const = 0;
};

namespace env_detail {

inline void check_actions(const std::vector<int>& a, const EnvSpec& s, const BoolMat& avail) {
  if (static_cast<int>(a.size()) != s.n_agents)
    throw ContractError("joint action has " + std::to_string(a.size()) + " entries, expected " +
                        std::to_string(s.n_agents));
  for (int i = 0; i < s.n_agents; ++i) {
    if (a[static_cast<size_t>(i)] < 0 || a[static_cast<size_t>(i)] >= s.n_actions)
      throw ContractError("agent " + std::to_string(i) + " action out of range");
    if (!avail.at(i, a[static_cast<size_t>(i)]))
      throw ContractError("agent " + std::to_string(i) + " action " +
                          std::to_string(a[static_cast<size_t>(i)]) + " unavailable");
  }
}

}  // namespace env_detail

// Two agents, one step: team reward 1 iff they pick different actions.
// Observation: a constant feature plus the agent id one-hot.
class XorGame final : public Env {
 public:
  EnvSpec spec() const override { return {2, 3, 2, 1, 0.0, 1.0}; }
  std::string name() const override { return "xor"; }

  std::pair<Tensor, BoolMat> reset(uint64_t) override {
    done_ = false;
    return {make_obs(), BoolMat(2, 2, true)};
  }

  StepResult step(const std::vector<int>& a) override {
    if (done_) throw ContractError("step after terminal");
    const BoolMat avail(2, 2, true);
    env_detail::check_actions(a, spec(), avail);
    done_ = true;
    StepResult r;
    r.obs = make_obs();
    r.avail = avail;
    r.reward = a[0] != a[1] ? 1.0 : 0.0;
    r.terminal = true;
    r.success = r.reward > 0.5;
    return r;
  }

  std::vector<int> oracle_action() const override { return {0, 1}; }

 private:
  bool done_ = true;

  static Tensor make_obs() {
    Tensor o(2, 3);
    for (int i = 0; i < 2; ++i) {
      o.at(i, 0) = 1.0;
      o.at(i, 1 + i) = 1.0;
    }
    return o;
  }
};

// n agents, k actions, one step: team reward 1 iff all actions are equal.
class CoordinationGame final : public Env {
 public:
  CoordinationGame(int n_agents, int n_actions) : n_(n_agents), k_(n_actions) {
    if (n_ < 2 || k_ < 2) throw ConfigError("coordination game needs n_agents,n_actions >= 2");
  }

  EnvSpec spec() const override { return {n_, 1 + n_, k_, 1, 0.0, 1.0}; }
  std::string name() const override { return "coordination"; }

  std::pair<Tensor, BoolMat> reset(uint64_t) override {
    done_ = false;
    return {make_obs(), BoolMat(n_, k_, true)};
  }

  StepResult step(const std::vector<int>& a) override {
    if (done_) throw ContractError("step after terminal");
    const BoolMat avail(n_, k_, true);
    env_detail::check_actions(a, spec(), avail);
    done_ = true;
    bool all_equal = true;
    for (int i = 1; i < n_; ++i) all_equal = all_equal && a[static_cast<size_t>(i)] == a[0];
    StepResult r;
    r.obs = make_obs();
    r.avail = avail;
    r.reward = all_equal ? 1.0 : 0.0;
    r.terminal = true;
    r.success = all_equal;
    return r;
  }

  std::vector<int> oracle_action() const override { return std::vector<int>(static_cast<size_t>(n_), 0); }

 private:
  int n_, k_;
  bool done_ = true;

  Tensor make_obs() const {
    Tensor o(n_, 1 + n_);
    for (int i = 0; i < n_; ++i) {
      o.at(i, 0) = 1.0;
      o.at(i, 1 + i) = 1.0;
    }
    return o;
  }
};

// n agents spread over n landmarks on a g-by-g grid. Actions are
// up/down/left/right/stay; moves off the border are masked unavailable.
// Per-step team reward is -(mean over landmarks of Manhattan distance to the
// nearest agent)/g; the episode ends in success when every landmark has a
// distinct agent standing on it, or truncates at max_episode_len.
//
// Observations are partial: each agent sees its own position, relative
// positions of all landmarks, and relative positions (plus a visibility
// flag) of other agents within sense_radius only.
class GridworldSpread final : public Env {
 public:
  static constexpr int kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4;

  GridworldSpread(int n_agents, int grid, int max_len, int sense_radius)
      : n_(n_agents), g_(grid), max_len_(max_len), radius_(sense_radius) {
    if (n_ < 1 || g_ < 2) throw ConfigError("gridworld needs n_agents >= 1, grid >= 2");
    if (2 * n_ > g_ * g_) throw ConfigError("gridworld cannot place agents+landmarks without overlap");
    if (max_len_ < 1) throw ConfigError("gridworld max_episode_len must be >= 1");
  }

  EnvSpec spec() const override {
    // own pos (2) + landmark offsets (2n) + other agents (dx, dy, visible) (3(n-1))
    const double worst = 2.0 * (g_ - 1) / g_;
    return {n_, 2 + 2 * n_ + 3 * (n_ - 1), 5, max_len_, -worst, 0.0};
  }
  std::string name() const override { return "gridworld_spread"; }

  std::pair<Tensor, BoolMat> reset(uint64_t seed) override {
    Rng rng(seed);
    // distinct cells for all agents and landmarks: partial Fisher-Yates over cell ids
    std::vector<int> cells(static_cast<size_t>(g_) * g_);
    std::iota(cells.begin(), cells.end(), 0);
    for (int i = 0; i < 2 * n_; ++i) {
      const int j = i + rng.uniform_int(static_cast<int>(cells.size()) - i);
      std::swap(cells[static_cast<size_t>(i)], cells[static_cast<size_t>(j)]);
    }
    agents_.resize(static_cast<size_t>(n_));
    landmarks_.resize(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      agents_[static_cast<size_t>(i)] = {cells[static_cast<size_t>(i)] % g_, cells[static_cast<size_t>(i)] / g_};
      landmarks_[static_cast<size_t>(i)] = {cells[static_cast<size_t>(n_ + i)] % g_,
                                            cells[static_cast<size_t>(n_ + i)] / g_};
    }
    steps_ = 0;
    done_ = false;
    return {make_obs(), make_avail()};
  }

  StepResult step(const std::vector<int>& a) override {
    if (done_) throw ContractError("step after episode end");
    env_detail::check_actions(a, spec(), make_avail());
    for (int i = 0; i < n_; ++i) {
      auto& [x, y] = agents_[static_cast<size_t>(i)];
      switch (a[static_cast<size_t>(i)]) {
        case kUp: y += 1; break;
        case kDown: y -= 1; break;
        case kLeft: x -= 1; break;
        case kRight: x += 1; break;
        default: break;
      }
    }
    ++steps_;
    StepResult r;
    r.reward = -mean_landmark_distance() / g_;
    r.success = perfect_cover();
    r.terminal = r.success;
    r.truncated = !r.terminal && steps_ >= max_len_;
    done_ = r.terminal || r.truncated;
    r.obs = make_obs();
    r.avail = make_avail();
    return r;
  }

  // Greedy baseline: agents in index order claim the nearest unclaimed
  // landmark, then take shortest-path moves (longer axis first).
  std::vector<int> oracle_action() const override {
    std::vector<int> claimed(static_cast<size_t>(n_), -1);
    std::vector<char> taken(static_cast<size_t>(n_), 0);
    for (int i = 0; i < n_; ++i) {
      int best = -1, best_d = 1 << 20;
      for (int l = 0; l < n_; ++l) {
        if (taken[static_cast<size_t>(l)]) continue;
        const int d = manhattan(agents_[static_cast<size_t>(i)], landmarks_[static_cast<size_t>(l)]);
        if (d < best_d) {
          best_d = d;
          best = l;
        }
      }
      claimed[static_cast<size_t>(i)] = best;
      taken[static_cast<size_t>(best)] = 1;
    }
    std::vector<int> act(static_cast<size_t>(n_), kStay);
    for (int i = 0; i < n_; ++i) {
      const auto [ax, ay] = agents_[static_cast<size_t>(i)];
      const auto [lx, ly] = landmarks_[static_cast<size_t>(claimed[static_cast<size_t>(i)])];
      const int dx = lx - ax, dy = ly - ay;
      if (dx == 0 && dy == 0) continue;
      if (std::abs(dx) >= std::abs(dy) && dx != 0) act[static_cast<size_t>(i)] = dx > 0 ? kRight : kLeft;
      else act[static_cast<size_t>(i)] = dy > 0 ? kUp : kDown;
    }
    return act;
  }

  // full-state accessors for tests and oracles
  const std::vector<std::pair<int, int>>& agent_positions() const { return agents_; }
  const std::vector<std::pair<int, int>>& landmark_positions() const { return landmarks_; }
  void set_positions(std::vector<std::pair<int, int>> agents,
                     std::vector<std::pair<int, int>> landmarks) {
    agents_ = std::move(agents);
    landmarks_ = std::move(landmarks);
    steps_ = 0;
    done_ = false;
  }
  Tensor observation() const { return make_obs(); }
  BoolMat availability() const { return make_avail(); }

 private:
  int n_, g_, max_len_, radius_;
  std::vector<std::pair<int, int>> agents_;
  std::vector<std::pair<int, int>> landmarks_;
  int steps_ = 0;
  bool done_ = true;

  static int manhattan(std::pair<int, int> a, std::pair<int, int> b) {
    return std::abs(a.first - b.first) + std::abs(a.second - b.second);
  }

  double mean_landmark_distance() const {
    double total = 0.0;
    for (const auto& l : landmarks_) {
      int best = 1 << 20;
      for (const auto& a : agents_) best = std::min(best, manhattan(a, l));
      total += best;
    }
    return total / n_;
  }

  bool perfect_cover() const {
    // distinct agent on every landmark: greedy on exact matches suffices
    // because landmarks occupy distinct cells
    std::vector<char> used(static_cast<size_t>(n_), 0);
    for (const auto& l : landmarks_) {
      bool found = false;
      for (int i = 0; i < n_ && !found; ++i) {
        if (!used[static_cast<size_t>(i)] && agents_[static_cast<size_t>(i)] == l) {
          used[static_cast<size_t>(i)] = 1;
          found = true;
        }
      }
      if (!found) return false;
    }
    return true;
  }

  Tensor make_obs() const {
    const EnvSpec s = spec();
    Tensor o(n_, s.obs_dim);
    const double inv = 1.0 / g_;
    for (int i = 0; i < n_; ++i) {
      const auto [ax, ay] = agents_[static_cast<size_t>(i)];
      int c = 0;
      o.at(i, c++) = ax * inv;
      o.at(i, c++) = ay * inv;
      for (int l = 0; l < n_; ++l) {
        o.at(i, c++) = (landmarks_[static_cast<size_t>(l)].first - ax) * inv;
        o.at(i, c++) = (landmarks_[static_cast<size_t>(l)].second - ay) * inv;
      }
      for (int j = 0; j < n_; ++j) {
        if (j == i) continue;
        const bool visible = manhattan(agents_[static_cast<size_t>(i)], agents_[static_cast<size_t>(j)]) <= radius_;
        o.at(i, c++) = visible ? (agents_[static_cast<size_t>(j)].first - ax) * inv : 0.0;
        o.at(i, c++) = visible ? (agents_[static_cast<size_t>(j)].second - ay) * inv : 0.0;
        o.at(i, c++) = visible ? 1.0 : 0.0;
      }
    }
    return o;
  }

  BoolMat make_avail() const {
    BoolMat m(n_, 5, true);
    for (int i = 0; i < n_; ++i) {
      const auto [ax, ay] = agents_[static_cast<size_t>(i)];
      m.at(i, kUp) = ay + 1 < g_;
      m.at(i, kDown) = ay - 1 >= 0;
      m.at(i, kLeft) = ax - 1 >= 0;
      m.at(i, kRight) = ax + 1 < g_;
    }
    return m;
  }
};

// Environment selected by name plus a parameter block from the run config.
inline std::unique_ptr<Env> make_env(const std::string& name, const nlohmann::json& params) {
  auto geti = [&](const char* key, int dflt) {
    return params.contains(key) ? params.at(key).get<int>() : dflt;
  };
  if (name == "xor") return std::make_unique<XorGame>();
  if (name == "coordination")
    return std::make_unique<CoordinationGame>(geti("n_agents", 3), geti("n_actions", 4));
  if (name == "gridworld_spread")
    return std::make_unique<GridworldSpread>(geti("n_agents", 3), geti("grid", 5),
                                             geti("max_episode_len", 15), geti("sense_radius", 2));
  throw ConfigError("unknown environment '" + name + "'");
}

}  // namespace jointppo
