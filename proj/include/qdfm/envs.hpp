#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdfm/action_space.hpp"
#include "qdfm/rng.hpp"

namespace qdfm::envs {

struct StepResult {
  int next_state;
  std::vector<double> reward;  // one entry per objective
  bool terminal;
};

// Display-oriented grid info for visitation heatmaps: state id -> (row, col)
// with row 0 at the top.
struct GridLayout {
  int rows;
  int cols;
  std::function<std::pair<int, int>(int)> cell_of_state;
};

// A policy maps a state id to a (joint) action index, possibly randomly.
using PolicyFn = std::function<int(int, Rng&)>;

// Finite MDP with vector rewards and enumerable states. Value-semantic: all
// behavior lives in captured closures, instances can be copied freely and
// used read-only from any thread (randomness comes in through the caller's
// Rng).
struct DiscreteEnv {
  std::string name;
  int n_states = 0;
  std::vector<int> agent_dims;  // {n} for single-agent
  int n_objectives = 0;
  int max_episode_len = 0;
  int state_dim = 0;  // encoding width
  std::function<std::vector<double>(int)> encode;
  std::function<int(Rng&)> initial_state;
  std::function<StepResult(int, int, Rng&)> step;
  std::optional<GridLayout> grid;
  // Scripted behavior policies available for dataset generation, by name.
  std::map<std::string, PolicyFn> policies;

  int n_actions() const { return joint_cardinality(agent_dims); }
};

struct TraceStep {
  int state;
  int action;
  std::vector<double> reward;
  int next_state;
  bool done;
};

struct EpisodeTrace {
  std::vector<TraceStep> steps;

  std::vector<double> total_return() const {
    if (steps.empty()) return {};
    std::vector<double> sum(steps.front().reward.size(), 0.0);
    for (const auto& s : steps)
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += s.reward[k];
    return sum;
  }
  int length() const { return static_cast<int>(steps.size()); }
};

inline EpisodeTrace rollout(const DiscreteEnv& env, const PolicyFn& policy, Rng& rng) {
  EpisodeTrace trace;
  int s = env.initial_state(rng);
  for (int step = 0; step < env.max_episode_len; ++step) {
    int a = policy(s, rng);
    if (a < 0 || a >= env.n_actions())
      throw std::invalid_argument("rollout: policy returned action out of range");
    StepResult r = env.step(s, a, rng);
    trace.steps.push_back({s, a, r.reward, r.next_state, r.terminal});
    s = r.next_state;
    if (r.terminal) break;
  }
  return trace;
}

namespace detail {

inline std::function<std::vector<double>(int)> onehot_encoder(int n_states) {
  return [n_states](int s) {
    if (s < 0 || s >= n_states) throw std::invalid_argument("encode: state out of range");
    std::vector<double> e(n_states, 0.0);
    e[s] = 1.0;
    return e;
  };
}

// Movement actions shared by the gridworlds, in fixed index order.
enum GridAction { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

}  // namespace detail

// ---------------------------------------------------------------------------
// Fork gridworld: 7 columns x 5 rows, two goals on the top corners with
// opposing rewards, a heavily penalized trap dead-center. Every shortest
// path from the start straight up to the top-center crosses the trap, so
// safe behavior must commit to the left or right corridor.
//
// Coordinates: x in [0,7) left to right, y in [0,5) bottom to top.
// State id = y*7 + x. Objectives: (goal A payoff, goal B payoff).

namespace fork_layout {
inline constexpr int kWidth = 7, kHeight = 5;
inline constexpr int kStartX = 3, kStartY = 0;
inline constexpr int kGoalAX = 0, kGoalAY = 4;   // reward (10, 0)
inline constexpr int kGoalBX = 6, kGoalBY = 4;   // reward (0, 10)
inline constexpr int kTrapX = 3, kTrapY = 2;     // reward (-50, -50)
inline int id(int x, int y) { return y * kWidth + x; }
inline int x_of(int s) { return s % kWidth; }
inline int y_of(int s) { return s / kWidth; }
}  // namespace fork_layout

inline DiscreteEnv make_fork() {
  using namespace fork_layout;
  DiscreteEnv env;
  env.name = "fork";
  env.n_states = kWidth * kHeight;
  env.agent_dims = {4};
  env.n_objectives = 2;
  env.max_episode_len = 30;
  env.state_dim = env.n_states;
  env.encode = detail::onehot_encoder(env.n_states);
  env.initial_state = [](Rng&) { return id(kStartX, kStartY); };
  env.step = [](int s, int a, Rng&) -> StepResult {
    int x = x_of(s), y = y_of(s);
    switch (a) {
      case detail::kUp: y = std::min(y + 1, kHeight - 1); break;
      case detail::kDown: y = std::max(y - 1, 0); break;
      case detail::kLeft: x = std::max(x - 1, 0); break;
      case detail::kRight: x = std::min(x + 1, kWidth - 1); break;
      default: throw std::invalid_argument("fork: action out of range");
    }
    int next = id(x, y);
    if (x == kGoalAX && y == kGoalAY) return {next, {10.0, 0.0}, true};
    if (x == kGoalBX && y == kGoalBY) return {next, {0.0, 10.0}, true};
    if (x == kTrapX && y == kTrapY) return {next, {-50.0, -50.0}, true};
    return {next, {0.0, 0.0}, false};
  };
  env.grid = GridLayout{kHeight, kWidth, [](int s) {
                          return std::pair<int, int>{kHeight - 1 - y_of(s), x_of(s)};
                        }};

  // Corridor behavior policies: slide along the bottom row to the outer
  // column, then climb to the goal. A small amount of exploration noise
  // covers the first ring of off-corridor states, and a downward recovery
  // rule steers strays back to the bottom row. Both the noise and the
  // recovery refuse any move that would enter the trap, so datasets created
  // from these policies contain no trap transitions by construction.
  auto corridor = [](bool left) {
    return [left](int s, Rng& rng) -> int {
      int x = x_of(s), y = y_of(s);
      auto enters_trap = [&](int action) {
        int nx = x, ny = y;
        switch (action) {
          case detail::kUp: ny = std::min(y + 1, kHeight - 1); break;
          case detail::kDown: ny = std::max(y - 1, 0); break;
          case detail::kLeft: nx = std::max(x - 1, 0); break;
          case detail::kRight: nx = std::min(x + 1, kWidth - 1); break;
        }
        return nx == kTrapX && ny == kTrapY;
      };
      if (rng.uniform() < 0.08) {
        std::vector<double> w(4, 1.0);
        for (int a = 0; a < 4; ++a)
          if (enters_trap(a)) w[a] = 0.0;
        return static_cast<int>(rng.categorical(w));
      }
      int intent;
      const int outer = left ? 0 : kWidth - 1;
      if (x == outer) intent = detail::kUp;
      else if (y == 0) intent = left ? detail::kLeft : detail::kRight;
      else intent = detail::kDown;  // recover toward the bottom row
      if (enters_trap(intent)) intent = left ? detail::kLeft : detail::kRight;
      return intent;
    };
  };
  env.policies["left"] = corridor(true);
  env.policies["right"] = corridor(false);
  return env;
}

// ---------------------------------------------------------------------------
// Submarine treasure grid: 12 rows x 10 columns, ten terminal treasure cells
// of increasing value on a descending sea floor, objectives
// (treasure value, -steps). Cells below the floor are impassable. The
// optimal (treasure, time) pairs form the environment's exact Pareto set.
//
// Row 0 is the surface; the start is the top-left cell.

namespace dst_layout {
inline constexpr int kRows = 12, kCols = 10;
inline constexpr double kValues[10] = {0.7,  8.2,  11.5, 14.0, 15.1,
                                       16.1, 19.6, 20.3, 22.4, 23.7};
inline constexpr int kDepths[10] = {2, 3, 4, 5, 5, 5, 8, 8, 10, 11};
inline int id(int r, int c) { return r * kCols + c; }
inline int row_of(int s) { return s / kCols; }
inline int col_of(int s) { return s % kCols; }
inline bool blocked(int r, int c) { return r > kDepths[c]; }
inline bool treasure_at(int r, int c) { return r == kDepths[c]; }
}  // namespace dst_layout

inline DiscreteEnv make_dst() {
  using namespace dst_layout;
  DiscreteEnv env;
  env.name = "dst";
  env.n_states = kRows * kCols;
  env.agent_dims = {4};
  env.n_objectives = 2;
  env.max_episode_len = 50;
  env.state_dim = env.n_states;
  env.encode = detail::onehot_encoder(env.n_states);
  env.initial_state = [](Rng&) { return id(0, 0); };
  env.step = [](int s, int a, Rng&) -> StepResult {
    int r = row_of(s), c = col_of(s);
    int nr = r, nc = c;
    switch (a) {
      case detail::kUp: nr = std::max(r - 1, 0); break;
      case detail::kDown: nr = std::min(r + 1, kRows - 1); break;
      case detail::kLeft: nc = std::max(c - 1, 0); break;
      case detail::kRight: nc = std::min(c + 1, kCols - 1); break;
      default: throw std::invalid_argument("dst: action out of range");
    }
    if (blocked(nr, nc)) {  // sea floor: stay put
      nr = r;
      nc = c;
    }
    if (treasure_at(nr, nc))
      return {id(nr, nc), {kValues[nc], -1.0}, true};
    return {id(nr, nc), {0.0, -1.0}, false};
  };
  env.grid = GridLayout{kRows, kCols, [](int s) {
                          return std::pair<int, int>{row_of(s), col_of(s)};
                        }};

  // One shortest-path diver per treasure (sail right on the surface, then
  // sink), plus a uniform-random explorer.
  for (int k = 0; k < 10; ++k) {
    env.policies["diver" + std::to_string(k)] = [k](int s, Rng&) -> int {
      int c = col_of(s);
      if (c < k) return detail::kRight;
      if (c > k) return detail::kLeft;
      return detail::kDown;
    };
  }
  env.policies["random"] = [](int, Rng& rng) { return static_cast<int>(rng.uniform_below(4)); };
  return env;
}

// ---------------------------------------------------------------------------
// Resource-gathering grid: 5x5 map with a gold cell, a diamond cell, and two
// enemy cells. Entering an enemy cell triggers an attack with probability
// 0.1, which ends the episode with safety penalty -1. Returning home with
// resources banks them and ends the episode. Objectives:
// (gold banked, diamonds banked, safety).
//
// State = (cell, carrying-gold, carrying-diamond).

namespace resource_layout {
inline constexpr int kSize = 5;
inline constexpr int kHomeR = 4, kHomeC = 2;
inline constexpr int kGoldR = 0, kGoldC = 2;
inline constexpr int kDiamondR = 1, kDiamondC = 4;
inline constexpr int kEnemyR[2] = {0, 1}, kEnemyC[2] = {3, 2};
inline constexpr double kAttackProb = 0.1;
inline int id(int r, int c, bool gold, bool diamond) {
  return ((r * kSize + c) << 2) | (gold ? 2 : 0) | (diamond ? 1 : 0);
}
inline int row_of(int s) { return (s >> 2) / kSize; }
inline int col_of(int s) { return (s >> 2) % kSize; }
inline bool has_gold(int s) { return (s & 2) != 0; }
inline bool has_diamond(int s) { return (s & 1) != 0; }
inline bool enemy_at(int r, int c) {
  return (r == kEnemyR[0] && c == kEnemyC[0]) || (r == kEnemyR[1] && c == kEnemyC[1]);
}
}  // namespace resource_layout

inline DiscreteEnv make_resource() {
  using namespace resource_layout;
  DiscreteEnv env;
  env.name = "resource";
  env.n_states = kSize * kSize * 4;
  env.agent_dims = {4};
  env.n_objectives = 3;
  env.max_episode_len = 40;
  env.state_dim = env.n_states;
  env.encode = detail::onehot_encoder(env.n_states);
  env.initial_state = [](Rng&) { return id(kHomeR, kHomeC, false, false); };
  env.step = [](int s, int a, Rng& rng) -> StepResult {
    int r = row_of(s), c = col_of(s);
    bool gold = has_gold(s), diamond = has_diamond(s);
    switch (a) {
      case detail::kUp: r = std::max(r - 1, 0); break;
      case detail::kDown: r = std::min(r + 1, kSize - 1); break;
      case detail::kLeft: c = std::max(c - 1, 0); break;
      case detail::kRight: c = std::min(c + 1, kSize - 1); break;
      default: throw std::invalid_argument("resource: action out of range");
    }
    if (enemy_at(r, c) && rng.uniform() < kAttackProb)
      return {id(r, c, false, false), {0.0, 0.0, -1.0}, true};
    if (r == kGoldR && c == kGoldC) gold = true;
    if (r == kDiamondR && c == kDiamondC) diamond = true;
    if (r == kHomeR && c == kHomeC && (gold || diamond))
      return {id(r, c, false, false),
              {gold ? 1.0 : 0.0, diamond ? 1.0 : 0.0, 0.0},
              true};
    return {id(r, c, gold, diamond), {0.0, 0.0, 0.0}, false};
  };
  env.grid = GridLayout{kSize, kSize, [](int s) {
                          return std::pair<int, int>{row_of(s), col_of(s)};
                        }};

  // gold: the risky direct route up/down the home column (crosses an enemy
  // cell both ways). safe: the same gold via the enemy-free western detour.
  // diamond: the eastern route, which never meets an enemy.
  env.policies["gold"] = [](int s, Rng&) -> int {
    int c = col_of(s);
    if (c < kGoldC) return detail::kRight;
    if (c > kGoldC) return detail::kLeft;
    return has_gold(s) ? detail::kDown : detail::kUp;
  };
  env.policies["safe"] = [](int s, Rng&) -> int {
    int r = row_of(s), c = col_of(s);
    if (!has_gold(s)) {  // home -> west wall -> surface -> gold
      if (r == kSize - 1 && c > 0) return detail::kLeft;
      if (c == 0 && r > 0) return detail::kUp;
      return detail::kRight;
    }
    // gold -> west wall -> floor -> home
    if (r == 0 && c > 0) return detail::kLeft;
    if (c == 0 && r < kSize - 1) return detail::kDown;
    return detail::kRight;
  };
  env.policies["diamond"] = [](int s, Rng&) -> int {
    int r = row_of(s), c = col_of(s);
    if (!has_diamond(s)) {  // home -> east wall -> up to the diamond
      if (r == kSize - 1 && c < kSize - 1) return detail::kRight;
      if (c == kSize - 1 && r > 1) return detail::kUp;
      return detail::kRight;
    }
    if (c == kSize - 1 && r < kSize - 1) return detail::kDown;
    if (r == kSize - 1 && c > kHomeC) return detail::kLeft;
    return detail::kDown;
  };
  env.policies["random"] = [](int, Rng& rng) { return static_cast<int>(rng.uniform_below(4)); };
  return env;
}

// ---------------------------------------------------------------------------
// Two-agent, two-context matrix game, one step per episode. Objective 1
// rewards coordination: +8 for any matching pair, +2 extra when the match is
// the context-favored pair ((0,0) in context 0, (1,1) in context 1).
// Objective 2 is safety: each agent playing the costly action 2 contributes
// -4, any other action +1. Coordinating on (2,2) therefore earns task reward
// at a steep safety price.

inline DiscreteEnv make_matrix_game() {
  DiscreteEnv env;
  env.name = "matrix";
  env.n_states = 2;
  env.agent_dims = {3, 3};
  env.n_objectives = 2;
  env.max_episode_len = 1;
  env.state_dim = 2;
  env.encode = detail::onehot_encoder(2);
  env.initial_state = [](Rng& rng) { return static_cast<int>(rng.uniform_below(2)); };
  env.step = [dims = env.agent_dims](int s, int a, Rng&) -> StepResult {
    auto coords = joint_to_coords(dims, a);
    const int a1 = coords[0], a2 = coords[1];
    double r1 = 0.0;
    if (a1 == a2) {
      r1 = 8.0;
      if (a1 == s) r1 += 2.0;  // context-favored pair
    }
    double r2 = 0.0;
    r2 += (a1 == 2) ? -4.0 : 1.0;
    r2 += (a2 == 2) ? -4.0 : 1.0;
    return {s, {r1, r2}, true};
  };

  // Jointly scripted behavior modes: one coordinates through the costly
  // action, one plays complementary safe actions, and a uniform explorer
  // keeps every joint action in support.
  env.policies["risky-coord"] = [dims = env.agent_dims](int, Rng&) {
    const int coords[2] = {2, 2};
    return coords_to_joint(dims, coords);
  };
  env.policies["safe-mismatch"] = [dims = env.agent_dims](int, Rng& rng) {
    const bool flip = rng.uniform() < 0.5;
    const int coords[2] = {flip ? 1 : 0, flip ? 0 : 1};
    return coords_to_joint(dims, coords);
  };
  env.policies["random"] = [](int, Rng& rng) { return static_cast<int>(rng.uniform_below(9)); };
  return env;
}

// ---------------------------------------------------------------------------
// Single-state bandit with a fixed vector reward per arm; pulls terminate
// immediately. mu is the scripted behavior distribution over arms.

inline DiscreteEnv make_bandit(std::vector<double> mu,
                               std::vector<std::vector<double>> q_table) {
  if (mu.size() != q_table.size() || mu.size() < 2)
    throw std::invalid_argument("bandit: need matching mu and reward rows for >= 2 arms");
  const int k = static_cast<int>(q_table.front().size());
  for (const auto& row : q_table)
    if (static_cast<int>(row.size()) != k)
      throw std::invalid_argument("bandit: ragged reward table");
  double sum = 0.0;
  for (double p : mu) {
    if (!(p >= 0.0)) throw std::invalid_argument("bandit: mu entries must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("bandit: mu must sum to 1");

  DiscreteEnv env;
  env.name = "bandit";
  env.n_states = 1;
  env.agent_dims = {static_cast<int>(mu.size())};
  env.n_objectives = k;
  env.max_episode_len = 1;
  env.state_dim = 1;
  env.encode = [](int) { return std::vector<double>{1.0}; };
  env.initial_state = [](Rng&) { return 0; };
  env.step = [q_table](int, int a, Rng&) -> StepResult {
    if (a < 0 || a >= static_cast<int>(q_table.size()))
      throw std::invalid_argument("bandit: action out of range");
    return {0, q_table[a], true};
  };
  env.policies["behavior"] = [mu](int, Rng& rng) {
    return static_cast<int>(rng.categorical(mu));
  };
  return env;
}

// ---------------------------------------------------------------------------
// Registry.

inline DiscreteEnv make_env(const std::string& name) {
  if (name == "fork") return make_fork();
  if (name == "dst") return make_dst();
  if (name == "resource") return make_resource();
  if (name == "matrix") return make_matrix_game();
  if (name == "bandit")
    return make_bandit({0.65, 0.35}, {{1.0}, {0.0}});
  throw std::invalid_argument("unknown environment '" + name +
                              "' (expected fork, dst, resource, matrix, or bandit)");
}

}  // namespace qdfm::envs
