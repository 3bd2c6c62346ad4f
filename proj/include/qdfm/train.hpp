#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "qdfm/action_space.hpp"
#include "qdfm/critic.hpp"
#include "qdfm/data.hpp"
#include "qdfm/envs.hpp"
#include "qdfm/flow.hpp"
#include "qdfm/net.hpp"
#include "qdfm/rng.hpp"

namespace qdfm::train {

// ---------------------------------------------------------------------------
// Guidance weights: self-normalized exponential tilting of scalarized values
// across a set of candidate endpoints. beta_hat == 0 is exactly uniform.

inline std::vector<double> guidance_weights(std::span<const double> q_scalars,
                                            double beta_hat) {
  if (q_scalars.empty()) throw std::invalid_argument("guidance_weights: no candidates");
  if (!(beta_hat >= 0.0))
    throw std::invalid_argument("guidance_weights: beta_hat must be >= 0");
  const std::size_t m = q_scalars.size();
  std::vector<double> w(m);
  if (beta_hat == 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(m));
    return w;
  }
  double top = -std::numeric_limits<double>::infinity();
  for (double q : q_scalars) {
    if (!std::isfinite(q)) throw std::invalid_argument("guidance_weights: non-finite value");
    top = std::max(top, q);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    w[j] = std::exp(beta_hat * (q_scalars[j] - top));
    sum += w[j];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Closed-form tilted target: pi(a) proportional to mu(a) * exp(beta * q(a)).
inline std::vector<double> boltzmann_exact(std::span<const double> mu,
                                           std::span<const double> q, double beta) {
  if (mu.size() != q.size() || mu.empty())
    throw std::invalid_argument("boltzmann_exact: mu and q must match and be non-empty");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : q) top = std::max(top, v);
  std::vector<double> p(mu.size());
  double sum = 0.0;
  for (std::size_t a = 0; a < mu.size(); ++a) {
    if (!(mu[a] >= 0.0)) throw std::invalid_argument("boltzmann_exact: mu entries must be >= 0");
    p[a] = mu[a] * std::exp(beta * (q[a] - top));
    sum += p[a];
  }
  if (!(sum > 0.0)) throw std::invalid_argument("boltzmann_exact: zero total mass");
  for (double& v : p) v /= sum;
  return p;
}

// Scalarized action value used for guidance: (encoded state, action,
// preference) -> scalar.
using ScalarQ =
    std::function<double(std::span<const double>, int, std::span<const double>)>;

// ---------------------------------------------------------------------------
// The flow-matching step engine, shared verbatim between the single-agent
// and the factored multi-agent models. A Model exposes:
//   agent_dims()               per-agent action arities
//   eval(s, w, t, coords, g)   packed input, raw outputs, projected column
//   backprop(g, eval, cgrad)   accumulate parameter gradients
// The G == 1 instantiation and the multi-agent one therefore consume
// identical randomness and run identical arithmetic per coordinate.

struct ColumnEval {
  std::vector<double> input;
  std::vector<double> raw;
  std::vector<double> col;
  int current = 0;  // action coordinate the column was evaluated at
};

// One candidate endpoint for an element: path start, path end, and the
// guidance weight attached to the end.
struct PathTuple {
  int a0;
  int a1;
  double weight;
};

template <class Model>
double fm_tuple_step(Model& model, std::span<const double> state,
                     std::span<const double> omega, std::span<const PathTuple> tuples,
                     double inv_batch, Rng& rng) {
  const std::span<const int> dims = model.agent_dims();
  const int n_agents = static_cast<int>(dims.size());
  double loss = 0.0;
  std::vector<int> coords(n_agents);
  std::vector<double> col_grad;
  for (const PathTuple& tuple : tuples) {
    const double t = flow::clamp_time(rng.uniform());
    const std::vector<int> c0 = joint_to_coords(dims, tuple.a0);
    const std::vector<int> c1 = joint_to_coords(dims, tuple.a1);
    // Coordinatewise interpolant sample: each coordinate has flipped to its
    // endpoint independently with probability t.
    for (int g = 0; g < n_agents; ++g)
      coords[g] = rng.uniform() < t ? c1[g] : c0[g];
    for (int g = 0; g < n_agents; ++g) {
      ColumnEval eval = model.eval(state, omega, t, coords, g);
      flow::ConditioningZ z{state, omega, c0[g], c1[g]};
      const std::vector<double> target = flow::target_rate_column(z, t, coords[g], dims[g]);
      col_grad.assign(target.size(), 0.0);
      double sq = 0.0;
      for (std::size_t b = 0; b < target.size(); ++b) {
        const double r = eval.col[b] - target[b];
        sq += r * r;
        col_grad[b] = 2.0 * tuple.weight * inv_batch * r;
      }
      loss += tuple.weight * sq;
      model.backprop(g, eval, col_grad);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Single-agent model: one rate network over the whole action set.

struct SingleAgentModel {
  flow::RateField field;
  std::vector<double> grad;
  std::array<int, 1> dims_storage{};

  static SingleAgentModel create(int state_dim, int n_objectives, int n_actions,
                                 const std::vector<int>& hidden, Rng& rng) {
    SingleAgentModel m{flow::RateField::create(state_dim, n_objectives, n_actions, hidden, rng),
                       {},
                       {n_actions}};
    m.grad.assign(m.field.network.parameter_count(), 0.0);
    return m;
  }

  std::span<const int> agent_dims() const { return dims_storage; }
  void zero_grads() { std::fill(grad.begin(), grad.end(), 0.0); }

  ColumnEval eval(std::span<const double> state, std::span<const double> omega, double t,
                  std::span<const int> coords, int) const {
    ColumnEval e;
    e.input = flow::pack_rate_input(state, omega, t, dims_storage, coords);
    e.raw = field.network.forward(e.input);
    e.col = flow::project_to_valid_rates(e.raw, coords[0]);
    e.current = coords[0];
    return e;
  }

  void backprop(int, const ColumnEval& e, std::span<const double> col_grad) {
    std::vector<double> raw_grad(e.raw.size(), 0.0);
    flow::project_backward(e.raw, e.current, col_grad, raw_grad);
    field.network.backward(e.input, raw_grad, grad);
  }

  std::vector<net::AdamState> make_optimizers(double lr) const {
    return {net::AdamState(field.network.parameter_count(), lr)};
  }
  void apply(std::vector<net::AdamState>& opts) {
    net::apply_gradients(field.network, opts.at(0), grad);
  }

  int simulate(std::span<const double> state, std::span<const double> omega, int a0,
               int steps, Rng& rng, flow::StepCounters& counters) const {
    return flow::euler_simulate(field, state, omega, a0, steps, rng, &counters, false);
  }
};

// ---------------------------------------------------------------------------
// Training configuration for the three-phase procedure.

struct TrainConfig {
  int warmup_steps = 1000;    // phase 1: behavior-cloning flow matching
  int critic_steps = 1000;    // phase 2: vector-valued soft Bellman regression
  int guided_steps = 1000;    // phase 3: value-weighted flow matching
  int batch_size = 32;
  int n_endpoints = 8;        // candidate endpoints per element in phase 3
  int endpoint_renewal = 50;  // steps between endpoint-cache refreshes
  int sampler_steps = 20;     // Euler grid used when simulating endpoints
  double beta_hat = 5.0;      // guidance inverse temperature
  double gamma = 0.95;
  double lr_flow = 2e-3;
  double lr_critic = 1e-3;
  std::vector<int> hidden_flow{64, 64};
  std::vector<int> hidden_critic{64, 64};
  std::uint64_t seed = 1;

  void validate() const {
    if (warmup_steps < 0 || critic_steps < 0 || guided_steps < 0)
      throw std::invalid_argument("config: step counts must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (n_endpoints < 1) throw std::invalid_argument("config: n_endpoints must be >= 1");
    if (endpoint_renewal < 1)
      throw std::invalid_argument("config: endpoint_renewal must be >= 1");
    if (sampler_steps < 1) throw std::invalid_argument("config: sampler_steps must be >= 1");
    if (!(beta_hat >= 0.0)) throw std::invalid_argument("config: beta_hat must be >= 0");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("config: gamma must be in (0, 1)");
    if (!(lr_flow > 0.0) || !(lr_critic > 0.0))
      throw std::invalid_argument("config: learning rates must be > 0");
  }
};

struct LogRow {
  int phase;
  int step;    // 1-based within the phase
  double loss;
  double wall_ms;  // informational; excluded from determinism guarantees
};

struct TrainResult {
  std::vector<LogRow> log;
  flow::StepCounters sim_counters{};  // clamping during endpoint simulation
};

using PhaseCallback = std::function<void(int completed_phase)>;

// ---------------------------------------------------------------------------
// Three-phase training. Phases consume independent named substreams of the
// configured seed, so a run resumed from a phase boundary replays the
// remaining phases bit-identically.

namespace detail {

inline double now_ms() {
  return static_cast<double>(std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
                                 .count()) /
         1000.0;
}

struct EncodedStates {
  // Encodings are invariant per state id; cache them for the run.
  const envs::DiscreteEnv* env;
  mutable std::unordered_map<int, std::vector<double>> cache;
  std::span<const double> operator()(int s) const {
    auto it = cache.find(s);
    if (it == cache.end()) it = cache.emplace(s, env->encode(s)).first;
    return it->second;
  }
};

}  // namespace detail

template <class Model>
TrainResult train_model(const envs::DiscreteEnv& env, const data::OfflineDataset& ds,
                        const TrainConfig& cfg, Model& model, critic::VectorCritic& crit,
                        const ScalarQ* q_override = nullptr,
                        const PhaseCallback& on_phase = {}, int start_phase = 0) {
  cfg.validate();
  if (ds.transitions.empty()) throw std::invalid_argument("train: empty dataset");
  if (ds.n_objectives != env.n_objectives)
    throw std::invalid_argument("train: dataset/environment objective mismatch");
  if (ds.agent_dims != env.agent_dims)
    throw std::invalid_argument("train: dataset/environment action-space mismatch");

  const data::BehaviorModel behavior = data::fit_behavior(ds);
  const detail::EncodedStates enc{&env, {}};
  const int n_actions = env.n_actions();
  const int n_objectives = env.n_objectives;
  const std::size_t n_transitions = ds.transitions.size();
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
  const double t_start = detail::now_ms();

  TrainResult result;

  // Phase 1: unweighted conditional flow matching onto the behavior policy.
  if (start_phase < 1) {
    Rng rng = Rng::stream(cfg.seed, "phase1");
    auto opts = model.make_optimizers(cfg.lr_flow);
    std::array<PathTuple, 1> tuple{};
    for (int k = 1; k <= cfg.warmup_steps; ++k) {
      model.zero_grads();
      double loss = 0.0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& tr = ds.transitions[rng.uniform_below(n_transitions)];
        const std::vector<double> omega = rng.simplex(n_objectives);
        tuple[0] = {static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n_actions))),
                    behavior.sample(tr.state, rng), 1.0};
        loss += fm_tuple_step(model, enc(tr.state), omega, tuple, inv_batch, rng);
      }
      model.apply(opts);
      result.log.push_back({1, k, loss * inv_batch, detail::now_ms() - t_start});
    }
    if (on_phase) on_phase(1);
  }

  // Phase 2: semi-gradient regression of the vector critic onto soft
  // Bellman targets; the bootstrap support comes from actions the behavior
  // policy was actually seen to take at the next state.
  if (start_phase < 2) {
    Rng rng = Rng::stream(cfg.seed, "phase2");
    net::AdamState opt(crit.network.parameter_count(), cfg.lr_critic);
    for (int k = 1; k <= cfg.critic_steps; ++k) {
      std::vector<std::vector<double>> omegas(cfg.batch_size);
      std::vector<std::vector<int>> supports(cfg.batch_size);
      std::vector<critic::CriticSample> batch;
      batch.reserve(cfg.batch_size);
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& tr = ds.transitions[rng.uniform_below(n_transitions)];
        omegas[b] = rng.simplex(n_objectives);
        supports[b] = behavior.support(tr.next_state);
        batch.push_back({enc(tr.state), tr.action, tr.reward, enc(tr.next_state), tr.done,
                         omegas[b], supports[b]});
      }
      const double loss = critic::critic_update(crit, opt, batch);
      result.log.push_back({2, k, loss, detail::now_ms() - t_start});
    }
    if (on_phase) on_phase(2);
  }

  // Phase 3: value-weighted conditional flow matching. Candidate endpoints
  // are simulated from the current model per state and reused for a window
  // of steps together with the preference they were drawn under.
  if (start_phase < 3) {
    Rng rng = Rng::stream(cfg.seed, "phase3");
    const ScalarQ learned = [&crit](std::span<const double> s, int a,
                                    std::span<const double> w) {
      return crit.scalarize(s, a, w);
    };
    const ScalarQ& q_fn = q_override ? *q_override : learned;

    struct CacheEntry {
      std::vector<double> omega;
      std::vector<PathTuple> tuples;  // a0 filled per element
    };
    std::unordered_map<int, CacheEntry> cache;
    auto opts = model.make_optimizers(cfg.lr_flow);
    std::vector<double> q_vals(cfg.n_endpoints);

    for (int k = 1; k <= cfg.guided_steps; ++k) {
      if ((k - 1) % cfg.endpoint_renewal == 0) cache.clear();
      model.zero_grads();
      double loss = 0.0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& tr = ds.transitions[rng.uniform_below(n_transitions)];
        auto it = cache.find(tr.state);
        if (it == cache.end()) {
          CacheEntry entry;
          entry.omega = rng.simplex(n_objectives);
          entry.tuples.resize(cfg.n_endpoints);
          const std::span<const double> s_enc = enc(tr.state);
          for (int j = 0; j < cfg.n_endpoints; ++j) {
            const int a0 = behavior.sample(tr.state, rng);
            const int a1 = model.simulate(s_enc, entry.omega, a0, cfg.sampler_steps, rng,
                                          result.sim_counters);
            entry.tuples[j] = {0, a1, 0.0};
            q_vals[j] = q_fn(s_enc, a1, entry.omega);
          }
          const std::vector<double> w = guidance_weights(q_vals, cfg.beta_hat);
          for (int j = 0; j < cfg.n_endpoints; ++j) entry.tuples[j].weight = w[j];
          it = cache.emplace(tr.state, std::move(entry)).first;
        }
        std::vector<PathTuple> tuples = it->second.tuples;
        for (PathTuple& t : tuples) t.a0 = tr.action;
        loss += fm_tuple_step(model, enc(tr.state), it->second.omega, tuples, inv_batch, rng);
      }
      model.apply(opts);
      result.log.push_back({3, k, loss * inv_batch, detail::now_ms() - t_start});
    }
    if (on_phase) on_phase(3);
  }

  return result;
}

// Convenience wrapper for the single-agent case: initializes the model and
// critic from named substreams and runs all phases.
struct SingleAgentRun {
  SingleAgentModel model;
  critic::VectorCritic critic;
  data::BehaviorModel behavior;
  TrainResult result;
};

inline SingleAgentRun train_single(const envs::DiscreteEnv& env,
                                   const data::OfflineDataset& ds, const TrainConfig& cfg,
                                   const ScalarQ* q_override = nullptr,
                                   const PhaseCallback& on_phase = {}) {
  Rng flow_rng = Rng::stream(cfg.seed, "flow-init");
  Rng critic_rng = Rng::stream(cfg.seed, "critic-init");
  SingleAgentRun run{
      SingleAgentModel::create(env.state_dim, env.n_objectives, env.n_actions(),
                               cfg.hidden_flow, flow_rng),
      critic::VectorCritic::create(env.state_dim, env.n_objectives, env.agent_dims,
                                   cfg.hidden_critic, cfg.gamma, std::max(cfg.beta_hat, 1e-12),
                                   critic_rng),
      {},
      {}};
  run.result = train_model(env, ds, cfg, run.model, run.critic, q_override, on_phase);
  run.behavior = data::fit_behavior(ds);
  return run;
}

// ---------------------------------------------------------------------------
// Terminal law of the learned chain: start from the behavior policy at the
// given state and integrate the rate model to t = 1.

template <class Model>
std::vector<double> empirical_terminal_pmf(const Model& model,
                                           const data::BehaviorModel& behavior, int state_id,
                                           std::span<const double> state_enc,
                                           std::span<const double> omega, int steps, int sims,
                                           Rng& rng, flow::StepCounters& counters) {
  if (sims < 1) throw std::invalid_argument("empirical_terminal_pmf: sims must be >= 1");
  std::vector<double> pmf(behavior.n_actions, 0.0);
  for (int i = 0; i < sims; ++i) {
    const int a0 = behavior.sample(state_id, rng);
    const int a1 = model.simulate(state_enc, omega, a0, steps, rng, counters);
    pmf.at(a1) += 1.0;
  }
  for (double& v : pmf) v /= static_cast<double>(sims);
  return pmf;
}

// ---------------------------------------------------------------------------
// Gradient-equivalence diagnostic: on a fixed one-state problem, the
// parameter gradient of the endpoint-weighted conditional objective must
// match the gradient of the marginal objective built from the same weights,
// as long as the weights do not depend on the parameters. A deliberately
// parameter-dependent weighting must break the identity.

struct GradEquivalenceReport {
  double weighted_gap = 0.0;     // fixed positive weights
  double unweighted_gap = 0.0;   // all weights 1
  double control_gap = 0.0;      // weights computed from the network itself
};

namespace detail {

inline double relative_gap(std::span<const double> a, std::span<const double> b) {
  double top = 0.0, scale = 1e-30;
  for (std::size_t i = 0; i < a.size(); ++i) {
    top = std::max(top, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return top / scale;
}

}  // namespace detail

inline GradEquivalenceReport gradient_equivalence_check(std::uint64_t seed, int nodes = 16) {
  if (nodes < 4)
    throw std::invalid_argument(
        "gradient_equivalence_check: need at least 4 quadrature nodes for a meaningful "
        "comparison");
  constexpr int kActions = 3;
  const std::vector<double> state{1.0};
  const std::vector<double> omega{0.6, 0.4};
  const std::vector<double> p0(kActions, 1.0 / kActions);
  const std::vector<double> p1{0.5, 0.3, 0.2};
  const std::vector<double> q{0.7, -0.2, 0.4};

  Rng rng = Rng::stream(seed, "grad-check");
  flow::RateField field =
      flow::RateField::create(1, 2, kActions, std::vector<int>{16}, rng);
  const std::size_t n_params = field.network.parameter_count();

  // Midpoint quadrature over the clamped time interval.
  std::vector<double> t_nodes(nodes);
  const double t_hi = 1.0 - flow::kTimeEps;
  for (int i = 0; i < nodes; ++i)
    t_nodes[i] = t_hi * (static_cast<double>(i) + 0.5) / static_cast<double>(nodes);
  const double node_w = t_hi / static_cast<double>(nodes);

  auto column_at = [&](double t, int current) {
    return field.rate_column(state, omega, t, current);
  };
  auto input_at = [&](double t, int current) {
    return field.pack_input(state, omega, t, current);
  };
  auto cond_target = [&](double t, int current, int a1) {
    flow::ConditioningZ z{state, omega, current, a1};
    return flow::target_rate_column(z, t, current, kActions);
  };
  // Probability that the interpolant sits at `a` given the endpoints.
  auto occupancy = [&](int a, int a0, int a1, double t) {
    double p = 0.0;
    if (a == a1) p += t;
    if (a == a0) p += 1.0 - t;
    return p;
  };

  auto backprop_column = [&](double t, int current, std::span<const double> col_grad,
                             std::span<double> grad) {
    const std::vector<double> input = input_at(t, current);
    const std::vector<double> raw = field.network.forward(input);
    std::vector<double> raw_grad(raw.size(), 0.0);
    flow::project_backward(raw, current, col_grad, raw_grad);
    field.network.backward(input, raw_grad, grad);
  };

  // Conditional-side gradient: every (a0, a1, t, a) cell backpropagates its
  // own residual separately.
  auto conditional_grad = [&](std::span<const double> w) {
    std::vector<double> grad(n_params, 0.0);
    for (double t : t_nodes)
      for (int a = 0; a < kActions; ++a) {
        const std::vector<double> col = column_at(t, a);
        for (int a0 = 0; a0 < kActions; ++a0)
          for (int a1 = 0; a1 < kActions; ++a1) {
            const double mass =
                node_w * p0[a0] * p1[a1] * w[a1] * occupancy(a, a0, a1, t);
            if (mass == 0.0) continue;
            const std::vector<double> target = cond_target(t, a, a1);
            std::vector<double> col_grad(kActions);
            for (int b = 0; b < kActions; ++b)
              col_grad[b] = 2.0 * mass * (col[b] - target[b]);
            backprop_column(t, a, col_grad, grad);
          }
      }
    return grad;
  };

  // Marginal-side gradient: per (t, a), regress once against the
  // weight-tilted posterior mean of the conditional targets.
  auto marginal_grad = [&](std::span<const double> w) {
    std::vector<double> grad(n_params, 0.0);
    for (double t : t_nodes)
      for (int a = 0; a < kActions; ++a) {
        double mass = 0.0;
        std::vector<double> mean_target(kActions, 0.0);
        for (int a0 = 0; a0 < kActions; ++a0)
          for (int a1 = 0; a1 < kActions; ++a1) {
            const double m = p0[a0] * p1[a1] * w[a1] * occupancy(a, a0, a1, t);
            if (m == 0.0) continue;
            const std::vector<double> target = cond_target(t, a, a1);
            for (int b = 0; b < kActions; ++b) mean_target[b] += m * target[b];
            mass += m;
          }
        if (mass == 0.0) continue;
        for (double& v : mean_target) v /= mass;
        const std::vector<double> col = column_at(t, a);
        std::vector<double> col_grad(kActions);
        for (int b = 0; b < kActions; ++b)
          col_grad[b] = 2.0 * node_w * mass * (col[b] - mean_target[b]);
        backprop_column(t, a, col_grad, grad);
      }
    return grad;
  };

  GradEquivalenceReport report;
  const std::vector<double> w_fixed = [&] {
    std::vector<double> w(kActions);
    for (int a = 0; a < kActions; ++a) w[a] = std::exp(1.5 * q[a]);
    return w;
  }();
  const std::vector<double> w_unit(kActions, 1.0);
  report.weighted_gap = detail::relative_gap(conditional_grad(w_fixed), marginal_grad(w_fixed));
  report.unweighted_gap = detail::relative_gap(conditional_grad(w_unit), marginal_grad(w_unit));

  // Negative control: weights read off the network itself. The analytic
  // gradient that treats them as constants must disagree with the true
  // (finite-difference) gradient of the full objective.
  auto theta_weights = [&]() {
    const std::vector<double> probe = field.network.forward(input_at(0.35, 0));
    std::vector<double> w(kActions);
    for (int a = 0; a < kActions; ++a) w[a] = 1.0 + 1.0 / (1.0 + std::exp(-probe[a]));
    return w;
  };
  auto full_loss = [&]() {
    const std::vector<double> w = theta_weights();
    double loss = 0.0;
    for (double t : t_nodes)
      for (int a = 0; a < kActions; ++a) {
        const std::vector<double> col = column_at(t, a);
        for (int a0 = 0; a0 < kActions; ++a0)
          for (int a1 = 0; a1 < kActions; ++a1) {
            const double mass =
                node_w * p0[a0] * p1[a1] * w[a1] * occupancy(a, a0, a1, t);
            if (mass == 0.0) continue;
            const std::vector<double> target = cond_target(t, a, a1);
            double sq = 0.0;
            for (int b = 0; b < kActions; ++b)
              sq += (col[b] - target[b]) * (col[b] - target[b]);
            loss += mass * sq;
          }
      }
    return loss;
  };
  std::vector<double> frozen = conditional_grad(theta_weights());
  std::vector<double> fd(n_params, 0.0);
  const std::vector<double> params = field.network.flatten();
  const double step = 1e-5;
  for (std::size_t i = 0; i < n_params; ++i) {
    std::vector<double> bumped = params;
    bumped[i] = params[i] + step;
    field.network.unflatten(bumped);
    const double up = full_loss();
    bumped[i] = params[i] - step;
    field.network.unflatten(bumped);
    const double down = full_loss();
    fd[i] = (up - down) / (2.0 * step);
  }
  field.network.unflatten(params);
  report.control_gap = detail::relative_gap(frozen, fd);
  return report;
}

}  // namespace qdfm::train
