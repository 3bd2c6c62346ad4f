#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdfm/action_space.hpp"
#include "qdfm/flow.hpp"
#include "qdfm/net.hpp"
#include "qdfm/rng.hpp"
#include "qdfm/train.hpp"

namespace qdfm::marl {

// Factored rate model: one network per agent, each emitting the rate column
// for its own coordinate while conditioning on the full joint action (all
// agents' one-hots are in the input). Only one coordinate can change per
// Euler step, so the joint chain stays a valid CTMC on the product space.
//
// With a single agent this reduces to the single-agent model: the packed
// input, the network shapes, the projection, and the randomness consumed per
// training step are identical, which the tests pin down bit for bit.

struct FactoredRateField {
  std::vector<net::DenseNet> nets;  // one per agent
  int state_dim = 0;
  int n_objectives = 0;
  std::vector<int> agent_dims;

  static FactoredRateField create(int state_dim, int n_objectives,
                                  std::vector<int> agent_dims, const std::vector<int>& hidden,
                                  Rng& rng) {
    validate_agent_dims(agent_dims);
    if (state_dim < 1) throw std::invalid_argument("FactoredRateField: state_dim must be >= 1");
    if (n_objectives < 1)
      throw std::invalid_argument("FactoredRateField: n_objectives must be >= 1");
    FactoredRateField f;
    f.state_dim = state_dim;
    f.n_objectives = n_objectives;
    f.agent_dims = std::move(agent_dims);
    const int onehot = onehot_width(f.agent_dims);
    for (int g = 0; g < static_cast<int>(f.agent_dims.size()); ++g) {
      std::vector<int> widths;
      widths.push_back(state_dim + n_objectives + flow::kTimeFeatureDim + onehot);
      for (int h : hidden) widths.push_back(h);
      widths.push_back(f.agent_dims[g]);
      f.nets.push_back(net::DenseNet::random_init(widths, rng));
    }
    return f;
  }

  int n_agents() const { return static_cast<int>(agent_dims.size()); }

  std::vector<double> pack_input(std::span<const double> state,
                                 std::span<const double> omega, double t,
                                 std::span<const int> coords) const {
    return flow::pack_rate_input(state, omega, flow::clamp_time(t), agent_dims, coords);
  }

  // Projected rate column for agent g's coordinate at the given joint action.
  std::vector<double> rate_column(std::span<const double> state,
                                  std::span<const double> omega, double t,
                                  std::span<const int> coords, int g) const {
    return flow::project_to_valid_rates(nets.at(g).forward(pack_input(state, omega, t, coords)),
                                        coords[g]);
  }
};

// Euler simulation of the factored chain from a flat joint action.
inline int factored_simulate(const FactoredRateField& field, std::span<const double> state,
                             std::span<const double> omega, int a0_joint, int steps, Rng& rng,
                             flow::StepCounters& counters, bool strict = false) {
  if (steps <= 0) throw std::invalid_argument("factored_simulate: steps must be > 0");
  std::vector<int> coords = joint_to_coords(field.agent_dims, a0_joint);
  const double h = 1.0 / static_cast<double>(steps);
  const int n_agents = field.n_agents();
  std::vector<std::vector<double>> columns(n_agents);
  for (int n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) * h;
    for (int g = 0; g < n_agents; ++g)
      columns[g] = field.rate_column(state, omega, t, coords, g);
    flow::euler_step_inplace(columns, field.agent_dims, coords, h, rng, &counters, strict);
  }
  return coords_to_joint(field.agent_dims, coords);
}

// Adapter satisfying the training engine's Model interface.
struct FactoredModel {
  FactoredRateField field;
  std::vector<std::vector<double>> grads;  // one buffer per agent network

  static FactoredModel create(int state_dim, int n_objectives, std::vector<int> agent_dims,
                              const std::vector<int>& hidden, Rng& rng) {
    FactoredModel m{FactoredRateField::create(state_dim, n_objectives, std::move(agent_dims),
                                              hidden, rng),
                    {}};
    for (const auto& net : m.field.nets)
      m.grads.emplace_back(net.parameter_count(), 0.0);
    return m;
  }

  std::span<const int> agent_dims() const { return field.agent_dims; }

  void zero_grads() {
    for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
  }

  train::ColumnEval eval(std::span<const double> state, std::span<const double> omega,
                         double t, std::span<const int> coords, int g) const {
    train::ColumnEval e;
    e.input = flow::pack_rate_input(state, omega, t, field.agent_dims, coords);
    e.raw = field.nets.at(g).forward(e.input);
    e.col = flow::project_to_valid_rates(e.raw, coords[g]);
    e.current = coords[g];
    return e;
  }

  void backprop(int g, const train::ColumnEval& e, std::span<const double> col_grad) {
    std::vector<double> raw_grad(e.raw.size(), 0.0);
    flow::project_backward(e.raw, e.current, col_grad, raw_grad);
    field.nets.at(g).backward(e.input, raw_grad, grads.at(g));
  }

  std::vector<net::AdamState> make_optimizers(double lr) const {
    std::vector<net::AdamState> opts;
    for (const auto& net : field.nets) opts.emplace_back(net.parameter_count(), lr);
    return opts;
  }

  void apply(std::vector<net::AdamState>& opts) {
    for (std::size_t g = 0; g < field.nets.size(); ++g)
      net::apply_gradients(field.nets[g], opts.at(g), grads[g]);
  }

  int simulate(std::span<const double> state, std::span<const double> omega, int a0,
               int steps, Rng& rng, flow::StepCounters& counters) const {
    return factored_simulate(field, state, omega, a0, steps, rng, counters, false);
  }
};

// Convenience wrapper mirroring train_single for factored action spaces.
struct FactoredRun {
  FactoredModel model;
  critic::VectorCritic critic;  // centralized: conditions on the joint action
  data::BehaviorModel behavior;
  train::TrainResult result;
};

inline FactoredRun train_factored(const envs::DiscreteEnv& env, const data::OfflineDataset& ds,
                                  const train::TrainConfig& cfg,
                                  const train::ScalarQ* q_override = nullptr,
                                  const train::PhaseCallback& on_phase = {}) {
  Rng flow_rng = Rng::stream(cfg.seed, "flow-init");
  Rng critic_rng = Rng::stream(cfg.seed, "critic-init");
  FactoredRun run{FactoredModel::create(env.state_dim, env.n_objectives, env.agent_dims,
                                        cfg.hidden_flow, flow_rng),
                  critic::VectorCritic::create(env.state_dim, env.n_objectives, env.agent_dims,
                                               cfg.hidden_critic, cfg.gamma,
                                               std::max(cfg.beta_hat, 1e-12), critic_rng),
                  {},
                  {}};
  run.result = train::train_model(env, ds, cfg, run.model, run.critic, q_override, on_phase);
  run.behavior = data::fit_behavior(ds);
  return run;
}

}  // namespace qdfm::marl
