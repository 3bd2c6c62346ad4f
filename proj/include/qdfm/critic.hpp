#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "qdfm/action_space.hpp"
#include "qdfm/net.hpp"

namespace qdfm::critic {

// Vector-valued action critic: a dense net mapping (encoded state, one-hot
// action) to one value per objective. Preferences scalarize the output
// outside the network, so a single critic serves every preference vector.
//
// The action block is the concatenated per-agent one-hot encoding; for
// single-agent problems pass agent_dims = {n_actions}. Multi-agent problems
// share this same centralized critic, conditioned on the full joint action.
struct VectorCritic {
  net::DenseNet network;
  int state_dim;
  int n_objectives;
  std::vector<int> agent_dims;
  double gamma;     // discount, in (0, 1)
  double beta_hat;  // inverse temperature of the in-support soft value, > 0

  static VectorCritic create(int state_dim, int n_objectives,
                             std::vector<int> agent_dims, const std::vector<int>& hidden,
                             double gamma, double beta_hat, Rng& rng) {
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("VectorCritic: gamma must lie in (0, 1)");
    if (!(beta_hat > 0.0))
      throw std::invalid_argument("VectorCritic: beta_hat must be > 0");
    if (n_objectives < 1)
      throw std::invalid_argument("VectorCritic: need at least one objective");
    std::vector<int> widths;
    widths.push_back(state_dim + onehot_width(agent_dims));
    for (int h : hidden) widths.push_back(h);
    widths.push_back(n_objectives);
    return VectorCritic{net::DenseNet::random_init(widths, rng), state_dim, n_objectives,
                        std::move(agent_dims), gamma, beta_hat};
  }

  int n_actions() const { return joint_cardinality(agent_dims); }

  std::vector<double> pack_input(std::span<const double> state, int action) const {
    if (static_cast<int>(state.size()) != state_dim)
      throw std::invalid_argument("VectorCritic: state encoding size mismatch");
    auto coords = joint_to_coords(agent_dims, action);
    std::vector<double> input(state.begin(), state.end());
    std::size_t base = input.size();
    input.resize(base + onehot_width(agent_dims), 0.0);
    for (std::size_t g = 0; g < agent_dims.size(); ++g) {
      input[base + coords[g]] = 1.0;
      base += agent_dims[g];
    }
    return input;
  }

  std::vector<double> q_vector(std::span<const double> state, int action) const {
    return network.forward(pack_input(state, action));
  }

  double scalarize(std::span<const double> state, int action,
                   std::span<const double> omega) const {
    if (static_cast<int>(omega.size()) != n_objectives)
      throw std::invalid_argument("VectorCritic: preference size mismatch");
    auto q = q_vector(state, action);
    double v = 0.0;
    for (int k = 0; k < n_objectives; ++k) v += omega[k] * q[k];
    return v;
  }
};

// Softmax-weighted average of scalar values: sum_j exp(beta q_j) q_j /
// sum_j exp(beta q_j), computed with max subtraction. At beta = 0 this is
// the plain mean; as beta grows it approaches the max. Duplicated entries
// count once per occurrence.
inline double soft_value_from_q(std::span<const double> q, double beta) {
  if (q.empty()) throw std::invalid_argument("soft_value_from_q: empty value set");
  if (!(beta >= 0.0)) throw std::invalid_argument("soft_value_from_q: beta must be >= 0");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : q) m = std::max(m, beta * v);
  double num = 0.0, den = 0.0;
  for (double v : q) {
    double e = std::exp(beta * v - m);
    num += e * v;
    den += e;
  }
  return num / den;
}

// In-support soft state value: scalarized Q over a sampled support set of
// actions, softmax-weighted at the critic's inverse temperature.
inline double soft_value(const VectorCritic& critic, std::span<const double> state,
                         std::span<const int> support, std::span<const double> omega) {
  if (support.empty()) throw std::invalid_argument("soft_value: empty support set");
  std::vector<double> q(support.size());
  for (std::size_t j = 0; j < support.size(); ++j)
    q[j] = critic.scalarize(state, support[j], omega);
  return soft_value_from_q(q, critic.beta_hat);
}

// Scalarized one-step regression target. Terminal transitions bootstrap
// nothing: y = <omega, r>.
inline double bellman_target_from_value(std::span<const double> reward,
                                        std::span<const double> omega, double gamma,
                                        double next_value, bool done) {
  if (reward.size() != omega.size())
    throw std::invalid_argument("bellman_target: reward/preference size mismatch");
  double y = 0.0;
  for (std::size_t k = 0; k < reward.size(); ++k) y += omega[k] * reward[k];
  return done ? y : y + gamma * next_value;
}

struct CriticSample {
  std::span<const double> state;       // encoded s
  int action;                          // flat joint action index
  std::span<const double> reward;      // one entry per objective
  std::span<const double> next_state;  // encoded s'
  bool done;
  std::span<const double> omega;       // preference used for this sample
  std::span<const int> support;        // support actions at s' for the soft value
};

inline double bellman_target(const VectorCritic& critic, const CriticSample& s) {
  double v = s.done ? 0.0 : soft_value(critic, s.next_state, s.support, s.omega);
  return bellman_target_from_value(s.reward, s.omega, critic.gamma, v, s.done);
}

// Mean squared error of scalarized predictions against semi-gradient targets
// (targets are computed first and treated as constants; no gradient flows
// through the bootstrap term, and there is no separate target network).
// Accumulates the parameter gradient of the mean loss into grad.
inline double critic_loss_and_grad(const VectorCritic& critic,
                                   std::span<const CriticSample> batch,
                                   std::span<double> grad) {
  if (batch.empty()) throw std::invalid_argument("critic update: empty batch");
  std::vector<double> targets(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    targets[i] = bellman_target(critic, batch[i]);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  std::vector<double> out_grad(critic.n_objectives);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto input = critic.pack_input(batch[i].state, batch[i].action);
    auto q = critic.network.forward(input);
    double pred = 0.0;
    for (int k = 0; k < critic.n_objectives; ++k) pred += batch[i].omega[k] * q[k];
    const double err = pred - targets[i];
    loss += err * err * inv_b;
    for (int k = 0; k < critic.n_objectives; ++k)
      out_grad[k] = 2.0 * err * inv_b * batch[i].omega[k];
    critic.network.backward(input, out_grad, grad);
  }
  return loss;
}

// One optimizer step; returns the pre-step loss.
inline double critic_update(VectorCritic& critic, net::AdamState& opt,
                            std::span<const CriticSample> batch) {
  std::vector<double> grad(critic.network.parameter_count(), 0.0);
  double loss = critic_loss_and_grad(critic, batch, grad);
  net::apply_gradients(critic.network, opt, grad);
  return loss;
}

}  // namespace qdfm::critic
