#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdfm/net.hpp"
#include "qdfm/rng.hpp"

// Core of the generative model: a continuous-time Markov chain over a finite
// action set on t in [0, 1], built from per-sample conditioning
// (state, preference, chain endpoints). The chain's rate columns follow the
// convention u[b] = rate of jumping from the current action to b (b != cur),
// with u[cur] = -sum of the off-diagonal entries, so every column sums to
// zero and off-diagonals are nonnegative.
namespace qdfm::flow {

// Times are clamped to [0, 1 - kTimeEps] wherever 1/(1-t) appears, which
// bounds target rate magnitudes at 1/kTimeEps.
inline constexpr double kTimeEps = 1e-3;

inline double clamp_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("time must lie in [0, 1]");
  return std::min(t, 1.0 - kTimeEps);
}

// Per-sample conditioning: encoded state, preference vector, and the chain's
// start/end actions. Holds views only; the caller owns the storage.
struct ConditioningZ {
  std::span<const double> state;
  std::span<const double> omega;
  int start_action = 0;
  int end_action = 0;
};

inline void validate_simplex(std::span<const double> omega, double tol = 1e-9) {
  double sum = 0.0;
  for (double w : omega) {
    if (!(w >= 0.0)) throw std::invalid_argument("preference entries must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > tol)
    throw std::invalid_argument("preference vector must sum to 1");
}

// ---------------------------------------------------------------------------
// Conditional path: a two-point mixture that moves mass linearly from the
// start action to the end action as t goes 0 -> 1.

inline std::vector<double> conditional_path_prob(const ConditioningZ& z, double t,
                                                 int n_actions) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("time must lie in [0, 1]");
  if (z.start_action < 0 || z.start_action >= n_actions ||
      z.end_action < 0 || z.end_action >= n_actions)
    throw std::invalid_argument("conditioning endpoint out of range");
  std::vector<double> p(n_actions, 0.0);
  p[z.start_action] += 1.0 - t;
  p[z.end_action] += t;
  return p;
}

inline int sample_endpoint_mixture(int start, int end, double t, Rng& rng) {
  return rng.uniform() < t ? end : start;
}

inline int sample_conditional_path(const ConditioningZ& z, double t, Rng& rng) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("time must lie in [0, 1]");
  return sample_endpoint_mixture(z.start_action, z.end_action, t, rng);
}

// Rate column that generates the mixture path: from any non-endpoint action,
// jump straight to the end action at rate 1/(1-t); the end action absorbs.
inline std::vector<double> target_rate_column(const ConditioningZ& z, double t,
                                              int current, int n_actions) {
  if (current < 0 || current >= n_actions)
    throw std::invalid_argument("current action out of range");
  std::vector<double> col(n_actions, 0.0);
  if (current == z.end_action) return col;
  double rate = 1.0 / (1.0 - clamp_time(t));
  col[z.end_action] = rate;
  col[current] = -rate;
  return col;
}

// ---------------------------------------------------------------------------
// Projection from unconstrained network outputs to a valid rate column.

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Off-diagonals are softplus of the raw entries (strictly positive, finite);
// the current action's entry is set to minus their sum. The raw entry at the
// current action is ignored.
inline std::vector<double> project_to_valid_rates(std::span<const double> raw, int current) {
  int n = static_cast<int>(raw.size());
  if (current < 0 || current >= n)
    throw std::invalid_argument("project_to_valid_rates: current action out of range");
  std::vector<double> col(n);
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    if (b == current) continue;
    col[b] = softplus(raw[b]);
    total += col[b];
  }
  col[current] = -total;
  return col;
}

// Chain rule through the projection: given dL/dcolumn, accumulate dL/draw.
// d col[b]/d raw[b] = sigmoid(raw[b]) for b != cur, and col[cur] couples as
// -sum, so the diagonal gradient flows back into every off-diagonal raw.
inline void project_backward(std::span<const double> raw, int current,
                             std::span<const double> col_grad,
                             std::span<double> raw_grad) {
  int n = static_cast<int>(raw.size());
  if (static_cast<int>(col_grad.size()) != n || static_cast<int>(raw_grad.size()) != n)
    throw std::invalid_argument("project_backward: size mismatch");
  for (int b = 0; b < n; ++b) {
    if (b == current) continue;
    raw_grad[b] += (col_grad[b] - col_grad[current]) * sigmoid(raw[b]);
  }
}

inline void validate_rate_column(std::span<const double> col, int current,
                                 double tol = 1e-9) {
  double sum = 0.0;
  for (int b = 0; b < static_cast<int>(col.size()); ++b) {
    if (b != current && col[b] < -tol)
      throw std::runtime_error("rate column has negative off-diagonal at action " +
                               std::to_string(b));
    sum += col[b];
  }
  double scale = 1.0;
  for (double v : col) scale = std::max(scale, std::abs(v));
  if (std::abs(sum) > tol * scale)
    throw std::runtime_error("rate column does not sum to zero (sum=" + std::to_string(sum) + ")");
}

// ---------------------------------------------------------------------------
// Network input packing, shared by the single-agent and factorized models:
// [ state | preference | t, 4-frequency sin/cos of t | one-hot coordinates ].

inline constexpr int kTimeFeatureDim = 9;

inline void append_time_features(std::vector<double>& input, double t) {
  input.push_back(t);
  for (int k = 0; k < 4; ++k) {
    double phase = 6.283185307179586476925286766559 * static_cast<double>(1 << k) * t;
    input.push_back(std::sin(phase));
    input.push_back(std::cos(phase));
  }
}

inline std::vector<double> pack_rate_input(std::span<const double> state,
                                           std::span<const double> omega, double t,
                                           std::span<const int> dims,
                                           std::span<const int> coords) {
  if (dims.size() != coords.size())
    throw std::invalid_argument("pack_rate_input: dims/coords size mismatch");
  int onehot = 0;
  for (std::size_t g = 0; g < dims.size(); ++g) {
    if (coords[g] < 0 || coords[g] >= dims[g])
      throw std::invalid_argument("pack_rate_input: coordinate out of range");
    onehot += dims[g];
  }
  std::vector<double> input;
  input.reserve(state.size() + omega.size() + kTimeFeatureDim + onehot);
  input.insert(input.end(), state.begin(), state.end());
  input.insert(input.end(), omega.begin(), omega.end());
  append_time_features(input, t);
  std::size_t base = input.size();
  input.resize(base + onehot, 0.0);
  for (std::size_t g = 0; g < dims.size(); ++g) {
    input[base + coords[g]] = 1.0;
    base += dims[g];
  }
  return input;
}

// Learned rate model: a dense net mapping (state, preference, time features,
// one-hot current action) to one unconstrained output per action, projected
// to a valid rate column for the current action.
struct RateField {
  net::DenseNet network;
  int state_dim;
  int n_objectives;
  int n_actions;

  static RateField create(int state_dim, int n_objectives, int n_actions,
                          const std::vector<int>& hidden, Rng& rng) {
    if (n_actions < 2) throw std::invalid_argument("RateField: need at least 2 actions");
    std::vector<int> widths;
    widths.push_back(state_dim + n_objectives + kTimeFeatureDim + n_actions);
    for (int h : hidden) widths.push_back(h);
    widths.push_back(n_actions);
    return RateField{net::DenseNet::random_init(widths, rng), state_dim, n_objectives,
                     n_actions};
  }

  std::vector<double> pack_input(std::span<const double> state,
                                 std::span<const double> omega, double t,
                                 int action) const {
    const int dims[1] = {n_actions};
    const int coords[1] = {action};
    return pack_rate_input(state, omega, clamp_time(t), dims, coords);
  }

  std::vector<double> raw_rates(std::span<const double> state,
                                std::span<const double> omega, double t,
                                int action) const {
    return network.forward(pack_input(state, omega, t, action));
  }

  std::vector<double> rate_column(std::span<const double> state,
                                  std::span<const double> omega, double t,
                                  int action) const {
    return project_to_valid_rates(raw_rates(state, omega, t, action), action);
  }
};

// ---------------------------------------------------------------------------
// Euler simulation of the chain.

struct StepCounters {
  long clamp_events = 0;  // steps where h * (total leaving rate) exceeded 1
  long steps = 0;
};

// One Euler step over a factorized action: at most one coordinate changes.
// columns[g] must be a valid rate column for agent g at the current joint
// action. Jump probabilities are h * rate, walked by inverse CDF in
// (agent-major, coordinate) order with a single uniform draw; the residual
// mass is "stay". When h * total_rate > 1 the jump distribution is rescaled
// to total probability 1 (or an error is raised in strict mode).
inline bool euler_step_inplace(std::span<const std::vector<double>> columns,
                               std::span<const int> dims, std::span<int> coords,
                               double h, Rng& rng, StepCounters* counters = nullptr,
                               bool strict = false) {
  const std::size_t n_agents = dims.size();
  if (columns.size() != n_agents || coords.size() != n_agents)
    throw std::invalid_argument("euler_step_inplace: agent count mismatch");
  double lambda = 0.0;
  for (std::size_t g = 0; g < n_agents; ++g) {
    if (static_cast<int>(columns[g].size()) != dims[g])
      throw std::invalid_argument("euler_step_inplace: column size mismatch");
    for (int b = 0; b < dims[g]; ++b) {
      if (b == coords[g]) continue;
      if (columns[g][b] < 0.0)
        throw std::runtime_error("euler_step_inplace: negative rate");
      lambda += columns[g][b];
    }
  }
  if (counters) ++counters->steps;
  if (lambda <= 0.0) return false;  // zero leaving rate: stay, no draw

  double scale = 1.0;
  if (h * lambda > 1.0) {
    if (strict)
      throw std::runtime_error("euler step: h * leaving-rate = " +
                               std::to_string(h * lambda) +
                               " exceeds 1; reduce the step size");
    if (counters) ++counters->clamp_events;
    scale = 1.0 / (h * lambda);
  }
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t g = 0; g < n_agents; ++g) {
    for (int b = 0; b < dims[g]; ++b) {
      if (b == coords[g]) continue;
      acc += h * columns[g][b] * scale;
      if (u < acc) {
        coords[g] = b;
        return true;
      }
    }
  }
  return false;  // residual bin: stay
}

// Rate column as a function of (t, current action); lets tests and the
// sampler diagnostic drive the same Euler loop with synthetic rates.
using RateColumnFn = std::function<std::vector<double>(double, int)>;

inline int euler_simulate_rates(const RateColumnFn& rates, int n_actions, int a0,
                                int steps, Rng& rng, StepCounters* counters = nullptr,
                                bool strict = false) {
  if (steps <= 0) throw std::invalid_argument("euler_simulate: steps must be > 0");
  if (a0 < 0 || a0 >= n_actions) throw std::invalid_argument("euler_simulate: a0 out of range");
  const double h = 1.0 / static_cast<double>(steps);
  const int dims[1] = {n_actions};
  int coords[1] = {a0};
  std::vector<std::vector<double>> cols(1);
  for (int n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) * h;
    cols[0] = rates(t, coords[0]);
    euler_step_inplace(cols, dims, coords, h, rng, counters, strict);
  }
  return coords[0];
}

// Samples the learned chain's terminal action from a given start action.
inline int euler_simulate(const RateField& field, std::span<const double> state,
                          std::span<const double> omega, int a0, int steps, Rng& rng,
                          StepCounters* counters = nullptr, bool strict = false) {
  return euler_simulate_rates(
      [&](double t, int a) { return field.rate_column(state, omega, t, a); },
      field.n_actions, a0, steps, rng, counters, strict);
}

// ---------------------------------------------------------------------------
// Exact marginal of a chain via dense integration of the forward equation
// dp/dt[b] = sum_a G[a][b] p[a], where G[a] is the rate column for source
// action a. Used as the reference distribution in sampler diagnostics.

using GeneratorFn = std::function<std::vector<std::vector<double>>(double)>;

namespace detail {

inline void validate_generator(const std::vector<std::vector<double>>& gen, double t) {
  const std::size_t n = gen.size();
  for (std::size_t a = 0; a < n; ++a) {
    if (gen[a].size() != n)
      throw std::runtime_error("generator at t=" + std::to_string(t) + " is not square");
    double sum = 0.0, scale = 1.0;
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a && gen[a][b] < -1e-12)
        throw std::runtime_error("generator column " + std::to_string(a) +
                                 " has negative off-diagonal rate at row " +
                                 std::to_string(b) + " (t=" + std::to_string(t) + ")");
      sum += gen[a][b];
      scale = std::max(scale, std::abs(gen[a][b]));
    }
    if (std::abs(sum) > 1e-8 * scale)
      throw std::runtime_error("generator column " + std::to_string(a) +
                               " sums to " + std::to_string(sum) +
                               " (non-conservative, t=" + std::to_string(t) + ")");
  }
}

inline std::vector<double> generator_apply(const std::vector<std::vector<double>>& gen,
                                           const std::vector<double>& p) {
  const std::size_t n = p.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) out[b] += gen[a][b] * p[a];
  return out;
}

}  // namespace detail

inline std::vector<double> exact_chain_marginal(const GeneratorFn& generator,
                                                std::span<const double> p0,
                                                int substeps, double t_end = 1.0) {
  if (substeps < 1000)
    throw std::invalid_argument("exact_chain_marginal: need at least 1000 substeps");
  if (!(t_end >= 0.0 && t_end <= 1.0))
    throw std::invalid_argument("exact_chain_marginal: t_end must lie in [0, 1]");
  double mass = 0.0;
  for (double v : p0) {
    if (!(v >= 0.0)) throw std::invalid_argument("exact_chain_marginal: p0 entries must be >= 0");
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-8)
    throw std::invalid_argument("exact_chain_marginal: p0 must sum to 1");

  std::vector<double> p(p0.begin(), p0.end());
  const std::size_t n = p.size();
  const double h = t_end / static_cast<double>(substeps);
  for (int m = 0; m < substeps; ++m) {
    const double t = static_cast<double>(m) * h;
    auto g0 = generator(t);
    auto gm = generator(t + 0.5 * h);
    auto g1 = generator(t + h);
    detail::validate_generator(g0, t);
    detail::validate_generator(gm, t + 0.5 * h);
    detail::validate_generator(g1, t + h);
    std::vector<double> k1 = detail::generator_apply(g0, p);
    std::vector<double> tmp(n);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + 0.5 * h * k1[i];
    std::vector<double> k2 = detail::generator_apply(gm, tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + 0.5 * h * k2[i];
    std::vector<double> k3 = detail::generator_apply(gm, tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + h * k3[i];
    std::vector<double> k4 = detail::generator_apply(g1, tmp);
    for (std::size_t i = 0; i < n; ++i)
      p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  for (auto& v : p) {
    if (v < -1e-10)
      throw std::runtime_error(
          "exact_chain_marginal: probability drifted to " + std::to_string(v) +
          "; increase substeps");
    if (v < 0.0) v = 0.0;
  }
  double total = 0.0;
  for (double v : p) total += v;
  if (std::abs(total - 1.0) > 1e-8)
    throw std::runtime_error("exact_chain_marginal: mass drifted to " + std::to_string(total));
  return p;
}

// Generator of the conditional mixture path for a fixed conditioning, laid
// out as full columns; useful as an integration fixture.
inline GeneratorFn conditional_path_generator(ConditioningZ z, int n_actions) {
  return [z, n_actions](double t) {
    std::vector<std::vector<double>> gen(n_actions);
    for (int a = 0; a < n_actions; ++a) gen[a] = target_rate_column(z, t, a, n_actions);
    return gen;
  };
}

}  // namespace qdfm::flow
