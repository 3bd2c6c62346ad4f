#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "qdfm/critic.hpp"
#include "qdfm/rng.hpp"

using namespace qdfm;
using critic::CriticSample;
using critic::VectorCritic;

namespace {

// Critic whose network ignores the input: output-layer biases fixed, all
// weights zero. Makes Q(s, a) a known constant for arithmetic checks.
VectorCritic constant_critic(std::vector<double> q, double gamma = 0.9,
                             double beta = 1.0) {
  Rng rng(1);
  VectorCritic c = VectorCritic::create(2, static_cast<int>(q.size()), {3}, {4},
                                        gamma, beta, rng);
  for (auto& v : c.network.parameters()) v = 0.0;
  auto bias = c.network.bias(c.network.layer_count() - 1);
  for (std::size_t k = 0; k < q.size(); ++k) bias[k] = q[k];
  return c;
}

}  // namespace

TEST_CASE("construction validates gamma and beta", "[critic]") {
  Rng rng(2);
  REQUIRE_THROWS_AS(VectorCritic::create(2, 1, {3}, {4}, 0.0, 1.0, rng),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(VectorCritic::create(2, 1, {3}, {4}, 1.0, 1.0, rng),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(VectorCritic::create(2, 1, {3}, {4}, 0.9, 0.0, rng),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(VectorCritic::create(2, 1, {1}, {4}, 0.9, 1.0, rng),
                    std::invalid_argument);
}

TEST_CASE("scalarization is the preference dot product", "[critic]") {
  auto c = constant_critic({2.0, -1.0});
  std::vector<double> s{0.3, 0.7};
  std::vector<double> omega{0.5, 0.5};
  REQUIRE_THAT(c.scalarize(s, 0, omega), Catch::Matchers::WithinAbs(0.5, 1e-15));
  std::vector<double> w10{1.0, 0.0};
  REQUIRE_THAT(c.scalarize(s, 1, w10), Catch::Matchers::WithinAbs(2.0, 1e-15));

  // Against an explicit dot product for a non-constant critic.
  Rng rng(3);
  VectorCritic real = VectorCritic::create(2, 3, {4}, {8}, 0.9, 1.0, rng);
  std::vector<double> w{0.2, 0.3, 0.5};
  auto q = real.q_vector(s, 2);
  double dot = w[0] * q[0] + w[1] * q[1] + w[2] * q[2];
  REQUIRE_THAT(real.scalarize(s, 2, w), Catch::Matchers::WithinAbs(dot, 1e-12));
}

TEST_CASE("soft value interpolates mean and max", "[critic]") {
  std::vector<double> q{0.0, 1.0};
  REQUIRE_THAT(critic::soft_value_from_q(q, 0.0), Catch::Matchers::WithinAbs(0.5, 1e-15));
  // beta = ln 2: weights (1, 2)/3, value 2/3.
  REQUIRE_THAT(critic::soft_value_from_q(q, std::log(2.0)),
               Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));

  std::vector<double> flat{0.7, 0.7, 0.7};
  for (double beta : {0.0, 1.0, 20.0})
    REQUIRE_THAT(critic::soft_value_from_q(flat, beta),
                 Catch::Matchers::WithinAbs(0.7, 1e-12));

  // Bounded by min/max and monotone toward the max as beta grows.
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> vals(4);
    for (auto& v : vals) v = rng.uniform(-3, 3);
    double lo = *std::min_element(vals.begin(), vals.end());
    double hi = *std::max_element(vals.begin(), vals.end());
    double prev = lo - 1.0;
    for (double beta : {0.0, 0.5, 1.0, 2.0, 5.0, 20.0}) {
      double v = critic::soft_value_from_q(vals, beta);
      REQUIRE(v >= lo - 1e-12);
      REQUIRE(v <= hi + 1e-12);
      REQUIRE(v >= prev - 1e-12);
      prev = v;
    }
  }
  // Large beta saturates huge values without overflow.
  std::vector<double> big{500.0, 499.0};
  REQUIRE_THAT(critic::soft_value_from_q(big, 20.0),
               Catch::Matchers::WithinAbs(500.0, 1e-6));
}

TEST_CASE("duplicated support actions count once per occurrence", "[critic]") {
  auto c = constant_critic({1.0, 0.0});
  // Make Q depend on the action by wiring the one-hot block into output 0.
  // state_dim = 2, so action one-hot occupies inputs 2..4 of a {5,4,2} net.
  Rng rng(7);
  VectorCritic varied = VectorCritic::create(2, 1, {3}, {4}, 0.9, 1.0, rng);
  std::vector<double> s{0.1, 0.2};
  std::vector<double> omega{1.0};
  double q0 = varied.scalarize(s, 0, omega);
  double q1 = varied.scalarize(s, 1, omega);
  std::vector<int> support{0, 0, 1};
  std::vector<double> dup{q0, q0, q1};
  REQUIRE_THAT(critic::soft_value(varied, s, support, omega),
               Catch::Matchers::WithinAbs(critic::soft_value_from_q(dup, 1.0), 1e-12));
  std::vector<int> empty;
  REQUIRE_THROWS_AS(critic::soft_value(varied, s, empty, omega), std::invalid_argument);
}

TEST_CASE("bellman target arithmetic", "[critic]") {
  std::vector<double> r{1.0, 0.0};
  std::vector<double> omega{1.0, 0.0};
  REQUIRE_THAT(critic::bellman_target_from_value(r, omega, 0.9, 2.0, false),
               Catch::Matchers::WithinAbs(2.8, 1e-15));
  REQUIRE_THAT(critic::bellman_target_from_value(r, omega, 0.9, 2.0, true),
               Catch::Matchers::WithinAbs(1.0, 1e-15));
  // gamma = 0 behavior via the value path: target reduces to <omega, r>.
  REQUIRE_THAT(critic::bellman_target_from_value(r, omega, 1e-12, 5.0, false),
               Catch::Matchers::WithinAbs(1.0, 1e-11));

  auto c = constant_critic({2.0, 2.0}, 0.9, 1.0);
  std::vector<double> s{0.0, 0.0};
  std::vector<int> support{0, 1};
  CriticSample sample{s, 0, r, s, false, omega, support};
  // soft value over constant Q = 2 is exactly 2.
  REQUIRE_THAT(critic::bellman_target(c, sample), Catch::Matchers::WithinAbs(2.8, 1e-12));
}

TEST_CASE("zero-error batch leaves parameters unchanged", "[critic]") {
  // All-zero network, zero rewards, terminal transitions: predictions and
  // targets are both zero, so the gradient is exactly zero.
  auto c = constant_critic({0.0});
  std::vector<double> before = c.network.flatten();
  std::vector<double> s{0.4, -0.2};
  std::vector<double> r{0.0};
  std::vector<double> omega{1.0};
  std::vector<int> support{0};
  std::vector<CriticSample> batch{CriticSample{s, 1, r, s, true, omega, support}};
  net::AdamState opt(c.network.parameter_count(), 1e-2);
  double loss = critic::critic_update(c, opt, batch);
  REQUIRE(loss == 0.0);
  REQUIRE(c.network.flatten() == before);
}

TEST_CASE("critic regresses to per-pair dataset reward means", "[critic]") {
  // Two states, two actions, K = 1, terminal transitions (so the bootstrap
  // term vanishes): the critic should fit the reward table.
  const double table[2][2] = {{0.3, -0.2}, {0.8, 0.1}};
  Rng rng(11);
  VectorCritic c = VectorCritic::create(2, 1, {2}, {16, 16}, 0.9, 1.0, rng);
  net::AdamState opt(c.network.parameter_count(), 3e-3);
  std::vector<std::vector<double>> states{{1.0, 0.0}, {0.0, 1.0}};
  std::vector<double> omega{1.0};
  std::vector<int> support{0, 1};
  std::vector<std::vector<double>> rewards;
  std::vector<CriticSample> batch;
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) rewards.push_back({table[s][a]});
  std::size_t idx = 0;
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a)
      batch.push_back(CriticSample{states[s], a, rewards[idx++], states[s], true, omega,
                                   support});
  for (int step = 0; step < 5000; ++step) critic::critic_update(c, opt, batch);
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a)
      REQUIRE_THAT(c.scalarize(states[s], a, omega),
                   Catch::Matchers::WithinAbs(table[s][a], 0.02));
}

TEST_CASE("critic loss decreases in trend on a fixed batch", "[critic]") {
  std::vector<double> first_window, last_window;
  double first_sum = 0.0, last_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    // A strongly contractive discount keeps the bootstrapped fixed point
    // well inside the net's capacity, so the pre-step error must shrink.
    VectorCritic c = VectorCritic::create(3, 2, {3}, {12}, 0.5, 2.0, rng);
    net::AdamState opt(c.network.parameter_count(), 1e-2);
    std::vector<std::vector<double>> states, rewards, omegas;
    std::vector<CriticSample> batch;
    std::vector<int> support{0, 1, 2};
    for (int i = 0; i < 16; ++i) {
      states.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
      rewards.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      omegas.push_back(rng.simplex(2));
    }
    for (int i = 0; i < 16; ++i)
      batch.push_back(CriticSample{states[i], static_cast<int>(rng.uniform_below(3)),
                                   rewards[i], states[(i + 1) % 16], i % 4 == 0,
                                   omegas[i], support});
    std::vector<double> losses;
    for (int step = 0; step < 600; ++step)
      losses.push_back(critic::critic_update(c, opt, batch));
    for (int i = 0; i < 10; ++i) first_sum += losses[i];
    for (int i = 590; i < 600; ++i) last_sum += losses[i];
  }
  REQUIRE(last_sum < 0.5 * first_sum);
}

TEST_CASE("updates are semi-gradient: targets act as constants", "[critic]") {
  Rng rng(13);
  VectorCritic c = VectorCritic::create(2, 2, {3}, {8}, 0.9, 2.0, rng);
  std::vector<double> s1{0.2, -0.5}, s2{-0.1, 0.9};
  std::vector<double> r{0.4, -0.3};
  std::vector<double> omega{0.6, 0.4};
  std::vector<int> support{0, 1, 2};
  std::vector<CriticSample> batch{CriticSample{s1, 1, r, s2, false, omega, support}};

  std::vector<double> analytic(c.network.parameter_count(), 0.0);
  critic::critic_loss_and_grad(c, batch, analytic);

  // Finite differences of the loss with the target frozen at theta_0. If the
  // implementation leaked gradient through the bootstrap term, it would
  // disagree with this frozen-target derivative.
  const double y = critic::bellman_target(c, batch[0]);
  auto frozen_loss = [&](VectorCritic& probe) {
    double pred = probe.scalarize(s1, 1, omega);
    return (pred - y) * (pred - y);
  };
  const double h = 1e-6;
  auto params = c.network.parameters();
  for (std::size_t i = 0; i < params.size(); i += 7) {  // sample every 7th param
    const double keep = params[i];
    params[i] = keep + h;
    const double up = frozen_loss(c);
    params[i] = keep - h;
    const double down = frozen_loss(c);
    params[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    REQUIRE_THAT(analytic[i], Catch::Matchers::WithinAbs(fd, 1e-5));
  }
}

TEST_CASE("centralized critic accepts joint actions", "[critic]") {
  Rng rng(17);
  VectorCritic c = VectorCritic::create(2, 2, {3, 3}, {8}, 0.9, 2.0, rng);
  REQUIRE(c.n_actions() == 9);
  std::vector<double> s{0.0, 1.0};
  auto q = c.q_vector(s, 8);  // joint (2, 2)
  REQUIRE(q.size() == 2);
  REQUIRE_THROWS_AS(c.q_vector(s, 9), std::invalid_argument);
}
