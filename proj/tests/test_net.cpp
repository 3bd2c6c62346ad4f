#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "qdfm/net.hpp"
#include "qdfm/rng.hpp"

using qdfm::Rng;
using qdfm::net::AdamState;
using qdfm::net::DenseNet;

namespace {

// Independent reference forward pass: explicit matrix/vector loops over a
// row-major copy of the weights, kept deliberately separate from the library.
std::vector<double> oracle_forward(const std::vector<std::vector<std::vector<double>>>& weights,
                                   const std::vector<std::vector<double>>& biases,
                                   std::vector<double> x, bool tanh_hidden) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::vector<double> y(biases[l]);
    for (std::size_t r = 0; r < weights[l].size(); ++r)
      for (std::size_t c = 0; c < weights[l][r].size(); ++c)
        y[r] += weights[l][r][c] * x[c];
    if (tanh_hidden && l + 1 < weights.size())
      for (auto& v : y) v = std::tanh(v);
    x = std::move(y);
  }
  return x;
}

double loss_at(const DenseNet& net, const std::vector<double>& input,
               const std::vector<double>& g) {
  auto out = net.forward(input);
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += g[i] * out[i];
  return s;
}

}  // namespace

TEST_CASE("forward matches an independent matmul oracle", "[net]") {
  Rng rng(7);
  DenseNet net = DenseNet::random_init({3, 4, 2}, rng);

  // Copy parameters into plain nested vectors for the oracle.
  std::vector<std::vector<std::vector<double>>> weights(2);
  std::vector<std::vector<double>> biases(2);
  const std::vector<int> widths = net.widths();
  for (std::size_t l = 0; l < 2; ++l) {
    auto w = net.weight(l);
    auto b = net.bias(l);
    weights[l].assign(widths[l + 1], std::vector<double>(widths[l]));
    for (int r = 0; r < widths[l + 1]; ++r)
      for (int c = 0; c < widths[l]; ++c)
        weights[l][r][c] = w[static_cast<std::size_t>(r) * widths[l] + c];
    biases[l].assign(b.begin(), b.end());
  }

  Rng in_rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x{in_rng.uniform(-2, 2), in_rng.uniform(-2, 2), in_rng.uniform(-2, 2)};
    auto got = net.forward(x);
    auto want = oracle_forward(weights, biases, x, true);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      REQUIRE_THAT(got[i], Catch::Matchers::WithinAbs(want[i], 1e-12));
  }
}

TEST_CASE("zero parameters map every input to zero", "[net]") {
  DenseNet net({5, 8, 3});
  std::vector<double> x{0.3, -1.2, 4.0, 0.0, 2.5};
  for (double v : net.forward(x)) REQUIRE(v == 0.0);
}

TEST_CASE("single linear layer with identity weights is the identity", "[net]") {
  DenseNet net({3, 3});
  auto w = net.weight(0);
  for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(i) * 3 + i] = 1.0;
  std::vector<double> x{1.5, -0.25, 2.0};
  auto y = net.forward(x);
  for (int i = 0; i < 3; ++i) REQUIRE(y[i] == x[i]);
}

TEST_CASE("forward rejects wrong input dimension", "[net]") {
  DenseNet net({3, 2});
  std::vector<double> x{1.0, 2.0};
  REQUIRE_THROWS_AS(net.forward(x), std::invalid_argument);
}

TEST_CASE("backward matches central finite differences", "[net]") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    Rng rng(seed);
    DenseNet net = DenseNet::random_init({4, 6, 5, 3}, rng);
    std::vector<double> input(4), g(3);
    for (auto& v : input) v = rng.uniform(-1.5, 1.5);
    for (auto& v : g) v = rng.uniform(-1, 1);

    std::vector<double> analytic(net.parameter_count(), 0.0);
    std::vector<double> input_grad(4, 0.0);
    net.backward(input, g, analytic, input_grad);

    const double h = 1e-5;
    DenseNet probe = net;
    auto params = probe.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = loss_at(probe, input, g);
      params[i] = keep - h;
      const double down = loss_at(probe, input, g);
      params[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double rel = std::abs(analytic[i] - fd) /
                         std::max({std::abs(analytic[i]), std::abs(fd), 1e-6});
      REQUIRE(rel <= 1e-4);
    }
    for (std::size_t i = 0; i < input.size(); ++i) {
      std::vector<double> shifted = input;
      shifted[i] += h;
      const double up = loss_at(net, shifted, g);
      shifted[i] -= 2.0 * h;
      const double down = loss_at(net, shifted, g);
      const double fd = (up - down) / (2.0 * h);
      const double rel = std::abs(input_grad[i] - fd) /
                         std::max({std::abs(input_grad[i]), std::abs(fd), 1e-6});
      REQUIRE(rel <= 1e-4);
    }
  }
}

TEST_CASE("zero output gradient yields zero parameter gradient", "[net]") {
  Rng rng(13);
  DenseNet net = DenseNet::random_init({3, 4, 2}, rng);
  std::vector<double> input{0.4, -0.7, 1.1}, g{0.0, 0.0};
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.backward(input, g, grad);
  for (double v : grad) REQUIRE(v == 0.0);
}

TEST_CASE("linear net bias gradient equals the output gradient", "[net]") {
  Rng rng(17);
  DenseNet net = DenseNet::random_init({4, 3}, rng);
  std::vector<double> input{0.2, 0.5, -0.3, 0.9}, g{2.0, -1.0, 0.5};
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.backward(input, g, grad);
  auto widths = net.widths();
  std::size_t bias_start = static_cast<std::size_t>(widths[1]) * widths[0];
  for (int r = 0; r < widths[1]; ++r)
    REQUIRE_THAT(grad[bias_start + r], Catch::Matchers::WithinAbs(g[r], 1e-15));
}

TEST_CASE("backward accumulates rather than overwrites", "[net]") {
  Rng rng(19);
  DenseNet net = DenseNet::random_init({2, 3, 1}, rng);
  std::vector<double> input{0.5, -0.5}, g{1.0};
  std::vector<double> once(net.parameter_count(), 0.0);
  net.backward(input, g, once);
  std::vector<double> twice(net.parameter_count(), 0.0);
  net.backward(input, g, twice);
  net.backward(input, g, twice);
  for (std::size_t i = 0; i < once.size(); ++i)
    REQUIRE_THAT(twice[i], Catch::Matchers::WithinAbs(2.0 * once[i], 1e-14));
}

TEST_CASE("adam leaves parameters alone under zero gradient", "[net]") {
  Rng rng(23);
  DenseNet net = DenseNet::random_init({3, 3}, rng);
  std::vector<double> before = net.flatten();
  AdamState opt(net.parameter_count(), 1e-2);
  std::vector<double> zero(net.parameter_count(), 0.0);
  for (int i = 0; i < 10; ++i) opt.step(net.parameters(), zero);
  std::vector<double> after = net.flatten();
  REQUIRE(before == after);
}

TEST_CASE("adam minimizes a quadratic", "[net]") {
  // One scalar parameter, loss (x - 3)^2, analytic gradient 2(x - 3).
  std::vector<double> x{0.0};
  AdamState opt(1, 1e-2);
  for (int i = 0; i < 5000; ++i) {
    std::vector<double> g{2.0 * (x[0] - 3.0)};
    opt.step(x, g);
  }
  REQUIRE(std::abs(x[0] - 3.0) <= 1e-3);
}

TEST_CASE("optimizer trajectory is bitwise deterministic", "[net]") {
  auto run = [] {
    Rng rng(31);
    DenseNet net = DenseNet::random_init({4, 8, 2}, rng);
    AdamState opt(net.parameter_count(), 3e-3);
    Rng data(77);
    for (int step = 0; step < 100; ++step) {
      std::vector<double> input(4), g(2);
      for (auto& v : input) v = data.uniform(-1, 1);
      for (auto& v : g) v = data.uniform(-1, 1);
      std::vector<double> grad(net.parameter_count(), 0.0);
      net.backward(input, g, grad);
      qdfm::net::apply_gradients(net, opt, grad);
    }
    return net.flatten();
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("non-finite gradients abort naming the parameter block", "[net]") {
  Rng rng(37);
  DenseNet net = DenseNet::random_init({2, 3, 1}, rng);
  AdamState opt(net.parameter_count());
  std::vector<double> grad(net.parameter_count(), 0.0);
  grad[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    qdfm::net::apply_gradients(net, opt, grad);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("layer0.weight") != std::string::npos);
  }
}

TEST_CASE("flatten/unflatten round-trip is the identity", "[net]") {
  Rng rng(41);
  DenseNet net = DenseNet::random_init({5, 7, 3}, rng);
  std::vector<double> flat = net.flatten();
  DenseNet other({5, 7, 3});
  other.unflatten(flat);
  REQUIRE(other.flatten() == flat);
  std::vector<double> wrong(flat.size() + 1, 0.0);
  REQUIRE_THROWS_AS(other.unflatten(wrong), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip is bit-exact with header metadata", "[net]") {
  namespace fs = std::filesystem;
  Rng rng(43);
  DenseNet net = DenseNet::random_init({6, 9, 4}, rng);
  fs::path dir = fs::temp_directory_path() / "qdfm_net_ckpt_test";
  fs::create_directories(dir);
  std::string path = (dir / "net.ckpt").string();
  nlohmann::json extra = {{"n_objectives", 2}, {"gamma", 0.95}};
  qdfm::net::save_checkpoint(net, path, extra);

  auto [loaded, meta] = qdfm::net::load_checkpoint(path);
  REQUIRE(loaded.widths() == net.widths());
  REQUIRE(meta.at("n_objectives").get<int>() == 2);
  REQUIRE(meta.at("gamma").get<double>() == 0.95);
  auto a = net.parameters();
  auto b = loaded.parameters();
  REQUIRE(a.size() == b.size());
  REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects malformed files", "[net]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "qdfm_net_ckpt_bad";
  fs::create_directories(dir);

  std::string garbage = (dir / "garbage.ckpt").string();
  {
    std::ofstream out(garbage);
    out << "not json\n";
  }
  REQUIRE_THROWS_AS(qdfm::net::load_checkpoint(garbage), std::runtime_error);

  // Valid header, truncated payload.
  Rng rng(47);
  DenseNet net = DenseNet::random_init({3, 3}, rng);
  std::string path = (dir / "trunc.ckpt").string();
  qdfm::net::save_checkpoint(net, path);
  auto size = fs::file_size(path);
  fs::resize_file(path, size - 8);
  REQUIRE_THROWS_AS(qdfm::net::load_checkpoint(path), std::runtime_error);

  REQUIRE_THROWS_AS(qdfm::net::load_checkpoint((dir / "missing.ckpt").string()),
                    std::runtime_error);
  fs::remove_all(dir);
}
