#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qdfm/io.hpp"
#include "qdfm/rng.hpp"

namespace qdfm::net {

enum class Activation { kTanh };

inline const char* activation_tag(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
  }
  throw std::invalid_argument("unknown activation");
}

inline Activation activation_from_tag(const std::string& tag) {
  if (tag == "tanh") return Activation::kTanh;
  throw std::runtime_error("checkpoint: unknown activation tag '" + tag + "'");
}

// Fully connected network with nonlinear hidden layers and a linear output
// layer, in double precision throughout. Parameters live in one flat vector
// (per layer: row-major weight matrix, then bias), which makes optimizer
// state, checkpoints, and gradient checks straightforward.
//
// Forward and backward are pure functions of (parameters, input); backward
// recomputes its own forward pass, so no mutable state is held between calls
// and instances can be shared read-only across threads.
class DenseNet {
 public:
  DenseNet(std::vector<int> widths, Activation hidden = Activation::kTanh)
      : widths_(std::move(widths)), hidden_(hidden) {
    if (widths_.size() < 2) throw std::invalid_argument("DenseNet: need at least input and output widths");
    for (int w : widths_)
      if (w <= 0) throw std::invalid_argument("DenseNet: widths must be positive");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      layer_offsets_.push_back(n);
      n += static_cast<std::size_t>(widths_[l + 1]) * widths_[l] + widths_[l + 1];
    }
    params_.assign(n, 0.0);
  }

  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  static DenseNet random_init(std::vector<int> widths, Rng& rng,
                              Activation hidden = Activation::kTanh) {
    DenseNet net(std::move(widths), hidden);
    for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l) {
      double bound = 1.0 / std::sqrt(static_cast<double>(net.widths_[l]));
      auto w = net.weight(l);
      for (auto& v : w) v = rng.uniform(-bound, bound);
    }
    return net;
  }

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  std::size_t layer_count() const { return widths_.size() - 1; }
  const std::vector<int>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }

  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::span<double> weight(std::size_t layer) {
    check_layer(layer);
    return {params_.data() + layer_offsets_[layer],
            static_cast<std::size_t>(widths_[layer + 1]) * widths_[layer]};
  }
  std::span<const double> weight(std::size_t layer) const {
    return const_cast<DenseNet*>(this)->weight(layer);
  }
  std::span<double> bias(std::size_t layer) {
    check_layer(layer);
    return {params_.data() + layer_offsets_[layer] +
                static_cast<std::size_t>(widths_[layer + 1]) * widths_[layer],
            static_cast<std::size_t>(widths_[layer + 1])};
  }
  std::span<const double> bias(std::size_t layer) const {
    return const_cast<DenseNet*>(this)->bias(layer);
  }

  std::vector<double> flatten() const { return params_; }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != params_.size())
      throw std::invalid_argument("unflatten: parameter count mismatch");
    std::copy(flat.begin(), flat.end(), params_.begin());
  }

  std::vector<double> forward(std::span<const double> input) const {
    if (static_cast<int>(input.size()) != input_dim())
      throw std::invalid_argument("forward: input has dimension " +
                                  std::to_string(input.size()) + ", expected " +
                                  std::to_string(input_dim()));
    std::vector<double> act(input.begin(), input.end());
    std::vector<double> next;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      affine(l, act, next);
      if (l + 1 < layer_count())
        for (auto& v : next) v = std::tanh(v);
      act.swap(next);
    }
    return act;
  }

  // Accumulates d<output_grad, f(input)>/dparams into param_grad (+=) and,
  // when input_grad is non-empty, writes d<output_grad, f(input)>/dinput.
  void backward(std::span<const double> input, std::span<const double> output_grad,
                std::span<double> param_grad, std::span<double> input_grad = {}) const {
    if (static_cast<int>(output_grad.size()) != output_dim())
      throw std::invalid_argument("backward: output_grad dimension mismatch");
    if (param_grad.size() != params_.size())
      throw std::invalid_argument("backward: param_grad size mismatch");
    if (!input_grad.empty() && static_cast<int>(input_grad.size()) != input_dim())
      throw std::invalid_argument("backward: input_grad size mismatch");
    for (double g : output_grad)
      if (!std::isfinite(g)) throw std::runtime_error("backward: non-finite output gradient");

    // Forward pass, keeping each layer's input activation.
    std::vector<std::vector<double>> acts(layer_count() + 1);
    acts[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < layer_count(); ++l) {
      affine(l, acts[l], acts[l + 1]);
      if (l + 1 < layer_count())
        for (auto& v : acts[l + 1]) v = std::tanh(v);
    }

    std::vector<double> delta(output_grad.begin(), output_grad.end());
    std::vector<double> prev;
    for (std::size_t li = layer_count(); li-- > 0;) {
      const int rows = widths_[li + 1];
      const int cols = widths_[li];
      const double* w = params_.data() + layer_offsets_[li];
      double* gw = param_grad.data() + layer_offsets_[li];
      double* gb = gw + static_cast<std::size_t>(rows) * cols;
      const std::vector<double>& a = acts[li];
      for (int r = 0; r < rows; ++r) {
        const double d = delta[r];
        double* gw_row = gw + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gw_row[c] += d * a[c];
        gb[r] += d;
      }
      if (li == 0 && input_grad.empty()) break;
      prev.assign(cols, 0.0);
      for (int r = 0; r < rows; ++r) {
        const double d = delta[r];
        const double* w_row = w + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) prev[c] += d * w_row[c];
      }
      if (li > 0) {
        // acts[li] holds tanh outputs; tanh' = 1 - tanh^2.
        for (int c = 0; c < cols; ++c) prev[c] *= 1.0 - a[c] * a[c];
        delta.swap(prev);
      } else {
        std::copy(prev.begin(), prev.end(), input_grad.begin());
      }
    }
  }

  // Human-readable name of the parameter block containing flat index i.
  std::string block_name_at(std::size_t i) const {
    for (std::size_t l = 0; l < layer_count(); ++l) {
      std::size_t wsize = static_cast<std::size_t>(widths_[l + 1]) * widths_[l];
      std::size_t start = layer_offsets_[l];
      if (i < start + wsize) return "layer" + std::to_string(l) + ".weight";
      if (i < start + wsize + static_cast<std::size_t>(widths_[l + 1]))
        return "layer" + std::to_string(l) + ".bias";
    }
    return "params";
  }

 private:
  void check_layer(std::size_t layer) const {
    if (layer >= layer_count()) throw std::invalid_argument("layer index out of range");
  }

  void affine(std::size_t l, const std::vector<double>& in, std::vector<double>& out) const {
    const int rows = widths_[l + 1];
    const int cols = widths_[l];
    const double* w = params_.data() + layer_offsets_[l];
    const double* b = w + static_cast<std::size_t>(rows) * cols;
    out.assign(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
      const double* w_row = w + static_cast<std::size_t>(r) * cols;
      double acc = b[r];
      for (int c = 0; c < cols; ++c) acc += w_row[c] * in[c];
      out[r] = acc;
    }
  }

  std::vector<int> widths_;
  Activation hidden_;
  std::vector<double> params_;
  std::vector<std::size_t> layer_offsets_;
};

// Adam with bias correction. Moment estimates are owned here so the same
// parameters are never stepped by two states accidentally.
class AdamState {
 public:
  AdamState(std::size_t n, double lr = 1e-3, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {
    if (!(lr > 0.0)) throw std::invalid_argument("AdamState: lr must be > 0");
  }

  std::size_t size() const { return m_.size(); }
  long step_count() const { return t_; }
  double learning_rate() const { return lr_; }

  void step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("AdamState: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double g = grad[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// One optimizer step with a finiteness guard; a NaN/inf gradient aborts with
// an error naming the offending parameter block.
inline void apply_gradients(DenseNet& net, AdamState& opt, std::span<const double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw std::runtime_error("non-finite gradient in " + net.block_name_at(i));
  opt.step(net.parameters(), grad);
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line (format, version, widths, activation,
// caller extras) followed by the raw little-endian bytes of the flat
// parameter vector. Raw bytes make the round trip bit-exact.

inline constexpr const char* kCheckpointFormat = "qdfm-net";
inline constexpr const char* kCheckpointVersion = "1";


inline void save_checkpoint(const DenseNet& net, const std::string& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json header = {{"format", kCheckpointFormat},
                           {"version", kCheckpointVersion},
                           {"widths", net.widths()},
                           {"activation", activation_tag(net.hidden_activation())},
                           {"extra", extra}};
  std::string bytes = header.dump();
  bytes.push_back('\n');
  auto params = net.parameters();
  std::size_t pos = bytes.size();
  bytes.resize(pos + params.size() * sizeof(double));
  std::memcpy(bytes.data() + pos, params.data(), params.size() * sizeof(double));
  io::atomic_write(path, bytes);
}

inline std::pair<DenseNet, nlohmann::json> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint '" + path + "': missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint '" + path + "': bad header: " + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat)
    throw std::runtime_error("checkpoint '" + path + "': unrecognized format");
  if (header.value("version", "") != kCheckpointVersion)
    throw std::runtime_error("checkpoint '" + path + "': unsupported version '" +
                             header.value("version", "") + "'");
  std::vector<int> widths = header.at("widths").get<std::vector<int>>();
  Activation act = activation_from_tag(header.at("activation").get<std::string>());
  DenseNet net(widths, act);
  std::vector<double> params(net.parameter_count());
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(params.size() * sizeof(double)))
    throw std::runtime_error("checkpoint '" + path + "': truncated parameter payload");
  net.unflatten(params);
  return {std::move(net), header.value("extra", nlohmann::json::object())};
}

}  // namespace qdfm::net
