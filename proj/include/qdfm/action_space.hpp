#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace qdfm {

// Helpers for factorized (multi-agent) action spaces. A joint action is
// either a flat index in [0, prod dims) or a per-agent coordinate vector;
// the flat index is coordinate-major with agent 0 as the slowest axis.
// Single-agent spaces use dims = {n_actions}, making the flat index and the
// lone coordinate coincide.

inline void validate_agent_dims(std::span<const int> dims) {
  if (dims.empty()) throw std::invalid_argument("agent dims must be nonempty");
  for (int d : dims)
    if (d < 2) throw std::invalid_argument("every agent needs at least 2 actions");
}

inline int joint_cardinality(std::span<const int> dims) {
  validate_agent_dims(dims);
  long card = 1;
  for (int d : dims) {
    card *= d;
    if (card > (1 << 24)) throw std::invalid_argument("joint action space too large");
  }
  return static_cast<int>(card);
}

inline std::vector<int> joint_to_coords(std::span<const int> dims, int flat) {
  const int card = joint_cardinality(dims);
  if (flat < 0 || flat >= card) throw std::invalid_argument("joint action index out of range");
  std::vector<int> coords(dims.size());
  for (std::size_t g = dims.size(); g-- > 0;) {
    coords[g] = flat % dims[g];
    flat /= dims[g];
  }
  return coords;
}

inline int coords_to_joint(std::span<const int> dims, std::span<const int> coords) {
  validate_agent_dims(dims);
  if (coords.size() != dims.size())
    throw std::invalid_argument("coordinate count does not match agent count");
  int flat = 0;
  for (std::size_t g = 0; g < dims.size(); ++g) {
    if (coords[g] < 0 || coords[g] >= dims[g])
      throw std::invalid_argument("agent coordinate out of range");
    flat = flat * dims[g] + coords[g];
  }
  return flat;
}

// Total one-hot width of the concatenated per-agent encoding.
inline int onehot_width(std::span<const int> dims) {
  validate_agent_dims(dims);
  int w = 0;
  for (int d : dims) w += d;
  return w;
}

}  // namespace qdfm
