#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qdfm/envs.hpp"
#include "qdfm/io.hpp"
#include "qdfm/rng.hpp"

namespace qdfm::data {

struct Transition {
  int state;
  int action;  // flat joint action
  std::vector<double> reward;
  int next_state;
  bool done;  // true termination only; horizon truncation keeps done=false
};

struct OfflineDataset {
  std::string env_name;
  int n_objectives = 0;
  std::vector<int> agent_dims;
  std::uint64_t seed = 0;
  int episodes = 0;
  std::string version = "1";
  std::vector<Transition> transitions;

  int n_actions() const { return joint_cardinality(agent_dims); }
};

// ---------------------------------------------------------------------------
// Behavior model: per-state empirical action distribution with additive
// smoothing; states never seen in the data fall back to uniform (their
// smoothed counts are all equal).

struct BehaviorModel {
  int n_actions = 0;
  double smoothing = 0.1;
  std::unordered_map<int, std::vector<double>> counts;

  std::vector<double> probs(int state) const {
    std::vector<double> p(n_actions, 0.0);
    double total = 0.0;
    auto it = counts.find(state);
    for (int a = 0; a < n_actions; ++a) {
      p[a] = smoothing + (it != counts.end() ? it->second[a] : 0.0);
      total += p[a];
    }
    for (double& v : p) v /= total;
    return p;
  }

  int sample(int state, Rng& rng) const {
    return static_cast<int>(rng.categorical(probs(state)));
  }

  // Actions actually observed at the state; every action if never seen.
  std::vector<int> support(int state) const {
    std::vector<int> out;
    auto it = counts.find(state);
    if (it != counts.end())
      for (int a = 0; a < n_actions; ++a)
        if (it->second[a] > 0.0) out.push_back(a);
    if (out.empty())
      for (int a = 0; a < n_actions; ++a) out.push_back(a);
    return out;
  }
};

inline BehaviorModel fit_behavior(const OfflineDataset& ds, double smoothing = 0.1) {
  if (!(smoothing > 0.0)) throw std::invalid_argument("fit_behavior: smoothing must be > 0");
  BehaviorModel model;
  model.n_actions = ds.n_actions();
  model.smoothing = smoothing;
  for (const auto& tr : ds.transitions) {
    auto& row = model.counts[tr.state];
    if (row.empty()) row.assign(model.n_actions, 0.0);
    if (tr.action < 0 || tr.action >= model.n_actions)
      throw std::invalid_argument("fit_behavior: action out of range in dataset");
    row[tr.action] += 1.0;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Generation: roll out a weighted mixture of the environment's scripted
// policies. One RNG stream drives policy choice and all episode randomness
// sequentially, so a (env, mix, episodes, seed) tuple is fully reproducible.

using PolicyMix = std::vector<std::pair<std::string, double>>;

inline PolicyMix default_policy_mix(const std::string& env_name) {
  if (env_name == "fork") return {{"left", 0.5}, {"right", 0.5}};
  if (env_name == "dst") {
    PolicyMix mix;
    for (int k = 0; k < 10; ++k) mix.emplace_back("diver" + std::to_string(k), 0.07);
    mix.emplace_back("random", 0.30);
    return mix;
  }
  if (env_name == "resource")
    return {{"gold", 0.3}, {"diamond", 0.3}, {"safe", 0.2}, {"random", 0.2}};
  if (env_name == "matrix")
    return {{"risky-coord", 0.45}, {"safe-mismatch", 0.45}, {"random", 0.10}};
  if (env_name == "bandit") return {{"behavior", 1.0}};
  throw std::invalid_argument("no default policy mix for environment '" + env_name + "'");
}

inline OfflineDataset generate_dataset(const envs::DiscreteEnv& env, const PolicyMix& mix,
                                       int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("generate_dataset: episodes must be >= 1");
  if (mix.empty()) throw std::invalid_argument("generate_dataset: empty policy mix");
  std::vector<const envs::PolicyFn*> policies;
  std::vector<double> weights;
  for (const auto& [name, weight] : mix) {
    auto it = env.policies.find(name);
    if (it == env.policies.end())
      throw std::invalid_argument("generate_dataset: environment '" + env.name +
                                  "' has no scripted policy '" + name + "'");
    if (!(weight > 0.0))
      throw std::invalid_argument("generate_dataset: policy weight for '" + name +
                                  "' must be > 0");
    policies.push_back(&it->second);
    weights.push_back(weight);
  }

  OfflineDataset ds;
  ds.env_name = env.name;
  ds.n_objectives = env.n_objectives;
  ds.agent_dims = env.agent_dims;
  ds.seed = seed;
  ds.episodes = episodes;

  Rng rng = Rng::stream(seed, "dataset");
  for (int e = 0; e < episodes; ++e) {
    std::size_t which = rng.categorical(weights);
    envs::EpisodeTrace trace = envs::rollout(env, *policies[which], rng);
    for (const auto& step : trace.steps)
      ds.transitions.push_back({step.state, step.action, step.reward, step.next_state, step.done});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// JSONL serialization. Line 1 is a metadata header; each further line is one
// transition. Rewards are printed with up to 17 significant digits so the
// parsed doubles are bit-identical to the originals.

inline std::string dataset_to_jsonl(const OfflineDataset& ds) {
  nlohmann::json header = {{"env", ds.env_name},       {"K", ds.n_objectives},
                           {"n_actions", ds.n_actions()}, {"agent_dims", ds.agent_dims},
                           {"seed", ds.seed},          {"episodes", ds.episodes},
                           {"version", ds.version}};
  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& tr : ds.transitions) {
    out += "{\"s\":" + std::to_string(tr.state) + ",\"a\":" + std::to_string(tr.action) +
           ",\"r\":[";
    for (std::size_t k = 0; k < tr.reward.size(); ++k) {
      if (k) out.push_back(',');
      out += io::format_double(tr.reward[k]);
    }
    out += "],\"s2\":" + std::to_string(tr.next_state) +
           ",\"done\":" + (tr.done ? std::string("true") : std::string("false")) + "}\n";
  }
  return out;
}

inline void save_dataset(const OfflineDataset& ds, const std::string& path) {
  io::atomic_write(path, dataset_to_jsonl(ds));
}

inline OfflineDataset parse_dataset_jsonl(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw std::runtime_error(origin + ": missing dataset header line");
  OfflineDataset ds;
  try {
    nlohmann::json header = nlohmann::json::parse(line);
    ds.env_name = header.at("env").get<std::string>();
    ds.n_objectives = header.at("K").get<int>();
    ds.agent_dims = header.at("agent_dims").get<std::vector<int>>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    ds.episodes = header.at("episodes").get<int>();
    ds.version = header.at("version").get<std::string>();
    if (header.at("n_actions").get<int>() != ds.n_actions())
      throw std::runtime_error("header n_actions disagrees with agent_dims");
  } catch (const std::exception& e) {
    throw std::runtime_error(origin + ": bad dataset header: " + e.what());
  }
  if (ds.n_objectives < 1) throw std::runtime_error(origin + ": bad dataset header: K < 1");

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      Transition tr;
      tr.state = j.at("s").get<int>();
      tr.action = j.at("a").get<int>();
      tr.reward = j.at("r").get<std::vector<double>>();
      tr.next_state = j.at("s2").get<int>();
      tr.done = j.at("done").get<bool>();
      if (static_cast<int>(tr.reward.size()) != ds.n_objectives)
        throw std::runtime_error("reward arity disagrees with header");
      ds.transitions.push_back(std::move(tr));
    } catch (const std::exception& e) {
      throw std::runtime_error(origin + ": bad transition on line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

inline OfflineDataset load_dataset(const std::string& path) {
  return parse_dataset_jsonl(io::read_text_file(path), path);
}

}  // namespace qdfm::data
