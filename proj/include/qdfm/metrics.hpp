#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdfm/envs.hpp"
#include "qdfm/io.hpp"
#include "qdfm/rng.hpp"

namespace qdfm::metrics {

using Point = std::vector<double>;

// All objectives are maximized. a dominates b iff a >= b componentwise with
// at least one strict improvement.
inline bool dominates(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dominates: dimension mismatch");
  bool strict = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return false;
    if (a[i] > b[i]) strict = true;
  }
  return strict;
}

// Non-dominated subset with exact-duplicate collapse, in lexicographically
// decreasing order (deterministic regardless of input order).
inline std::vector<Point> pareto_filter(std::vector<Point> pts) {
  for (const auto& p : pts)
    if (p.size() != pts.front().size())
      throw std::invalid_argument("pareto_filter: ragged points");
  std::sort(pts.begin(), pts.end(), std::greater<>());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  std::vector<Point> front;
  for (const auto& p : pts) {
    bool dominated = false;
    for (const auto& q : pts)
      if (dominates(q, p)) {
        dominated = true;
        break;
      }
    if (!dominated) front.push_back(p);
  }
  return front;
}

// ---------------------------------------------------------------------------
// Hypervolume dominated between ref and the points (maximization). The
// 2-objective case is a sorted sweep; the 3-objective case slices along the
// third axis and sweeps each slab. Points at or below ref in some coordinate
// are clipped and contribute only their part above ref.

namespace detail {

inline double hypervolume_2d(std::vector<Point> pts, const Point& ref) {
  for (auto& p : pts) {
    p[0] = std::max(p[0], ref[0]);
    p[1] = std::max(p[1], ref[1]);
  }
  // Sort by x descending; sweep left, accumulating strips above the best y
  // seen so far.
  std::sort(pts.begin(), pts.end(),
            [](const Point& a, const Point& b) { return a[0] > b[0]; });
  double volume = 0.0;
  double best_y = ref[1];
  for (const auto& p : pts) {
    if (p[1] > best_y) {
      volume += (p[0] - ref[0]) * (p[1] - best_y);
      best_y = p[1];
    }
  }
  return volume;
}

}  // namespace detail

inline double hypervolume(const std::vector<Point>& points, const Point& ref) {
  const std::size_t k = ref.size();
  if (k != 2 && k != 3)
    throw std::invalid_argument("hypervolume: only 2 or 3 objectives supported, got " +
                                std::to_string(k));
  for (const auto& p : points)
    if (p.size() != k) throw std::invalid_argument("hypervolume: point/ref dimension mismatch");
  if (points.empty()) return 0.0;
  if (k == 2) return detail::hypervolume_2d(points, ref);

  // k == 3: slice along the z axis. Within the slab [z_{i+1}, z_i), the
  // dominated area is the 2-D hypervolume of points whose z >= z_i.
  std::vector<double> zs;
  for (const auto& p : points)
    if (p[2] > ref[2]) zs.push_back(p[2]);
  if (zs.empty()) return 0.0;
  std::sort(zs.begin(), zs.end(), std::greater<>());
  zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
  double volume = 0.0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const double z_hi = zs[i];
    const double z_lo = (i + 1 < zs.size()) ? zs[i + 1] : ref[2];
    std::vector<Point> slab;
    for (const auto& p : points)
      if (p[2] >= z_hi) slab.push_back({p[0], p[1]});
    volume += detail::hypervolume_2d(std::move(slab), {ref[0], ref[1]}) * (z_hi - z_lo);
  }
  return volume;
}

// Spread statistic: population standard deviation of nearest-neighbor L1
// distances across the front. Undefined for fewer than two points (nullopt).
inline std::optional<double> spacing(const std::vector<Point>& front) {
  if (front.size() < 2) return std::nullopt;
  std::vector<double> nearest(front.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < front.size(); ++i)
    for (std::size_t j = 0; j < front.size(); ++j) {
      if (i == j) continue;
      if (front[i].size() != front[j].size())
        throw std::invalid_argument("spacing: ragged points");
      double d = 0.0;
      for (std::size_t k = 0; k < front[i].size(); ++k)
        d += std::abs(front[i][k] - front[j][k]);
      nearest[i] = std::min(nearest[i], d);
    }
  double mean = 0.0;
  for (double d : nearest) mean += d;
  mean /= static_cast<double>(nearest.size());
  double var = 0.0;
  for (double d : nearest) var += (d - mean) * (d - mean);
  var /= static_cast<double>(nearest.size());
  return std::sqrt(var);
}

inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

// Pinned hypervolume reference point per environment.
inline Point reference_point(const std::string& env_name) {
  if (env_name == "fork") return {-60.0, -60.0};
  if (env_name == "dst") return {0.0, -50.0};
  if (env_name == "resource") return {0.0, 0.0, -1.5};
  if (env_name == "matrix") return {-10.0, -10.0};
  throw std::invalid_argument("no hypervolume reference point for environment '" + env_name +
                              "'");
}

// ---------------------------------------------------------------------------
// Preference grids: K=1 is the single point (1); K=2 walks w from 0 to 1 in
// n points; K=3 enumerates the integer compositions at edge resolution n.

inline std::vector<Point> omega_grid(int n_objectives, int n) {
  if (n < 1) throw std::invalid_argument("omega_grid: n must be >= 1");
  std::vector<Point> grid;
  if (n_objectives == 1) {
    grid.push_back({1.0});
  } else if (n_objectives == 2) {
    if (n == 1) {
      grid.push_back({0.5, 0.5});
    } else {
      for (int i = 0; i < n; ++i) {
        double w = static_cast<double>(i) / static_cast<double>(n - 1);
        grid.push_back({1.0 - w, w});
      }
    }
  } else if (n_objectives == 3) {
    const int r = std::max(n - 1, 1);
    for (int i = 0; i <= r; ++i)
      for (int j = 0; j <= r - i; ++j)
        grid.push_back({static_cast<double>(i) / r, static_cast<double>(j) / r,
                        static_cast<double>(r - i - j) / r});
  } else {
    throw std::invalid_argument("omega_grid: only 1-3 objectives supported");
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Preference sweep: for each preference vector, roll out the conditioned
// policy and average returns; then summarize the swept returns as an
// empirical front.

struct SweepPoint {
  Point omega;
  Point mean_return;
  int episodes = 0;
};

struct SweepSummary {
  std::vector<SweepPoint> points;
  std::vector<Point> front;  // non-dominated mean returns (rounded dedup)
  double hv = 0.0;
  std::optional<double> spread;
  int n_nondominated = 0;
};

// Factory: preference vector -> policy conditioned on it.
using ConditionedPolicyFactory = std::function<envs::PolicyFn(const Point&)>;

inline Point round_point(const Point& p, double quantum = 1e-6) {
  Point r(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) r[i] = std::round(p[i] / quantum) * quantum;
  return r;
}

inline SweepSummary preference_sweep(const envs::DiscreteEnv& env,
                                     const ConditionedPolicyFactory& make_policy,
                                     const std::vector<Point>& omegas, int episodes_per,
                                     Rng& rng, const Point& ref) {
  if (episodes_per < 1)
    throw std::invalid_argument("preference_sweep: episodes_per must be >= 1");
  SweepSummary out;
  std::vector<Point> rounded;
  for (const auto& omega : omegas) {
    if (static_cast<int>(omega.size()) != env.n_objectives)
      throw std::invalid_argument("preference_sweep: omega arity mismatch");
    envs::PolicyFn policy = make_policy(omega);
    Point mean(env.n_objectives, 0.0);
    for (int e = 0; e < episodes_per; ++e) {
      auto ret = envs::rollout(env, policy, rng).total_return();
      for (int k = 0; k < env.n_objectives; ++k) mean[k] += ret[k];
    }
    for (double& v : mean) v /= episodes_per;
    out.points.push_back({omega, mean, episodes_per});
    rounded.push_back(round_point(mean));
  }
  out.front = pareto_filter(rounded);
  out.n_nondominated = static_cast<int>(out.front.size());
  out.hv = hypervolume(out.front, ref);
  out.spread = spacing(out.front);
  return out;
}

// ---------------------------------------------------------------------------
// Visitation heatmap over the environment's display grid: counts of states
// entered (including start states) across traces.

inline std::vector<std::vector<long>> visitation_heatmap(
    const envs::DiscreteEnv& env, const std::vector<envs::EpisodeTrace>& traces) {
  if (!env.grid)
    throw std::invalid_argument("visitation_heatmap: environment '" + env.name +
                                "' has no grid layout");
  const auto& grid = *env.grid;
  std::vector<std::vector<long>> counts(grid.rows, std::vector<long>(grid.cols, 0));
  auto visit = [&](int state) {
    auto [r, c] = grid.cell_of_state(state);
    counts.at(r).at(c) += 1;
  };
  for (const auto& trace : traces) {
    if (trace.steps.empty()) continue;
    visit(trace.steps.front().state);
    for (const auto& step : trace.steps) visit(step.next_state);
  }
  return counts;
}

// ---------------------------------------------------------------------------
// CSV renderings (deterministic text).

inline std::string sweep_to_csv(const SweepSummary& sweep) {
  if (sweep.points.empty()) return "";
  std::string out;
  const std::size_t k_omega = sweep.points.front().omega.size();
  const std::size_t k_ret = sweep.points.front().mean_return.size();
  for (std::size_t k = 0; k < k_omega; ++k) out += "omega" + std::to_string(k) + ",";
  for (std::size_t k = 0; k < k_ret; ++k) out += "return" + std::to_string(k) + ",";
  out += "episodes\n";
  for (const auto& pt : sweep.points) {
    for (double w : pt.omega) out += io::format_double(w) + ",";
    for (double r : pt.mean_return) out += io::format_double(r) + ",";
    out += std::to_string(pt.episodes) + "\n";
  }
  return out;
}

inline std::string heatmap_to_csv(const std::vector<std::vector<long>>& counts) {
  std::string out;
  for (const auto& row : counts) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out.push_back(',');
      out += std::to_string(row[c]);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace qdfm::metrics
