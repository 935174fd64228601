#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "oadfl/common.hpp"
#include "oadfl/rng.hpp"

namespace oadfl {

// Undirected communication graph. The diagonal is always set: a device always
// hears itself through its own mixing weight, not through the channel.
struct TopologyGraph {
  int num_devices = 0;
  std::vector<std::uint8_t> adjacency;  // row-major M*M

  bool edge(int i, int j) const {
    return adjacency[static_cast<std::size_t>(i) * num_devices + j] != 0;
  }
  void set_edge(int i, int j, bool on = true) {
    adjacency[static_cast<std::size_t>(i) * num_devices + j] = on ? 1 : 0;
    adjacency[static_cast<std::size_t>(j) * num_devices + i] = on ? 1 : 0;
  }
  int degree(int i) const {
    int d = 0;
    for (int j = 0; j < num_devices; ++j)
      if (j != i && edge(i, j)) ++d;
    return d;
  }
};

inline TopologyGraph make_empty_graph(int num_devices) {
  if (num_devices < 1) throw InvalidMatrix("graph needs at least one device");
  TopologyGraph g;
  g.num_devices = num_devices;
  g.adjacency.assign(static_cast<std::size_t>(num_devices) * num_devices, 0);
  for (int i = 0; i < num_devices; ++i) g.set_edge(i, i);
  return g;
}

inline std::vector<int> neighbor_set(const TopologyGraph& g, int i) {
  if (i < 0 || i >= g.num_devices)
    throw std::out_of_range("device index out of range");
  std::vector<int> out;
  for (int j = 0; j < g.num_devices; ++j)
    if (j != i && g.edge(i, j)) out.push_back(j);
  return out;
}

inline bool is_connected(const TopologyGraph& g) {
  const int m = g.num_devices;
  std::vector<char> seen(m, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    const int i = q.front();
    q.pop();
    for (int j = 0; j < m; ++j) {
      if (j != i && g.edge(i, j) && !seen[j]) {
        seen[j] = 1;
        ++count;
        q.push(j);
      }
    }
  }
  return count == m;
}

enum class NamedTopology { complete, ring, line, star };

inline TopologyGraph generate_named(NamedTopology kind, int num_devices) {
  if (num_devices < 2)
    throw InvalidMatrix("named topologies need at least two devices");
  TopologyGraph g = make_empty_graph(num_devices);
  switch (kind) {
    case NamedTopology::complete:
      for (int i = 0; i < num_devices; ++i)
        for (int j = i + 1; j < num_devices; ++j) g.set_edge(i, j);
      break;
    case NamedTopology::ring:
      for (int i = 0; i < num_devices; ++i)
        g.set_edge(i, (i + 1) % num_devices);
      break;
    case NamedTopology::line:
      for (int i = 0; i + 1 < num_devices; ++i) g.set_edge(i, i + 1);
      break;
    case NamedTopology::star:
      for (int j = 1; j < num_devices; ++j) g.set_edge(0, j);
      break;
  }
  return g;
}

// Sparsity-controlled random connected graph. `sparsity` is the fraction of
// absent off-diagonal unordered pairs, rounded to the nearest realizable pair
// count. A random spanning tree is laid down first, then the remaining edges
// are added uniformly at random, so connectivity holds by construction.
inline TopologyGraph generate_random(int num_devices, double sparsity,
                                     std::uint64_t seed) {
  if (num_devices < 2)
    throw InvalidMatrix("random topology needs at least two devices");
  if (sparsity < 0.0 || sparsity >= 1.0)
    throw InfeasibleSparsity("sparsity must lie in [0, 1)");
  const int m = num_devices;
  const long total_pairs = static_cast<long>(m) * (m - 1) / 2;
  const long absent = std::lround(sparsity * static_cast<double>(total_pairs));
  const long present = total_pairs - absent;
  if (present < m - 1)
    throw InfeasibleSparsity(
        "no connected graph with " + std::to_string(present) + " of " +
        std::to_string(total_pairs) + " pairs present (need >= " +
        std::to_string(m - 1) + ")");

  auto rng = make_rng(seed, "topology");
  TopologyGraph g = make_empty_graph(m);

  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int k = 1; k < m; ++k) {
    std::uniform_int_distribution<int> pick(0, k - 1);
    g.set_edge(order[k], order[pick(rng)]);
  }

  std::vector<std::pair<int, int>> missing;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (!g.edge(i, j)) missing.emplace_back(i, j);
  std::shuffle(missing.begin(), missing.end(), rng);
  long to_add = present - (m - 1);
  for (long k = 0; k < to_add; ++k)
    g.set_edge(missing[static_cast<std::size_t>(k)].first,
               missing[static_cast<std::size_t>(k)].second);
  return g;
}

inline void save_topology(const TopologyGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "M=" << g.num_devices << "\n";
  for (int i = 0; i < g.num_devices; ++i)
    for (int j = i + 1; j < g.num_devices; ++j)
      if (g.edge(i, j)) out << i << " " << j << "\n";
}

inline TopologyGraph load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("M=", 0) != 0)
    throw std::runtime_error(path + ": expected header line M=<int>");
  const int m = std::stoi(header.substr(2));
  TopologyGraph g = make_empty_graph(m);
  int i, j;
  while (in >> i >> j) {
    if (i < 0 || i >= m || j < 0 || j >= m)
      throw std::runtime_error(path + ": edge index out of range");
    g.set_edge(i, j);
  }
  return g;
}

}  // namespace oadfl
