#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <vector>

#include "oadfl/topology.hpp"

using namespace oadfl;

namespace {

// Test-local connectivity oracle, independent of the library's BFS.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

bool connected_oracle(const TopologyGraph& g) {
  UnionFind uf(g.num_devices);
  for (int i = 0; i < g.num_devices; ++i)
    for (int j = i + 1; j < g.num_devices; ++j)
      if (g.edge(i, j)) uf.unite(i, j);
  for (int i = 1; i < g.num_devices; ++i)
    if (uf.find(i) != uf.find(0)) return false;
  return true;
}

int absent_pairs(const TopologyGraph& g) {
  int absent = 0;
  for (int i = 0; i < g.num_devices; ++i)
    for (int j = i + 1; j < g.num_devices; ++j)
      if (!g.edge(i, j)) ++absent;
  return absent;
}

}  // namespace

TEST_CASE("zero sparsity yields the complete graph") {
  for (std::uint64_t seed : {1ull, 7ull, 123ull}) {
    const auto g = generate_random(30, 0.0, seed);
    REQUIRE(absent_pairs(g) == 0);
    for (int i = 0; i < 30; ++i) REQUIRE(g.degree(i) == 29);
  }
  const auto tiny = generate_random(2, 0.0, 5);
  REQUIRE(tiny.edge(0, 1));
  REQUIRE(tiny.edge(0, 0));
  REQUIRE(tiny.edge(1, 1));
}

TEST_CASE("requested sparsity is met exactly and the graph stays connected") {
  const auto g = generate_random(10, 0.6, 42);
  REQUIRE(absent_pairs(g) == 27);  // 0.6 * 45 unordered pairs
  REQUIRE(connected_oracle(g));
  REQUIRE(is_connected(g));
}

TEST_CASE("random graphs are symmetric, connected, self-looped across seeds") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto g = generate_random(12, 0.5, seed);
    for (int i = 0; i < g.num_devices; ++i) {
      REQUIRE(g.edge(i, i));
      for (int j = 0; j < g.num_devices; ++j) REQUIRE(g.edge(i, j) == g.edge(j, i));
    }
    REQUIRE(connected_oracle(g));
  }
}

TEST_CASE("infeasible sparsity is rejected") {
  // 95% of 45 pairs absent leaves 2 edges for 10 devices.
  REQUIRE_THROWS_AS(generate_random(10, 0.95, 1), InfeasibleSparsity);
  REQUIRE_THROWS_AS(generate_random(5, 1.0, 1), InfeasibleSparsity);
}

TEST_CASE("named topologies have their standard structure") {
  const auto ring = generate_named(NamedTopology::ring, 4);
  for (int i = 0; i < 4; ++i) REQUIRE(ring.degree(i) == 2);

  const auto star = generate_named(NamedTopology::star, 5);
  REQUIRE(star.degree(0) == 4);
  for (int i = 1; i < 5; ++i) {
    REQUIRE(star.degree(i) == 1);
    REQUIRE(star.edge(0, i));
  }

  const auto line = generate_named(NamedTopology::line, 3);
  REQUIRE(line.edge(0, 1));
  REQUIRE(line.edge(1, 2));
  REQUIRE_FALSE(line.edge(0, 2));
}

TEST_CASE("neighbor sets are ascending and exclude self") {
  const auto complete = generate_named(NamedTopology::complete, 3);
  REQUIRE(neighbor_set(complete, 0) == std::vector<int>{1, 2});

  const auto ring = generate_named(NamedTopology::ring, 4);
  REQUIRE(neighbor_set(ring, 0) == std::vector<int>{1, 3});

  const auto line = generate_named(NamedTopology::line, 3);
  REQUIRE(neighbor_set(line, 1) == std::vector<int>{0, 2});

  REQUIRE_THROWS_AS(neighbor_set(line, 3), std::out_of_range);
}

TEST_CASE("edge-list files round-trip") {
  const auto g = generate_random(8, 0.4, 99);
  const std::string path = "test_topology_roundtrip.txt";
  save_topology(g, path);
  const auto back = load_topology(path);
  REQUIRE(back.num_devices == g.num_devices);
  REQUIRE(back.adjacency == g.adjacency);
  std::remove(path.c_str());
}
