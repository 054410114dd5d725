#pragma once

// Small directed-graph helpers over dense 0/1 adjacency matrices.
// Convention: A(i, j) = 1 encodes the edge i -> j.

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace metacd {

using Adjacency = Eigen::MatrixXi;

/// Kahn's algorithm. Empty optional when the graph has a cycle.
inline std::optional<std::vector<int>> topological_order(const Adjacency& a) {
  const int d = static_cast<int>(a.rows());
  std::vector<int> indeg(d, 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (a(i, j) != 0) ++indeg[j];
  std::vector<int> order;
  order.reserve(d);
  std::vector<int> ready;
  for (int j = d - 1; j >= 0; --j)
    if (indeg[j] == 0) ready.push_back(j);
  while (!ready.empty()) {
    const int v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (int j = d - 1; j >= 0; --j) {
      if (a(v, j) != 0 && --indeg[j] == 0) ready.push_back(j);
    }
  }
  if (static_cast<int>(order.size()) != d) return std::nullopt;
  return order;
}

inline bool is_acyclic(const Adjacency& a) { return topological_order(a).has_value(); }

inline std::vector<int> parents_of(const Adjacency& a, int i) {
  std::vector<int> out;
  for (int j = 0; j < a.rows(); ++j)
    if (a(j, i) != 0) out.push_back(j);
  return out;
}

/// reach(i, j) = 1 iff there is a directed path of length >= 1 from i to j.
inline Adjacency reachability(const Adjacency& a) {
  const int d = static_cast<int>(a.rows());
  Adjacency r = (a.array() != 0).cast<int>();
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      if (r(i, k))
        for (int j = 0; j < d; ++j)
          if (r(k, j)) r(i, j) = 1;
  return r;
}

inline int edge_count(const Adjacency& a) { return static_cast<int>((a.array() != 0).count()); }

}  // namespace metacd
