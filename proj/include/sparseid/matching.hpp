#pragma once

#include <queue>
#include <vector>

namespace sparseid {

/// Hopcroft-Karp maximum bipartite matching on a rows-to-columns graph.
/// adj[u] lists the columns adjacent to row u. O(E * sqrt(V)).
class BipartiteMatcher {
 public:
  BipartiteMatcher(int n_left, int n_right, std::vector<std::vector<int>> adj)
      : n_left_(n_left), n_right_(n_right), adj_(std::move(adj)) {}

  int max_matching() {
    match_left_.assign(n_left_, kFree);
    match_right_.assign(n_right_, kFree);
    dist_.assign(n_left_, kInf);
    int matched = 0;
    while (bfs_layers()) {
      for (int u = 0; u < n_left_; ++u)
        if (match_left_[u] == kFree && dfs_augment(u)) ++matched;
    }
    return matched;
  }

  const std::vector<int>& row_match() const { return match_left_; }

 private:
  static constexpr int kFree = -1;
  static constexpr int kInf = 1 << 30;

  bool bfs_layers() {
    std::queue<int> q;
    for (int u = 0; u < n_left_; ++u) {
      if (match_left_[u] == kFree) {
        dist_[u] = 0;
        q.push(u);
      } else {
        dist_[u] = kInf;
      }
    }
    bool reachable_free = false;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int v : adj_[u]) {
        const int w = match_right_[v];
        if (w == kFree) {
          reachable_free = true;
        } else if (dist_[w] == kInf) {
          dist_[w] = dist_[u] + 1;
          q.push(w);
        }
      }
    }
    return reachable_free;
  }

  bool dfs_augment(int u) {
    for (int v : adj_[u]) {
      const int w = match_right_[v];
      if (w == kFree || (dist_[w] == dist_[u] + 1 && dfs_augment(w))) {
        match_left_[u] = v;
        match_right_[v] = u;
        return true;
      }
    }
    dist_[u] = kInf;
    return false;
  }

  int n_left_;
  int n_right_;
  std::vector<std::vector<int>> adj_;
  std::vector<int> match_left_;
  std::vector<int> match_right_;
  std::vector<int> dist_;
};

}  // namespace sparseid
