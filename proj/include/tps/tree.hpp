#pragma once

#include <bit>
#include <ostream>
#include <string>
#include <vector>

#include "tps/common.hpp"

namespace tps {

// Node of the auxiliary binary tree over time indices. Spans [j, l]; a leaf
// iff j == l. Non-leaf nodes split at `cut` into children [j, cut-1] and
// [cut, l]; the left child always spans an exact power of two, so the left
// subtree is a complete binary tree.
struct TreeNode {
  int j = 0;
  int l = 0;
  int cut = -1;
  int left = -1;
  int right = -1;

  bool leaf() const { return j == l; }
};

struct Tree {
  std::vector<TreeNode> nodes;
  int root = 0;
  int T = 0;
  int height = 1;                // number of levels
  std::vector<int> post_order;   // children always precede their parent
};

// Split point for the span [j, l]: j + 2^p with 2^p the half of the smallest
// power of two covering the span. Integer bit ops only; no floating-point
// log at power-of-two spans.
inline int cut_point(int j, int l) {
  if (j < 0 || j >= l) throw error("cut_point: need 0 <= j < l");
  const auto span = static_cast<unsigned>(l - j + 1);
  return j + static_cast<int>(std::bit_ceil(span) / 2);
}

inline Tree build_tree(int T) {
  if (T < 0) throw error("build_tree: T must be >= 0");
  Tree tree;
  tree.T = T;
  tree.nodes.reserve(2 * static_cast<std::size_t>(T) + 1);
  // Iterative build; node ids are assigned in pre-order.
  struct Item {
    int j, l, parent;
    bool is_left;
  };
  std::vector<Item> stack{{0, T, -1, false}};
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{it.j, it.l});
    if (it.parent >= 0) {
      (it.is_left ? tree.nodes[it.parent].left : tree.nodes[it.parent].right) = id;
    }
    if (it.j < it.l) {
      const int k = cut_point(it.j, it.l);
      tree.nodes[id].cut = k;
      // Right pushed first so the left child pops (and gets its id) first.
      stack.push_back({k, it.l, id, false});
      stack.push_back({it.j, k - 1, id, true});
    }
  }
  tree.root = 0;
  tree.height = 1 + static_cast<int>(std::bit_width(static_cast<unsigned>(T)));
  // Post-order schedule: every node is visited exactly once, after both
  // children.
  tree.post_order.reserve(tree.nodes.size());
  std::vector<std::pair<int, bool>> walk{{tree.root, false}};
  while (!walk.empty()) {
    auto [id, expanded] = walk.back();
    walk.pop_back();
    const TreeNode& nd = tree.nodes[id];
    if (expanded || nd.leaf()) {
      tree.post_order.push_back(id);
    } else {
      walk.emplace_back(id, true);
      walk.emplace_back(nd.right, false);
      walk.emplace_back(nd.left, false);
    }
  }
  return tree;
}

inline void dump_tree(const Tree& tree, std::ostream& os) {
  struct Item {
    int id, depth;
  };
  std::vector<Item> stack{{tree.root, 0}};
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    const TreeNode& nd = tree.nodes[it.id];
    os << std::string(2 * static_cast<std::size_t>(it.depth), ' ');
    if (nd.leaf()) {
      os << "[" << nd.j << "]\n";
    } else {
      os << "[" << nd.j << ":" << nd.l << "] cut=" << nd.cut << "\n";
      stack.push_back({nd.right, it.depth + 1});
      stack.push_back({nd.left, it.depth + 1});
    }
  }
}

}  // namespace tps
