// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/common.hpp"

#include <algorithm>
#include <limits>
#include <memory>

namespace quantemu {

/**
 * Immutable kd-tree over a point set with exact nearest-neighbor queries.
 *
 * Each non-leaf node splits on the dimension of maximum spread within its
 * subtree, with the median element stored at the node.  Points on or below the
 * splitting value go left, points strictly above go right.  Removal rebuilds
 * only the subtree rooted at the removed node; untouched branches are shared
 * between the old and new tree values.
 */
class KdTree {
 public:
  struct QueryResult {
    Vector point;
    int index = -1;  ///< index into the point set the tree was built from
    double dist2 = 0.0;
  };

  KdTree() = default;

  static KdTree build(const std::vector<Vector>& points) {
    require(!points.empty(), "KdTree::build: point set must be non-empty");
    std::vector<Item> items;
    items.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      require(points[i].size() == points.front().size(), "KdTree::build: mixed dimensions");
      items.push_back({points[i], int(i)});
    }
    KdTree tree;
    tree.root_ = build_rec(items, 0, items.size());
    tree.size_ = points.size();
    return tree;
  }

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  /// Exact nearest neighbor; equidistant points resolve to the lowest index.
  QueryResult query(const Vector& v) const {
    require(root_ != nullptr, "KdTree::query: tree is empty");
    QueryResult best;
    best.dist2 = std::numeric_limits<double>::infinity();
    search(root_.get(), v, best);
    return best;
  }

  bool contains(int index) const { return find_node(root_.get(), index) != nullptr; }

  /// New tree without the point of the given index.  The subtree rooted at
  /// that node is collected and rebuilt; the path to it is copied and the
  /// rest of the structure is shared.
  KdTree remove(int index) const {
    require(root_ != nullptr, "KdTree::remove: tree is empty");
    bool found = false;
    NodePtr new_root = remove_rec(root_, index, found);
    require(found, "KdTree::remove: index not present");
    KdTree tree;
    tree.root_ = std::move(new_root);
    tree.size_ = size_ - 1;
    return tree;
  }

 private:
  struct Node;
  using NodePtr = std::shared_ptr<const Node>;

  struct Node {
    Vector point;
    int index;
    int split_dim;
    NodePtr left;
    NodePtr right;
  };

  struct Item {
    Vector point;
    int index;
  };

  static NodePtr build_rec(std::vector<Item>& items, std::size_t lo, std::size_t hi) {
    if (lo >= hi) return nullptr;
    const Eigen::Index dims = items[lo].point.size();

    int split_dim = 0;
    double best_spread = -1.0;
    for (Eigen::Index d = 0; d < dims; ++d) {
      double mn = items[lo].point[d], mx = mn;
      for (std::size_t i = lo + 1; i < hi; ++i) {
        mn = std::min(mn, items[i].point[d]);
        mx = std::max(mx, items[i].point[d]);
      }
      if (mx - mn > best_spread) {
        best_spread = mx - mn;
        split_dim = int(d);
      }
    }

    std::sort(items.begin() + long(lo), items.begin() + long(hi),
              [split_dim](const Item& a, const Item& b) {
                if (a.point[split_dim] != b.point[split_dim])
                  return a.point[split_dim] < b.point[split_dim];
                return a.index < b.index;
              });

    // Median node, pushed to the last duplicate of its coordinate so the
    // right subtree is strictly above the splitting value.
    std::size_t mid = lo + (hi - lo) / 2;
    while (mid + 1 < hi && items[mid + 1].point[split_dim] == items[mid].point[split_dim]) ++mid;

    auto node = std::make_shared<Node>();
    node->point = items[mid].point;
    node->index = items[mid].index;
    node->split_dim = split_dim;
    node->left = build_rec(items, lo, mid);
    node->right = build_rec(items, mid + 1, hi);
    return node;
  }

  static void search(const Node* node, const Vector& v, QueryResult& best) {
    if (node == nullptr) return;
    const double d2 = (node->point - v).squaredNorm();
    if (d2 < best.dist2 || (d2 == best.dist2 && node->index < best.index)) {
      best.point = node->point;
      best.index = node->index;
      best.dist2 = d2;
    }
    const double diff = v[node->split_dim] - node->point[node->split_dim];
    const Node* near = diff <= 0.0 ? node->left.get() : node->right.get();
    const Node* far = diff <= 0.0 ? node->right.get() : node->left.get();
    search(near, v, best);
    if (diff * diff <= best.dist2) search(far, v, best);
  }

  static const Node* find_node(const Node* node, int index) {
    if (node == nullptr) return nullptr;
    if (node->index == index) return node;
    if (const Node* hit = find_node(node->left.get(), index)) return hit;
    return find_node(node->right.get(), index);
  }

  static void collect(const NodePtr& node, std::vector<Item>& out) {
    if (node == nullptr) return;
    out.push_back({node->point, node->index});
    collect(node->left, out);
    collect(node->right, out);
  }

  static NodePtr remove_rec(const NodePtr& node, int index, bool& found) {
    if (node == nullptr) return nullptr;
    if (node->index == index) {
      found = true;
      std::vector<Item> survivors;
      collect(node->left, survivors);
      collect(node->right, survivors);
      return build_rec(survivors, 0, survivors.size());
    }
    NodePtr new_left = remove_rec(node->left, index, found);
    if (found) {
      auto copy = std::make_shared<Node>(*node);
      copy->left = std::move(new_left);
      return copy;
    }
    NodePtr new_right = remove_rec(node->right, index, found);
    if (found) {
      auto copy = std::make_shared<Node>(*node);
      copy->right = std::move(new_right);
      return copy;
    }
    return node;
  }

  NodePtr root_;
  std::size_t size_ = 0;
};

}  // namespace quantemu
