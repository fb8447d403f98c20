#pragma once

#include <cmath>
#include <vector>

#include "gmatt/errors.hpp"
#include "gmatt/grammar.hpp"
#include "gmatt/types.hpp"

namespace gmatt {

// Tree positional encoding configuration: every node position is described by
// an edge path of length L whose elements are each expanded into a d-wide
// sinusoidal edge encoding, giving a d*L = d_model wide vector.
struct EncodingConfig {
  int L = 64;
  int d = 4;

  int d_model() const { return d * L; }
  void validate() const {
    if (d <= 0 || d % 2 != 0) throw ShapeMismatchError("edge encoding dim d must be even");
    if (L <= 0) throw ShapeMismatchError("path length L must be positive");
  }
};

// Edge path of a node: element 0 is the node's 1-based sibling index, the
// rest is the parent's path shifted right by one. The root path is all zeros
// and 0 in a tail position means "no edge".
struct NodePath {
  std::vector<int> values;
  int node = -1;
};

inline NodePath edge_path(const GrammarTree& tree, int node, int L) {
  if (node < 0 || node >= tree.size()) throw IndexOutOfRangeError("edge_path: bad node index");
  NodePath p;
  p.node = node;
  p.values.assign(L, 0);
  int depth = 0;
  for (int v = node; tree.nodes[v].parent != -1; v = tree.nodes[v].parent) {
    if (depth >= L) throw DepthExceededError(tree.depth(node), L);
    ++depth;
  }
  int slot = 0;
  for (int v = node; tree.nodes[v].parent != -1; v = tree.nodes[v].parent)
    p.values[slot++] = tree.sibling_index(v);
  return p;
}

// Interleaved sinusoidal encoding of one edge-path element:
// out[2i] = sin(w_i * x), out[2i+1] = cos(w_i * x), w_i = 10000^(-2i/d).
template <class S>
RowVec<S> edge_encoding(int x, int d) {
  RowVec<S> out(d);
  for (int i = 0; i < d / 2; ++i) {
    double w = std::pow(10000.0, -2.0 * i / d);
    out(2 * i) = static_cast<S>(std::sin(w * x));
    out(2 * i + 1) = static_cast<S>(std::cos(w * x));
  }
  return out;
}

// Concatenation of the edge encodings along the node's edge path.
template <class S>
RowVec<S> tree_positional_encoding(const GrammarTree& tree, int node, const EncodingConfig& cfg) {
  cfg.validate();
  NodePath p = edge_path(tree, node, cfg.L);
  RowVec<S> out(cfg.d_model());
  for (int l = 0; l < cfg.L; ++l) out.segment(l * cfg.d, cfg.d) = edge_encoding<S>(p.values[l], cfg.d);
  return out;
}

// Row k is the tree positional encoding of the k-th pre-order node.
template <class S>
Mat<S> encode_tree(const GrammarTree& tree, const EncodingConfig& cfg) {
  cfg.validate();
  std::vector<int> order = preorder_nodes(tree);
  Mat<S> out(order.size(), cfg.d_model());
  for (std::size_t k = 0; k < order.size(); ++k)
    out.row(k) = tree_positional_encoding<S>(tree, order[k], cfg);
  return out;
}

}  // namespace gmatt
