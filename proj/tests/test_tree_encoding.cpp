#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "gmatt/grammar.hpp"
#include "gmatt/rng.hpp"
#include "gmatt/tree_encoding.hpp"

using namespace gmatt;

namespace {

// Synthetic tree builder for shape-only tests: parents[i] < i, parents[0] = -1.
GrammarTree tree_from_parents(const std::vector<int>& parents) {
  GrammarTree t;
  t.nodes.resize(parents.size());
  for (std::size_t i = 0; i < parents.size(); ++i) {
    t.nodes[i].symbol = 0;
    t.nodes[i].parent = parents[i];
    if (parents[i] >= 0) t.nodes[parents[i]].children.push_back(static_cast<int>(i));
  }
  t.root = 0;
  return t;
}

}  // namespace

TEST_CASE("edge_path: root is the zero vector") {
  GrammarTree t = parse("CC=C");
  NodePath p = edge_path(t, t.root, 8);
  CHECK(p.values == std::vector<int>(8, 0));
}

TEST_CASE("edge_path: only child at depth 1") {
  GrammarTree t = parse("CC=C");
  // The root's single child is the top CHAIN node.
  int chain = t.nodes[t.root].children[0];
  NodePath p = edge_path(t, chain, 8);
  CHECK(p.values == std::vector<int>{1, 0, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("edge_path: third child prepends 3 to the parent path") {
  // Root with one child that has three children.
  GrammarTree t = tree_from_parents({-1, 0, 1, 1, 1});
  NodePath p = edge_path(t, 4, 8);
  CHECK(p.values == std::vector<int>{3, 1, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("edge_path: propene bond node per the paper figure") {
  GrammarTree t = parse("CC=C");
  const GrammarSpec& g = GrammarSpec::smiles();
  // bond is the second child of the top chain: path (2, 1, 0, ...).
  int bond = -1;
  for (int n = 0; n < t.size(); ++n)
    if (g.display_name(t.nodes[n].symbol) == "bond") bond = n;
  REQUIRE(bond != -1);
  NodePath p = edge_path(t, bond, 8);
  CHECK(p.values == std::vector<int>{2, 1, 0, 0, 0, 0, 0, 0});
}

TEST_CASE("edge_path: depth over L throws") {
  GrammarTree t = tree_from_parents({-1, 0, 1, 2, 3});
  CHECK_THROWS_AS(edge_path(t, 4, 3), DepthExceededError);
  CHECK_NOTHROW(edge_path(t, 4, 4));
}

TEST_CASE("edge_encoding: x=0 gives the (0,1) pattern") {
  auto e = edge_encoding<double>(0, 4);
  CHECK(e(0) == 0.0);
  CHECK(e(1) == 1.0);
  CHECK(e(2) == 0.0);
  CHECK(e(3) == 1.0);
}

TEST_CASE("edge_encoding: direct evaluation at x=1, d=2") {
  auto e = edge_encoding<double>(1, 2);
  // w_0 = 1
  CHECK(e(0) == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(e(1) == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
}

TEST_CASE("edge_encoding: sin/cos parity at x=2, d=4") {
  auto e = edge_encoding<double>(2, 4);
  REQUIRE(e.size() == 4);
  double w0 = 1.0, w1 = std::pow(10000.0, -0.5);
  CHECK(e(0) == doctest::Approx(std::sin(w0 * 2)).epsilon(1e-15));
  CHECK(e(1) == doctest::Approx(std::cos(w0 * 2)).epsilon(1e-15));
  CHECK(e(2) == doctest::Approx(std::sin(w1 * 2)).epsilon(1e-15));
  CHECK(e(3) == doctest::Approx(std::cos(w1 * 2)).epsilon(1e-15));
}

TEST_CASE("tree_positional_encoding: concatenation of edge encodings") {
  GrammarTree t = parse("CC=C");
  EncodingConfig cfg{8, 4};
  const GrammarSpec& g = GrammarSpec::smiles();
  int bond = -1;
  for (int n = 0; n < t.size(); ++n)
    if (g.display_name(t.nodes[n].symbol) == "bond") bond = n;
  auto te = tree_positional_encoding<double>(t, bond, cfg);
  REQUIRE(te.size() == 32);
  NodePath p = edge_path(t, bond, cfg.L);
  for (int l = 0; l < cfg.L; ++l) {
    auto ee = edge_encoding<double>(p.values[l], cfg.d);
    for (int i = 0; i < cfg.d; ++i) CHECK(te(l * cfg.d + i) == ee(i));
  }
}

TEST_CASE("tree_positional_encoding: root repeats the zero-edge pattern") {
  GrammarTree t = parse("C");
  EncodingConfig cfg{8, 4};
  auto te = tree_positional_encoding<double>(t, t.root, cfg);
  for (int l = 0; l < cfg.L; ++l) {
    CHECK(te(l * 4 + 0) == 0.0);
    CHECK(te(l * 4 + 1) == 1.0);
    CHECK(te(l * 4 + 2) == 0.0);
    CHECK(te(l * 4 + 3) == 1.0);
  }
}

TEST_CASE("tree_positional_encoding: default config gives d_model = 256") {
  GrammarTree t = parse("CC=C");
  EncodingConfig cfg;
  auto te = tree_positional_encoding<double>(t, 3, cfg);
  CHECK(te.size() == 256);
}

TEST_CASE("encode_tree: shape and row correspondence for propene") {
  GrammarTree t = parse("CC=C");
  EncodingConfig cfg{8, 4};
  auto m = encode_tree<double>(t, cfg);
  CHECK(m.rows() == 18);  // parse of CC=C yields 18 nodes under the full grammar
  CHECK(m.cols() == 32);
  auto order = preorder_nodes(t);
  CHECK(order[0] == t.root);
  CHECK((m.row(0) - tree_positional_encoding<double>(t, t.root, cfg)).cwiseAbs().maxCoeff() ==
        0.0);
  // Sibling leaves differ.
  CHECK(m.row(7) != m.row(11));
  // All components within [-1, 1].
  CHECK(m.maxCoeff() <= 1.0);
  CHECK(m.minCoeff() >= -1.0);
}

TEST_CASE("property: uniqueness and parent-prefix shift on random trees") {
  Rng rng(7);
  EncodingConfig cfg{16, 4};
  for (int trial = 0; trial < 50; ++trial) {
    int n = 2 + static_cast<int>(rng.below(60));
    std::vector<int> parents{-1};
    std::vector<int> depth{0};
    for (int i = 1; i < n; ++i) {
      int p = static_cast<int>(rng.below(i));
      while (depth[p] + 1 >= cfg.L) p = parents[p];
      parents.push_back(p);
      depth.push_back(depth[p] + 1);
    }
    GrammarTree t = tree_from_parents(parents);

    std::set<std::vector<int>> paths;
    for (int v = 0; v < n; ++v) {
      NodePath pv = edge_path(t, v, cfg.L);
      CHECK(paths.insert(pv.values).second);  // intra-tree uniqueness
      if (parents[v] != -1) {
        NodePath pp = edge_path(t, parents[v], cfg.L);
        CHECK(pv.values[0] == t.sibling_index(v));
        for (int l = 1; l < cfg.L; ++l) CHECK(pv.values[l] == pp.values[l - 1]);
        // Encoding shares d*(L-1) trailing dims with the parent's leading dims.
        auto ev = tree_positional_encoding<double>(t, v, cfg);
        auto ep = tree_positional_encoding<double>(t, parents[v], cfg);
        for (int k = 0; k < cfg.d * (cfg.L - 1); ++k) CHECK(ev(cfg.d + k) == ep(k));
      }
    }
  }
}
